use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::matrix::Matrix;

/// A trainable tensor with its gradient accumulator and Adam moments.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Matrix,
    pub grad: Matrix,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Matrix) -> Param {
        let (r, c) = value.shape();
        let n = value.len();
        Param { name: name.into(), value, grad: Matrix::zeros(r, c), m: alloc::vec![0.0; n], v: alloc::vec![0.0; n] }
    }

    pub fn zeros(name: impl Into<String>, rows: usize, cols: usize) -> Param {
        Param::new(name, Matrix::zeros(rows, cols))
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(name: impl Into<String>, rows: usize, cols: usize, bound: f64, rng: &mut R) -> Param {
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Param::new(name, Matrix { rows, cols, data })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Anything that owns parameters. Visiting order is fixed and defines the flat layout.
pub trait Parameters {
    fn visit(&self, f: &mut dyn FnMut(&Param));
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut(&mut |p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |p| n += p.value.len());
        n
    }

    fn grad_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(&mut |p| s += p.grad.data.iter().map(|g| g * g).sum::<f64>());
        libm::sqrt(s)
    }

    fn max_abs_grad(&self) -> f64 {
        let mut m: f64 = 0.0;
        self.visit(&mut |p| m = p.grad.data.iter().fold(m, |acc, g| acc.max(libm::fabs(*g))));
        m
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |p| names.push(p.name.clone()));
        names
    }

    fn flat_values(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.extend_from_slice(&p.value.data));
        out
    }

    fn flat_grads(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.visit(&mut |p| out.extend_from_slice(&p.grad.data));
        out
    }

    /// Add `delta` to the flat-indexed scalar.
    fn nudge(&mut self, index: usize, delta: f64) {
        let mut base = 0;
        self.visit_mut(&mut |p| {
            let n = p.value.len();
            if index >= base && index < base + n {
                p.value.data[index - base] += delta;
            }
            base += n;
        });
    }
}

impl Parameters for Param {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(self)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(self)
    }
}

impl<T: Parameters> Parameters for Vec<T> {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        for x in self {
            x.visit(f);
        }
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        for x in self {
            x.visit_mut(f);
        }
    }
}

impl<A: Parameters, B: Parameters> Parameters for (A, B) {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.0.visit(f);
        self.1.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.0.visit_mut(f);
        self.1.visit_mut(f);
    }
}

impl<T: Parameters + ?Sized> Parameters for &mut T {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        (**self).visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        (**self).visit_mut(f)
    }
}
