use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::matrix::{gemm, Matrix};
use super::param::{Param, Parameters};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;

/// Affine map `y = x W + b` with `W: [in, out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    /// Uniform init with bound `gain / sqrt(in)` for both weight and bias.
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, output: usize, gain: f64, rng: &mut R) -> Linear {
        let bound = gain / libm::sqrt(input.max(1) as f64);
        Linear {
            weight: Param::uniform(format!("{name}.weight"), input, output, bound, rng),
            bias: Param::uniform(format!("{name}.bias"), 1, output, bound, rng),
        }
    }

    pub fn zeros(name: &str, input: usize, output: usize) -> Linear {
        Linear { weight: Param::zeros(format!("{name}.weight"), input, output), bias: Param::zeros(format!("{name}.bias"), 1, output) }
    }

    pub fn from_parts(name: &str, weight: Matrix, bias: Vec<f64>) -> Result<Linear> {
        if bias.len() != weight.cols {
            return Err(Error::Shape(format!("bias of {} for {} outputs", bias.len(), weight.cols)));
        }
        let n = bias.len();
        Ok(Linear { weight: Param::new(format!("{name}.weight"), weight), bias: Param::new(format!("{name}.bias"), Matrix { rows: 1, cols: n, data: bias }) })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.value.rows
    }

    pub fn output_dim(&self) -> usize {
        self.weight.value.cols
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols != self.input_dim() {
            return Err(Error::Shape(format!("linear expects {} inputs, got {}", self.input_dim(), x.cols)));
        }
        let mut y = Matrix::zeros(x.rows, self.output_dim());
        for r in 0..y.rows {
            y.row_mut(r).copy_from_slice(&self.bias.value.data);
        }
        gemm(1.0, x, false, &self.weight.value, false, 1.0, &mut y);
        Ok(y)
    }

    /// Accumulates parameter gradients and returns `dL/dx`.
    pub fn backward(&mut self, x: &Matrix, dy: &Matrix) -> Matrix {
        gemm(1.0, x, true, dy, false, 1.0, &mut self.weight.grad);
        let b = &mut self.bias.grad.data;
        for r in 0..dy.rows {
            for (g, d) in b.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
        let mut dx = Matrix::zeros(x.rows, x.cols);
        gemm(1.0, dy, false, &self.weight.value, true, 0.0, &mut dx);
        dx
    }

    /// Parameter gradients only; skips the input-gradient product.
    pub fn backward_params(&mut self, x: &Matrix, dy: &Matrix) {
        gemm(1.0, x, true, dy, false, 1.0, &mut self.weight.grad);
        for r in 0..dy.rows {
            for (g, d) in self.bias.grad.data.iter_mut().zip(dy.row(r)) {
                *g += d;
            }
        }
    }
}

impl Parameters for Linear {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.weight);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.weight);
        f(&mut self.bias);
    }
}

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { 0.0 })
}

/// Gradient through ReLU given its *output* `y`.
pub fn relu_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&y.data) {
        if o <= 0.0 {
            *d = 0.0;
        }
    }
    dx
}

pub fn leaky_relu(x: &Matrix) -> Matrix {
    x.map(|v| if v > 0.0 { v } else { LEAKY_SLOPE * v })
}

/// Gradient through LeakyReLU given its output `y` (sign is preserved).
pub fn leaky_relu_backward(y: &Matrix, dy: &Matrix) -> Matrix {
    let mut dx = dy.clone();
    for (d, &o) in dx.data.iter_mut().zip(&y.data) {
        if o <= 0.0 {
            *d *= LEAKY_SLOPE;
        }
    }
    dx
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// In-place numerically stable softmax.
pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = libm::exp(*x - max);
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub fn log_softmax(v: &[f64]) -> Vec<f64> {
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + libm::log(v.iter().map(|x| libm::exp(x - max)).sum::<f64>());
    v.iter().map(|x| x - lse).collect()
}

/// Inverted dropout: kept units are scaled by `1 / (1 - rate)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    /// With `rng = None` (evaluation) the layer is the identity and no mask is returned.
    pub fn forward<R: Rng + ?Sized>(&self, x: &Matrix, rng: Option<&mut R>) -> (Matrix, Option<Vec<f64>>) {
        match rng {
            Some(rng) if self.rate > 0.0 => {
                let keep = 1.0 - self.rate;
                let mask: Vec<f64> = (0..x.len()).map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
                let mut y = x.clone();
                for (v, m) in y.data.iter_mut().zip(&mask) {
                    *v *= m;
                }
                (y, Some(mask))
            }
            _ => (x.clone(), None),
        }
    }

    pub fn backward(mask: Option<&[f64]>, dy: &Matrix) -> Matrix {
        let mut dx = dy.clone();
        if let Some(mask) = mask {
            for (d, m) in dx.data.iter_mut().zip(mask) {
                *d *= m;
            }
        }
        dx
    }
}

/// Sinusoidal encoding: even index `2i` gets `sin(pos / tau^(2i/d))`, odd `2i+1` the cosine.
pub fn positional_encoding(pos: usize, d_model: usize, tau: f64) -> Result<Vec<f64>> {
    if d_model % 2 != 0 || d_model == 0 {
        return Err(Error::OddModelDim(d_model));
    }
    if !(tau > 0.0) {
        return Err(Error::InvalidConfig(String::from("positional encoding scale must be > 0")));
    }
    let mut out = alloc::vec![0.0; d_model];
    for i in 0..d_model / 2 {
        let angle = pos as f64 / libm::pow(tau, (2 * i) as f64 / d_model as f64);
        out[2 * i] = libm::sin(angle);
        out[2 * i + 1] = libm::cos(angle);
    }
    Ok(out)
}

/// Encodings for positions `0..len` as a `(len, d_model)` matrix.
pub fn positional_table(len: usize, d_model: usize, tau: f64) -> Result<Matrix> {
    let mut m = Matrix::zeros(len, d_model);
    for p in 0..len {
        m.row_mut(p).copy_from_slice(&positional_encoding(p, d_model, tau)?);
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_identity_and_hand_example() {
        let id = Linear::from_parts("id", Matrix::identity(3), alloc::vec![0.0; 3]).unwrap();
        let x = Matrix::from_rows(&[&[1.0, -2.0, 3.5]]).unwrap();
        assert_eq!(id.forward(&x).unwrap(), x);
        let w = Matrix::from_rows(&[&[1.0, 0.0], &[0.0, 2.0]]).unwrap();
        let l = Linear::from_parts("l", w, alloc::vec![1.0, 1.0]).unwrap();
        let y = l.forward(&Matrix::from_rows(&[&[1.0, 2.0]]).unwrap()).unwrap();
        assert_eq!(y.data, alloc::vec![2.0, 5.0]);
        assert!(l.forward(&Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn linear_weight_gradient_is_outer_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut l = Linear::new("l", 3, 2, 1.0, &mut rng);
        let x = Matrix::from_rows(&[&[0.5, -1.0, 2.0], &[1.5, 0.25, -0.75]]).unwrap();
        let dy = Matrix::from_rows(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        l.backward(&x, &dy);
        for i in 0..3 {
            let col_sum = x.get(0, i) + x.get(1, i);
            for j in 0..2 {
                assert!((l.weight.grad.get(i, j) - col_sum).abs() < 1e-14);
            }
        }
        assert_eq!(l.bias.grad.data, alloc::vec![2.0, 2.0]);
    }

    #[test]
    fn positional_encoding_examples() {
        assert_eq!(positional_encoding(0, 4, 10000.0).unwrap(), alloc::vec![0.0, 1.0, 0.0, 1.0]);
        let p = positional_encoding(1, 2, 10000.0).unwrap();
        assert_eq!(p, alloc::vec![libm::sin(1.0), libm::cos(1.0)]);
        assert!((p[0] - 0.8415).abs() < 1e-4 && (p[1] - 0.5403).abs() < 1e-4);
        assert!(positional_encoding(3, 5, 10000.0).is_err());
        assert!(positional_encoding(3, 4, 0.0).is_err());
    }

    #[test]
    fn dropout_eval_identity_and_train_expectation() {
        let d = Dropout { rate: 0.1 };
        let x = Matrix::from_vec(200, 50, alloc::vec![1.0; 10_000]).unwrap();
        let (y, mask) = d.forward::<ChaCha8Rng>(&x, None);
        assert_eq!(y, x);
        assert!(mask.is_none());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (y, mask) = d.forward(&x, Some(&mut rng));
        let mean = y.sum() / y.len() as f64;
        // std of the mean: sqrt(p / (1 - p) / n) ~ 0.0033
        assert!((mean - 1.0).abs() < 0.015, "{mean}");
        let g = Dropout::backward(mask.as_deref(), &x);
        assert_eq!(g, y);
    }

    #[test]
    fn softmax_and_log_softmax_agree() {
        let mut v = alloc::vec![1.0, 2.0, -3.0, 1000.0];
        let l = log_softmax(&v);
        softmax_in_place(&mut v);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (p, lp) in v.iter().zip(&l) {
            assert!((libm::exp(*lp) - p).abs() < 1e-12);
        }
        assert!((softplus(0.0) - libm::log(2.0)).abs() < 1e-15);
        assert_eq!(softplus(100.0), 100.0);
    }
}
