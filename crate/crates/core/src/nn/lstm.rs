use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::sigmoid;
use super::matrix::{gemm, Matrix};
use super::param::{Param, Parameters};
use crate::error::{Error, Result};

/// One LSTM layer. Gate blocks in the 4H columns are ordered input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmLayer {
    pub w_input: Param,
    pub w_hidden: Param,
    pub bias: Param,
}

impl LstmLayer {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, rng: &mut R) -> LstmLayer {
        let bound = 1.0 / libm::sqrt(hidden as f64);
        LstmLayer {
            w_input: Param::uniform(format!("{name}.w_input"), input, 4 * hidden, bound, rng),
            w_hidden: Param::uniform(format!("{name}.w_hidden"), hidden, 4 * hidden, bound, rng),
            bias: Param::uniform(format!("{name}.bias"), 1, 4 * hidden, bound, rng),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w_hidden.value.rows
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.value.rows
    }
}

impl Parameters for LstmLayer {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        f(&self.w_input);
        f(&self.w_hidden);
        f(&self.bias);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        f(&mut self.w_input);
        f(&mut self.w_hidden);
        f(&mut self.bias);
    }
}

/// Stacked LSTM over `(T * B, in)` inputs laid out time-major (row `t * B + b`).
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub layers: Vec<LstmLayer>,
}

#[derive(Debug, Clone)]
struct LayerCache {
    input: Matrix,
    /// Post-activation gates (i, f, g, o), `(T * B, 4H)`.
    gates: Matrix,
    cell: Matrix,
    tanh_cell: Matrix,
    hidden: Matrix,
}

#[derive(Debug, Clone)]
pub struct LstmCache {
    layers: Vec<LayerCache>,
    steps: usize,
    batch: usize,
}

/// Final `(h, c)` of each layer, each `(B, H)`.
pub type FinalStates = Vec<(Matrix, Matrix)>;

impl Lstm {
    pub fn new<R: Rng + ?Sized>(name: &str, input: usize, hidden: usize, depth: usize, rng: &mut R) -> Lstm {
        let layers = (0..depth)
            .map(|l| LstmLayer::new(&format!("{name}.{l}"), if l == 0 { input } else { hidden }, hidden, rng))
            .collect();
        Lstm { layers }
    }

    pub fn hidden(&self) -> usize {
        self.layers[0].hidden()
    }

    pub fn forward(&self, x: &Matrix, steps: usize) -> Result<(Matrix, FinalStates, LstmCache)> {
        if steps == 0 || x.rows % steps != 0 {
            return Err(Error::Shape(format!("{} rows do not split into {steps} steps", x.rows)));
        }
        if x.cols != self.layers[0].input_dim() {
            return Err(Error::Shape(format!("lstm expects {} inputs, got {}", self.layers[0].input_dim(), x.cols)));
        }
        let batch = x.rows / steps;
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut finals = Vec::with_capacity(self.layers.len());
        let mut input = x.clone();
        for layer in &self.layers {
            let h = layer.hidden();
            let mut gates = Matrix::zeros(x.rows, 4 * h);
            for r in 0..gates.rows {
                gates.row_mut(r).copy_from_slice(&layer.bias.value.data);
            }
            gemm(1.0, &input, false, &layer.w_input.value, false, 1.0, &mut gates);
            let mut cell = Matrix::zeros(x.rows, h);
            let mut tanh_cell = Matrix::zeros(x.rows, h);
            let mut hidden = Matrix::zeros(x.rows, h);
            let mut h_prev = Matrix::zeros(batch, h);
            let mut c_prev = Matrix::zeros(batch, h);
            for t in 0..steps {
                let mut pre = gates.rows_slice(t * batch, batch);
                if t > 0 {
                    gemm(1.0, &h_prev, false, &layer.w_hidden.value, false, 1.0, &mut pre);
                }
                for b in 0..batch {
                    let row = pre.row_mut(b);
                    let (c_row, h_row) = (c_prev.row_mut(b), h_prev.row_mut(b));
                    for u in 0..h {
                        let i = sigmoid(row[u]);
                        let f = sigmoid(row[h + u]);
                        let g = libm::tanh(row[2 * h + u]);
                        let o = sigmoid(row[3 * h + u]);
                        row[u] = i;
                        row[h + u] = f;
                        row[2 * h + u] = g;
                        row[3 * h + u] = o;
                        let c = f * c_row[u] + i * g;
                        c_row[u] = c;
                        h_row[u] = o * libm::tanh(c);
                    }
                }
                let r0 = t * batch;
                gates.data[r0 * 4 * h..(r0 + batch) * 4 * h].copy_from_slice(&pre.data);
                cell.data[r0 * h..(r0 + batch) * h].copy_from_slice(&c_prev.data);
                for (tc, c) in tanh_cell.data[r0 * h..(r0 + batch) * h].iter_mut().zip(&c_prev.data) {
                    *tc = libm::tanh(*c);
                }
                hidden.data[r0 * h..(r0 + batch) * h].copy_from_slice(&h_prev.data);
            }
            finals.push((h_prev, c_prev));
            let next = hidden.clone();
            caches.push(LayerCache { input, gates, cell, tanh_cell, hidden });
            input = next;
        }
        Ok((input, finals, LstmCache { layers: caches, steps, batch }))
    }

    /// Backpropagation through time from gradients on the top layer's sequence output.
    pub fn backward(&mut self, cache: &LstmCache, d_out: &Matrix) -> Matrix {
        let (steps, batch) = (cache.steps, cache.batch);
        let mut d_seq = d_out.clone();
        for (layer, lc) in self.layers.iter_mut().zip(&cache.layers).rev() {
            let h = layer.hidden();
            let mut d_gates = Matrix::zeros(steps * batch, 4 * h);
            let mut dh_next = Matrix::zeros(batch, h);
            let mut dc_next = Matrix::zeros(batch, h);
            for t in (0..steps).rev() {
                let mut dg_t = Matrix::zeros(batch, 4 * h);
                for b in 0..batch {
                    let r = t * batch + b;
                    let gate = lc.gates.row(r);
                    let tc = lc.tanh_cell.row(r);
                    let dout = d_seq.row(r);
                    let dhn = dh_next.row(b).to_vec();
                    let dcn = dc_next.row_mut(b);
                    let dg = dg_t.row_mut(b);
                    for u in 0..h {
                        let (i, f, g, o) = (gate[u], gate[h + u], gate[2 * h + u], gate[3 * h + u]);
                        let dh = dout[u] + dhn[u];
                        let c_prev = if t > 0 { lc.cell.get(r - batch, u) } else { 0.0 };
                        let dc = dh * o * (1.0 - tc[u] * tc[u]) + dcn[u];
                        dg[u] = dc * g * i * (1.0 - i);
                        dg[h + u] = dc * c_prev * f * (1.0 - f);
                        dg[2 * h + u] = dc * i * (1.0 - g * g);
                        dg[3 * h + u] = dh * tc[u] * o * (1.0 - o);
                        dcn[u] = dc * f;
                    }
                }
                if t > 0 {
                    let h_prev = lc.hidden.rows_slice((t - 1) * batch, batch);
                    gemm(1.0, &h_prev, true, &dg_t, false, 1.0, &mut layer.w_hidden.grad);
                    gemm(1.0, &dg_t, false, &layer.w_hidden.value, true, 0.0, &mut dh_next);
                }
                d_gates.data[t * batch * 4 * h..(t + 1) * batch * 4 * h].copy_from_slice(&dg_t.data);
            }
            gemm(1.0, &lc.input, true, &d_gates, false, 1.0, &mut layer.w_input.grad);
            for r in 0..d_gates.rows {
                for (g, d) in layer.bias.grad.data.iter_mut().zip(d_gates.row(r)) {
                    *g += d;
                }
            }
            let mut dx = Matrix::zeros(lc.input.rows, lc.input.cols);
            gemm(1.0, &d_gates, false, &layer.w_input.value, true, 0.0, &mut dx);
            d_seq = dx;
        }
        d_seq
    }
}

impl Parameters for Lstm {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.visit_mut(f)
    }
}
