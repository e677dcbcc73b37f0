use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use super::layers::{relu, relu_backward, softmax_in_place, Linear};
use super::matrix::Matrix;
use super::param::{Param, Parameters};
use crate::error::{Error, Result};

/// Multi-head scaled dot-product self-attention over fixed-length sequences.
///
/// Inputs are `(B * S, d)` with rows of one sequence contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

#[derive(Debug, Clone)]
pub struct AttentionCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    ctx: Matrix,
    /// Softmax weights, indexed `[(b * heads + h) * S * S + i * S + j]`.
    pub weights: Vec<f64>,
    seq: usize,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, rng: &mut R) -> Result<MultiHeadAttention> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::HeadSplit { dim, heads });
        }
        Ok(MultiHeadAttention {
            heads,
            query: Linear::new(&format!("{name}.query"), dim, dim, 1.0, rng),
            key: Linear::new(&format!("{name}.key"), dim, dim, 1.0, rng),
            value: Linear::new(&format!("{name}.value"), dim, dim, 1.0, rng),
            output: Linear::new(&format!("{name}.output"), dim, dim, 1.0, rng),
        })
    }

    pub fn dim(&self) -> usize {
        self.query.input_dim()
    }

    pub fn forward(&self, x: &Matrix, seq: usize) -> Result<(Matrix, AttentionCache)> {
        let d = self.dim();
        if seq == 0 || x.rows % seq != 0 || x.cols != d {
            return Err(Error::Shape(format!("attention input {}x{} with sequence length {seq}", x.rows, x.cols)));
        }
        let batch = x.rows / seq;
        let hd = d / self.heads;
        let scale = 1.0 / libm::sqrt(hd as f64);
        let q = self.query.forward(x)?;
        let k = self.key.forward(x)?;
        let v = self.value.forward(x)?;
        let mut ctx = Matrix::zeros(x.rows, d);
        let mut weights = alloc::vec![0.0; batch * self.heads * seq * seq];
        let mut scores = alloc::vec![0.0; seq];
        for b in 0..batch {
            for h in 0..self.heads {
                let off = h * hd;
                for i in 0..seq {
                    let qi = &q.row(b * seq + i)[off..off + hd];
                    for (j, s) in scores.iter_mut().enumerate() {
                        let kj = &k.row(b * seq + j)[off..off + hd];
                        *s = scale * qi.iter().zip(kj).map(|(a, c)| a * c).sum::<f64>();
                    }
                    softmax_in_place(&mut scores);
                    let base = (b * self.heads + h) * seq * seq + i * seq;
                    weights[base..base + seq].copy_from_slice(&scores);
                    let out = &mut ctx.row_mut(b * seq + i)[off..off + hd];
                    for (j, &a) in scores.iter().enumerate() {
                        for (o, vv) in out.iter_mut().zip(&v.row(b * seq + j)[off..off + hd]) {
                            *o += a * vv;
                        }
                    }
                }
            }
        }
        let y = self.output.forward(&ctx)?;
        Ok((y, AttentionCache { x: x.clone(), q, k, v, ctx, weights, seq }))
    }

    pub fn backward(&mut self, cache: &AttentionCache, dy: &Matrix) -> Matrix {
        let d = self.dim();
        let seq = cache.seq;
        let batch = cache.x.rows / seq;
        let hd = d / self.heads;
        let scale = 1.0 / libm::sqrt(hd as f64);
        let dctx = self.output.backward(&cache.ctx, dy);
        let mut dq = Matrix::zeros(cache.x.rows, d);
        let mut dk = Matrix::zeros(cache.x.rows, d);
        let mut dv = Matrix::zeros(cache.x.rows, d);
        let mut da = alloc::vec![0.0; seq];
        for b in 0..batch {
            for h in 0..self.heads {
                let off = h * hd;
                for i in 0..seq {
                    let base = (b * self.heads + h) * seq * seq + i * seq;
                    let a = &cache.weights[base..base + seq];
                    let dci = &dctx.row(b * seq + i)[off..off + hd];
                    for j in 0..seq {
                        let vj = &cache.v.row(b * seq + j)[off..off + hd];
                        da[j] = dci.iter().zip(vj).map(|(x, y)| x * y).sum();
                        for (g, c) in dv.row_mut(b * seq + j)[off..off + hd].iter_mut().zip(dci) {
                            *g += a[j] * c;
                        }
                    }
                    let dot: f64 = a.iter().zip(&da).map(|(x, y)| x * y).sum();
                    for j in 0..seq {
                        let ds = a[j] * (da[j] - dot) * scale;
                        if ds == 0.0 {
                            continue;
                        }
                        let kj = cache.k.row(b * seq + j)[off..off + hd].to_vec();
                        let qi = cache.q.row(b * seq + i)[off..off + hd].to_vec();
                        for (g, kv) in dq.row_mut(b * seq + i)[off..off + hd].iter_mut().zip(&kj) {
                            *g += ds * kv;
                        }
                        for (g, qv) in dk.row_mut(b * seq + j)[off..off + hd].iter_mut().zip(&qi) {
                            *g += ds * qv;
                        }
                    }
                }
            }
        }
        let mut dx = self.query.backward(&cache.x, &dq);
        dx.add_assign(&self.key.backward(&cache.x, &dk));
        dx.add_assign(&self.value.backward(&cache.x, &dv));
        dx
    }
}

impl Parameters for MultiHeadAttention {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.query.visit(f);
        self.key.visit(f);
        self.value.visit(f);
        self.output.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.query.visit_mut(f);
        self.key.visit_mut(f);
        self.value.visit_mut(f);
        self.output.visit_mut(f);
    }
}

/// Residual-only encoder layer: `y = x + attn(x)`, then `y + ff(y)` with a ReLU hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: MultiHeadAttention,
    pub ff_in: Linear,
    pub ff_out: Linear,
}

#[derive(Debug, Clone)]
pub struct EncoderLayerCache {
    pub attention: AttentionCache,
    mid: Matrix,
    hidden: Matrix,
}

impl EncoderLayer {
    pub fn new<R: Rng + ?Sized>(name: &str, dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Result<EncoderLayer> {
        Ok(EncoderLayer {
            attention: MultiHeadAttention::new(&format!("{name}.attention"), dim, heads, rng)?,
            ff_in: Linear::new(&format!("{name}.ff_in"), dim, ff_dim, 1.0, rng),
            ff_out: Linear::new(&format!("{name}.ff_out"), ff_dim, dim, 1.0, rng),
        })
    }

    pub fn forward(&self, x: &Matrix, seq: usize) -> Result<(Matrix, EncoderLayerCache)> {
        let (a, attention) = self.attention.forward(x, seq)?;
        let mut mid = x.clone();
        mid.add_assign(&a);
        let hidden = relu(&self.ff_in.forward(&mid)?);
        let mut y = mid.clone();
        y.add_assign(&self.ff_out.forward(&hidden)?);
        Ok((y, EncoderLayerCache { attention, mid, hidden }))
    }

    pub fn backward(&mut self, cache: &EncoderLayerCache, dy: &Matrix) -> Matrix {
        let dh = self.ff_out.backward(&cache.hidden, dy);
        let dpre = relu_backward(&cache.hidden, &dh);
        let mut dmid = self.ff_in.backward(&cache.mid, &dpre);
        dmid.add_assign(dy);
        let mut dx = self.attention.backward(&cache.attention, &dmid);
        dx.add_assign(&dmid);
        dx
    }
}

impl Parameters for EncoderLayer {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.attention.visit(f);
        self.ff_in.visit(f);
        self.ff_out.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.attention.visit_mut(f);
        self.ff_in.visit_mut(f);
        self.ff_out.visit_mut(f);
    }
}

/// A stack of encoder layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub layers: Vec<EncoderLayer>,
}

impl Encoder {
    pub fn new<R: Rng + ?Sized>(name: &str, depth: usize, dim: usize, heads: usize, ff_dim: usize, rng: &mut R) -> Result<Encoder> {
        let layers = (0..depth).map(|l| EncoderLayer::new(&format!("{name}.{l}"), dim, heads, ff_dim, rng)).collect::<Result<_>>()?;
        Ok(Encoder { layers })
    }

    pub fn forward(&self, x: &Matrix, seq: usize) -> Result<(Matrix, Vec<EncoderLayerCache>)> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, c) = layer.forward(&h, seq)?;
            caches.push(c);
            h = y;
        }
        Ok((h, caches))
    }

    pub fn backward(&mut self, caches: &[EncoderLayerCache], dy: &Matrix) -> Matrix {
        let mut g = dy.clone();
        for (layer, cache) in self.layers.iter_mut().zip(caches).rev() {
            g = layer.backward(cache, &g);
        }
        g
    }
}

impl Parameters for Encoder {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.layers.visit(f)
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.layers.visit_mut(f)
    }
}
