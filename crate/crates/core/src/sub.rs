//! Shared per-intersection actor-critic: local encoding, graph attention concat over
//! up to four neighbours, fusion with the detached global feature, a shared trunk,
//! an 8-way phase actor and a two-branch critic.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::layers::{leaky_relu, leaky_relu_backward, relu, relu_backward, LEAKY_SLOPE};
use crate::nn::{Dropout, Linear, Matrix, Param, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SubConfig {
    pub obs_dim: usize,
    pub max_neighbors: usize,
    pub global_dim: usize,
    /// Width of the goal vector appended after the global feature when `include_goal` is set.
    pub goal_dim: usize,
    pub include_goal: bool,
    pub head: Vec<usize>,
    pub branch_dim: usize,
    pub latent_dim: usize,
    pub actions: usize,
    pub dropout: f64,
}

impl Default for SubConfig {
    fn default() -> SubConfig {
        SubConfig {
            obs_dim: 66,
            max_neighbors: 4,
            global_dim: 4,
            goal_dim: 16,
            include_goal: false,
            head: alloc::vec![256, 128, 114],
            branch_dim: 57,
            latent_dim: 56,
            actions: 8,
            dropout: 0.1,
        }
    }
}

impl SubConfig {
    pub fn gac_dim(&self) -> usize {
        (self.max_neighbors + 1) * self.obs_dim
    }

    pub fn fused_dim(&self) -> usize {
        self.gac_dim() + self.global_dim + if self.include_goal { self.goal_dim } else { 0 }
    }

    pub fn trunk_dim(&self) -> usize {
        *self.head.last().expect("head has at least one layer")
    }
}

/// A batch of agent rows. Rows may span several time steps; neighbour indices refer to rows.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentBatch {
    pub observations: Matrix,
    /// Neighbour rows per row, in the network's fixed order.
    pub neighbors: Vec<Vec<usize>>,
    /// Per-row context appended after the attention output (global feature, then goal if used).
    pub context: Matrix,
}

impl AgentBatch {
    /// Stack `steps` blocks of `n` agents that share one neighbour table.
    pub fn tiled_neighbors(table: &[Vec<usize>], steps: usize) -> Vec<Vec<usize>> {
        let n = table.len();
        (0..steps).flat_map(|t| table.iter().map(move |nb| nb.iter().map(|j| t * n + j).collect())).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SubCache {
    obs: Matrix,
    encoded: Matrix,
    /// Attention weights per row, one per actual neighbour.
    pub attention: Vec<Vec<f64>>,
    /// Pre-activation attention scores per row.
    scores: Vec<Vec<f64>>,
    neighbors: Vec<Vec<usize>>,
    trunk_inputs: Vec<Matrix>,
    trunk_acts: Vec<Matrix>,
    masks: Vec<Option<Vec<f64>>>,
    trunk: Matrix,
    actor_hidden: Matrix,
    branch1: Matrix,
    branch2: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub gac: Matrix,
    pub fused: Matrix,
    pub trunk: Matrix,
    pub logits: Matrix,
    pub value: Matrix,
    pub latent: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubPolicy {
    pub config: SubConfig,
    pub encode: Linear,
    /// Attention vector over `[h_i ; h_j]`, stored as `(1, 2 * obs_dim)`.
    pub attention: Param,
    pub head: Vec<Linear>,
    pub actor_hidden: Linear,
    pub actor_out: Linear,
    pub critic_branch1: Linear,
    pub critic_branch2: Linear,
    pub latent: Linear,
    pub value: Linear,
}

impl SubPolicy {
    pub fn new<R: Rng + ?Sized>(config: SubConfig, rng: &mut R) -> Result<SubPolicy> {
        if config.head.is_empty() {
            return Err(Error::InvalidConfig("sub-policy head needs at least one layer".into()));
        }
        let d = config.obs_dim;
        let mut head = Vec::new();
        let mut width = config.fused_dim();
        for (k, &h) in config.head.iter().enumerate() {
            head.push(Linear::new(&format!("sub.head.{k}"), width, h, 1.0, rng));
            width = h;
        }
        let b = config.branch_dim;
        Ok(SubPolicy {
            encode: Linear::new("sub.encode", d, d, 1.0, rng),
            attention: Param::uniform("sub.gac.attention", 1, 2 * d, 1.0 / libm::sqrt(d as f64), rng),
            head,
            actor_hidden: Linear::new("sub.actor.hidden", width, b, 1.0, rng),
            actor_out: Linear::new("sub.actor.out", b, config.actions, 0.01, rng),
            critic_branch1: Linear::new("sub.critic.branch1", width, b, 1.0, rng),
            critic_branch2: Linear::new("sub.critic.branch2", width, b, 1.0, rng),
            latent: Linear::new("sub.critic.latent", b, config.latent_dim, 1.0, rng),
            value: Linear::new("sub.critic.value", 2 * b, 1, 1.0, rng),
            config,
        })
    }

    pub fn encode_local(&self, obs: &Matrix) -> Result<Matrix> {
        Ok(leaky_relu(&self.encode.forward(obs)?))
    }

    /// Graph attention concat: `z_i = h_i | a_1 h_j1 | ... ` zero-padded to `max_neighbors` slots.
    /// Returns the output plus per-row attention weights and raw scores.
    pub fn gac(&self, h: &Matrix, neighbors: &[Vec<usize>]) -> Result<(Matrix, Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        let d = self.config.obs_dim;
        let k_max = self.config.max_neighbors;
        if neighbors.len() != h.rows {
            return Err(Error::Shape(format!("{} neighbour lists for {} rows", neighbors.len(), h.rows)));
        }
        let (a1, a2) = self.attention.value.data.split_at(d);
        let self_score: Vec<f64> = (0..h.rows).map(|i| dot(a1, h.row(i))).collect();
        let nb_score: Vec<f64> = (0..h.rows).map(|j| dot(a2, h.row(j))).collect();
        let mut z = Matrix::zeros(h.rows, (k_max + 1) * d);
        let mut weights = Vec::with_capacity(h.rows);
        let mut scores = Vec::with_capacity(h.rows);
        for (i, nbs) in neighbors.iter().enumerate() {
            if nbs.len() > k_max {
                return Err(Error::DegreeTooLarge { node: i, degree: nbs.len() });
            }
            z.row_mut(i)[..d].copy_from_slice(h.row(i));
            let s: Vec<f64> = nbs.iter().map(|&j| self_score[i] + nb_score[j]).collect();
            let mut alpha: Vec<f64> = s.iter().map(|&v| if v > 0.0 { v } else { LEAKY_SLOPE * v }).collect();
            if !alpha.is_empty() {
                crate::nn::layers::softmax_in_place(&mut alpha);
            }
            for (k, (&j, &a)) in nbs.iter().zip(&alpha).enumerate() {
                let hj = h.row(j).to_vec();
                for (out, v) in z.row_mut(i)[(k + 1) * d..(k + 2) * d].iter_mut().zip(&hj) {
                    *out = a * v;
                }
            }
            weights.push(alpha);
            scores.push(s);
        }
        Ok((z, weights, scores))
    }

    pub fn forward<R: Rng + ?Sized>(&self, batch: &AgentBatch, mut rng: Option<&mut R>) -> Result<(PolicyOutput, SubCache)> {
        let cfg = &self.config;
        if batch.observations.cols != cfg.obs_dim {
            return Err(Error::Shape(format!("observations have {} columns, expected {}", batch.observations.cols, cfg.obs_dim)));
        }
        let ctx_dim = cfg.fused_dim() - cfg.gac_dim();
        if batch.context.cols != ctx_dim || batch.context.rows != batch.observations.rows {
            return Err(Error::Shape(format!(
                "context {}x{}, expected {}x{ctx_dim}",
                batch.context.rows,
                batch.context.cols,
                batch.observations.rows
            )));
        }
        let encoded = self.encode_local(&batch.observations)?;
        let (gac, attention, scores) = self.gac(&encoded, &batch.neighbors)?;
        let fused = Matrix::hcat(&[&gac, &batch.context]);
        let drop = Dropout { rate: cfg.dropout };
        let mut x = fused.clone();
        let (mut trunk_inputs, mut trunk_acts, mut masks) = (Vec::new(), Vec::new(), Vec::new());
        for layer in &self.head {
            let act = relu(&layer.forward(&x)?);
            let (y, mask) = drop.forward(&act, rng.as_deref_mut());
            trunk_inputs.push(x);
            trunk_acts.push(act);
            masks.push(mask);
            x = y;
        }
        let trunk = x;
        let actor_hidden = relu(&self.actor_hidden.forward(&trunk)?);
        let logits = self.actor_out.forward(&actor_hidden)?;
        let branch1 = relu(&self.critic_branch1.forward(&trunk)?);
        let branch2 = relu(&self.critic_branch2.forward(&trunk)?);
        let latent = self.latent.forward(&branch2)?;
        let value = self.value.forward(&Matrix::hcat(&[&branch1, &branch2]))?;
        let out = PolicyOutput { gac, fused, trunk: trunk.clone(), logits, value, latent };
        let cache = SubCache {
            obs: batch.observations.clone(),
            encoded,
            attention,
            scores,
            neighbors: batch.neighbors.clone(),
            trunk_inputs,
            trunk_acts,
            masks,
            trunk,
            actor_hidden,
            branch1,
            branch2,
        };
        Ok((out, cache))
    }

    /// Accumulate gradients from the heads; returns `dL/dobservations`. The context columns
    /// receive no gradient, which keeps the global feature detached.
    pub fn backward(&mut self, cache: &SubCache, d_logits: &Matrix, d_value: &Matrix, d_latent: Option<&Matrix>) -> Matrix {
        let cfg = self.config.clone();
        let b = cfg.branch_dim;
        let d_ah = self.actor_out.backward(&cache.actor_hidden, d_logits);
        let mut d_trunk = self.actor_hidden.backward(&cache.trunk, &relu_backward(&cache.actor_hidden, &d_ah));
        let branches = Matrix::hcat(&[&cache.branch1, &cache.branch2]);
        let d_br = self.value.backward(&branches, d_value);
        let d_b1 = d_br.cols_slice(0, b);
        let mut d_b2 = d_br.cols_slice(b, b);
        if let Some(dl) = d_latent {
            d_b2.add_assign(&self.latent.backward(&cache.branch2, dl));
        }
        d_trunk.add_assign(&self.critic_branch1.backward(&cache.trunk, &relu_backward(&cache.branch1, &d_b1)));
        d_trunk.add_assign(&self.critic_branch2.backward(&cache.trunk, &relu_backward(&cache.branch2, &d_b2)));
        let mut g = d_trunk;
        for k in (0..self.head.len()).rev() {
            let d_act = Dropout::backward(cache.masks[k].as_deref(), &g);
            let d_pre = relu_backward(&cache.trunk_acts[k], &d_act);
            g = self.head[k].backward(&cache.trunk_inputs[k], &d_pre);
        }
        let dz = g.cols_slice(0, cfg.gac_dim());
        let dh = self.gac_backward(cache, &dz);
        let d_pre = leaky_relu_backward(&cache.encoded, &dh);
        self.encode.backward(&cache.obs, &d_pre)
    }

    fn gac_backward(&mut self, cache: &SubCache, dz: &Matrix) -> Matrix {
        let d = self.config.obs_dim;
        let h = &cache.encoded;
        let mut dh = Matrix::zeros(h.rows, d);
        let mut d_self = alloc::vec![0.0; h.rows];
        let mut d_nb = alloc::vec![0.0; h.rows];
        for (i, nbs) in cache.neighbors.iter().enumerate() {
            for (g, v) in dh.row_mut(i).iter_mut().zip(&dz.row(i)[..d]) {
                *g += v;
            }
            if nbs.is_empty() {
                continue;
            }
            let alpha = &cache.attention[i];
            let mut d_alpha = Vec::with_capacity(nbs.len());
            for (k, &j) in nbs.iter().enumerate() {
                let dzk = &dz.row(i)[(k + 1) * d..(k + 2) * d];
                d_alpha.push(dot(dzk, h.row(j)));
                let a = alpha[k];
                for (g, v) in dh.row_mut(j).iter_mut().zip(dzk) {
                    *g += a * v;
                }
            }
            let mix: f64 = alpha.iter().zip(&d_alpha).map(|(a, g)| a * g).sum();
            for (k, &j) in nbs.iter().enumerate() {
                let de = alpha[k] * (d_alpha[k] - mix);
                let ds = if cache.scores[i][k] > 0.0 { de } else { LEAKY_SLOPE * de };
                d_self[i] += ds;
                d_nb[j] += ds;
            }
        }
        let (a1, a2) = self.attention.value.data.split_at(d);
        let (a1, a2) = (a1.to_vec(), a2.to_vec());
        let ga = &mut self.attention.grad.data;
        for r in 0..h.rows {
            let row = h.row(r);
            for c in 0..d {
                ga[c] += d_self[r] * row[c];
                ga[d + c] += d_nb[r] * row[c];
            }
            for (c, g) in dh.row_mut(r).iter_mut().enumerate() {
                *g += d_self[r] * a1[c] + d_nb[r] * a2[c];
            }
        }
        dh
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Row-wise argmax; ties resolve to the lowest index.
pub fn argmax_actions(logits: &Matrix) -> Vec<usize> {
    (0..logits.rows)
        .map(|r| {
            let row = logits.row(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best
        })
        .collect()
}

impl Parameters for SubPolicy {
    fn visit(&self, f: &mut dyn FnMut(&Param)) {
        self.encode.visit(f);
        f(&self.attention);
        self.head.visit(f);
        self.actor_hidden.visit(f);
        self.actor_out.visit(f);
        self.critic_branch1.visit(f);
        self.critic_branch2.visit(f);
        self.latent.visit(f);
        self.value.visit(f);
    }
    fn visit_mut(&mut self, f: &mut dyn FnMut(&mut Param)) {
        self.encode.visit_mut(f);
        f(&mut self.attention);
        self.head.visit_mut(f);
        self.actor_hidden.visit_mut(f);
        self.actor_out.visit_mut(f);
        self.critic_branch1.visit_mut(f);
        self.critic_branch2.visit_mut(f);
        self.latent.visit_mut(f);
        self.value.visit_mut(f);
    }
}
