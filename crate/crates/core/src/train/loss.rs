use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::reward::{goal_gap, GoalWeights};
use crate::nn::layers::log_softmax;
use crate::nn::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub beta_w: f64,
    pub beta_q: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
}

impl Default for LossWeights {
    fn default() -> LossWeights {
        LossWeights { beta_w: 0.5, beta_q: 0.5, eta1: 0.1, eta2: 0.1, clip: 0.2, entropy_coef: 0.01, value_coef: 1.0, gamma: 0.99, lambda: 0.95 }
    }
}

impl LossWeights {
    pub fn goal(&self) -> GoalWeights {
        GoalWeights { beta_w: self.beta_w, beta_q: self.beta_q }
    }

    pub fn validate(&self) -> crate::Result<()> {
        let all = [self.beta_w, self.beta_q, self.eta1, self.eta2, self.entropy_coef, self.value_coef, self.gamma, self.lambda];
        if all.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(crate::Error::InvalidConfig("loss weights must be finite and >= 0".into()));
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(crate::Error::InvalidConfig("clip must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Per-minibatch inputs for the actor-critic loss.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoBatch<'a> {
    pub actions: &'a [usize],
    pub old_log_probs: &'a [f64],
    /// Already normalized.
    pub advantages: &'a [f64],
    pub returns: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoOutput {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    /// `policy - entropy_coef * entropy + value_coef * value`.
    pub total: f64,
    pub clip_fraction: f64,
    /// Rows dropped because the probability ratio was not finite.
    pub excluded: usize,
    pub d_logits: Matrix,
    pub d_values: Matrix,
}

/// Clipped-ratio surrogate, squared-error value loss and entropy bonus with their gradients.
pub fn ppo_loss(logits: &Matrix, values: &Matrix, batch: &PpoBatch, w: &LossWeights) -> PpoOutput {
    let n_rows = logits.rows;
    let k = logits.cols;
    let mut ratios = Vec::with_capacity(n_rows);
    let mut log_probs = Vec::with_capacity(n_rows);
    let mut excluded = 0;
    for r in 0..n_rows {
        let lp = log_softmax(logits.row(r));
        let ratio = libm::exp(lp[batch.actions[r]] - batch.old_log_probs[r]);
        if !ratio.is_finite() {
            excluded += 1;
        }
        ratios.push(ratio);
        log_probs.push(lp);
    }
    let n = (n_rows - excluded).max(1) as f64;
    let mut d_logits = Matrix::zeros(n_rows, k);
    let mut d_values = Matrix::zeros(n_rows, 1);
    let (mut policy, mut value, mut entropy, mut clipped) = (0.0, 0.0, 0.0, 0usize);
    for r in 0..n_rows {
        let ratio = ratios[r];
        if !ratio.is_finite() {
            continue;
        }
        let a = batch.advantages[r];
        let surr1 = ratio * a;
        let bounded = ratio.clamp(1.0 - w.clip, 1.0 + w.clip);
        let surr2 = bounded * a;
        let lp = &log_probs[r];
        let probs: Vec<f64> = lp.iter().map(|l| libm::exp(*l)).collect();
        // d(-min(surr1, surr2)) / d log p(a); zero when the clipped branch is active.
        let d_logp = if surr1 <= surr2 {
            -a * ratio / n
        } else {
            clipped += 1;
            0.0
        };
        policy -= surr1.min(surr2) / n;
        let h: f64 = -probs.iter().zip(lp).map(|(p, l)| p * l).sum::<f64>();
        entropy += h / n;
        let dl = d_logits.row_mut(r);
        for j in 0..k {
            let onehot = if j == batch.actions[r] { 1.0 } else { 0.0 };
            dl[j] += d_logp * (onehot - probs[j]);
            // d(-c * H)/dz_j = c * p_j (log p_j + H)
            dl[j] += w.entropy_coef * probs[j] * (lp[j] + h) / n;
        }
        let err = values.get(r, 0) - batch.returns[r];
        value += err * err / n;
        d_values.set(r, 0, w.value_coef * 2.0 * err / n);
    }
    PpoOutput {
        policy_loss: policy,
        value_loss: value,
        entropy,
        total: policy - w.entropy_coef * entropy + w.value_coef * value,
        clip_fraction: clipped as f64 / n,
        excluded,
        d_logits,
        d_values,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetaLossOutput {
    pub loss: f64,
    pub squared_error: f64,
    pub ambition: f64,
    /// `(B, 2)` gradient with respect to the normalized (waiting, queue) targets.
    pub d_goals: Matrix,
}

/// Mean over pairs of `|G - (W, Q)|^2 + eta1 * r_g`, with `r_g` the goal reward.
pub fn meta_loss(goals: &Matrix, outcomes: &[(f64, f64)], w: &LossWeights, strict_pairing: bool) -> MetaLossOutput {
    let b = goals.rows;
    let n = b.max(1) as f64;
    let mut d_goals = Matrix::zeros(b, 2);
    let (mut se, mut amb) = (0.0, 0.0);
    for (i, &(ow, oq)) in outcomes.iter().enumerate().take(b) {
        let (gw, gq) = (goals.get(i, 0), goals.get(i, 1));
        se += ((gw - ow) * (gw - ow) + (gq - oq) * (gq - oq)) / n;
        amb += -goal_gap((ow, oq), (gw, gq), w.goal(), strict_pairing) / n;
        // Under either pairing G_w is weighted by beta_w and G_q by beta_q.
        d_goals.set(i, 0, (2.0 * (gw - ow) + w.eta1 * w.beta_w) / n);
        d_goals.set(i, 1, (2.0 * (gq - oq) + w.eta1 * w.beta_q) / n);
    }
    MetaLossOutput { loss: se + w.eta1 * amb, squared_error: se, ambition: amb, d_goals }
}

/// `L_AC + eta2 * mean gap`, the alignment term carrying no gradient.
pub fn sub_loss(ac_total: f64, outcomes: &[(f64, f64)], goals: &[(f64, f64)], w: &LossWeights, strict_pairing: bool) -> f64 {
    let n = outcomes.len().max(1) as f64;
    let gap: f64 = outcomes.iter().zip(goals).map(|(o, g)| goal_gap(*o, *g, w.goal(), strict_pairing)).sum::<f64>() / n;
    ac_total + w.eta2 * gap
}
