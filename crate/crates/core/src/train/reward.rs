use serde::{Deserialize, Serialize};

use crate::features::{IntersectionMeasures, WAIT_CLIP_S};
use crate::sim::CONTROL_STEP_S;

/// Normalized per-intersection reward components, each in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub ql: f64,
    pub wt: f64,
    pub dt: f64,
    pub ps: f64,
    pub ss: f64,
}

impl RewardTerms {
    pub fn from_measures(m: &IntersectionMeasures) -> RewardTerms {
        let cap = m.total_capacity();
        let lanes = m.lane_count() as f64;
        let ratio = |num: f64, den: f64| if den > 0.0 { (num / den).clamp(0.0, 1.0) } else { 0.0 };
        RewardTerms {
            ql: ratio(m.queued.iter().sum(), cap),
            wt: ratio(m.head_wait_sum(), WAIT_CLIP_S * lanes),
            dt: ratio(m.delay, CONTROL_STEP_S as f64),
            ps: ratio(libm::fabs(m.pressure), cap),
            ss: ratio(m.average_speed, m.speed_limit),
        }
    }
}

/// `-(ql + wt + dt + ps - ss)`.
pub fn local_reward(t: &RewardTerms) -> f64 {
    -(t.ql + t.wt + t.dt + t.ps - t.ss)
}

/// Goal-term weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GoalWeights {
    pub beta_w: f64,
    pub beta_q: f64,
}

impl Default for GoalWeights {
    fn default() -> GoalWeights {
        GoalWeights { beta_w: 0.5, beta_q: 0.5 }
    }
}

/// Signed shortfall `beta_w (W - G_w) + beta_q (Q - G_q)` in normalized space.
///
/// With `strict_pairing` waiting time is compared with the queue target and vice versa.
pub fn goal_gap(outcome: (f64, f64), goal: (f64, f64), w: GoalWeights, strict_pairing: bool) -> f64 {
    let (ow, oq) = outcome;
    let (gw, gq) = goal;
    if strict_pairing {
        w.beta_q * (ow - gq) + w.beta_w * (oq - gw)
    } else {
        w.beta_w * (ow - gw) + w.beta_q * (oq - gq)
    }
}

/// Positive when the outcome beats the goal.
pub fn goal_reward(outcome: (f64, f64), goal: (f64, f64), w: GoalWeights, strict_pairing: bool) -> f64 {
    -goal_gap(outcome, goal, w, strict_pairing)
}
