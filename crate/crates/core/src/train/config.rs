use alloc::format;

use serde::{Deserialize, Serialize};

use super::loss::LossWeights;
use crate::error::{Error, Result};
use crate::meta::MetaConfig;
use crate::sim::ROLLOUT_STEPS;
use crate::sub::SubConfig;

/// Environment steps of the reference schedule; desk runs divide it by `kappa`.
pub const REFERENCE_TOTAL_STEPS: u64 = 380_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoGac,
    NoGlobalFeature,
    NoSubgoal,
    NoMeta,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoGac, Variant::NoGlobalFeature, Variant::NoSubgoal, Variant::NoMeta];

    pub fn parse(name: &str) -> Result<Variant> {
        Variant::ALL.into_iter().find(|v| v.name() == name).ok_or_else(|| Error::UnknownVariant(name.into()))
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoGac => "no_gac",
            Variant::NoGlobalFeature => "no_global_feature",
            Variant::NoSubgoal => "no_subgoal",
            Variant::NoMeta => "no_meta",
        }
    }

    pub fn uses_gac(self) -> bool {
        self != Variant::NoGac
    }

    pub fn uses_global_feature(self) -> bool {
        !matches!(self, Variant::NoGlobalFeature | Variant::NoMeta)
    }

    pub fn uses_subgoal(self) -> bool {
        !matches!(self, Variant::NoSubgoal | Variant::NoMeta)
    }

    pub fn uses_meta(self) -> bool {
        self != Variant::NoMeta
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub seed: u64,
    pub variant: Variant,
    /// Overrides the schedule derived from `kappa`.
    pub episodes: Option<usize>,
    pub kappa: f64,
    /// Environment instances collected per update.
    pub envs: usize,
    pub lr: f64,
    pub max_grad_norm: f64,
    pub weights: LossWeights,
    pub epochs: usize,
    pub minibatch_steps: usize,
    pub meta_epochs: usize,
    /// Goal windows per meta minibatch.
    pub meta_batch: usize,
    /// Control steps between a goal and the aggregates it is scored against.
    pub goal_horizon: usize,
    pub strict_paper_mode: bool,
    pub pretrain_episodes: usize,
    pub checkpoint_every: usize,
    pub meta: MetaConfig,
    pub sub: SubConfig,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            seed: 0,
            variant: Variant::Full,
            episodes: None,
            kappa: 8.0,
            envs: 1,
            lr: 3e-4,
            max_grad_norm: 10.0,
            weights: LossWeights::default(),
            epochs: 4,
            minibatch_steps: 60,
            meta_epochs: 4,
            meta_batch: 60,
            goal_horizon: 1,
            strict_paper_mode: false,
            pretrain_episodes: 0,
            checkpoint_every: 10,
            meta: MetaConfig::default(),
            sub: SubConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn total_steps(&self) -> u64 {
        libm::ceil(REFERENCE_TOTAL_STEPS as f64 / self.kappa) as u64
    }

    pub fn episode_count(&self) -> usize {
        self.episodes.unwrap_or_else(|| {
            let per = (ROLLOUT_STEPS * self.envs.max(1)) as u64;
            self.total_steps().div_ceil(per) as usize
        })
    }

    /// Loss weights with the goal terms zeroed for variants without sub-goals.
    pub fn effective_weights(&self) -> LossWeights {
        let mut w = self.weights;
        if !self.variant.uses_subgoal() {
            w.eta1 = 0.0;
            w.eta2 = 0.0;
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        self.weights.validate()?;
        let positive = [
            ("envs", self.envs),
            ("epochs", self.epochs),
            ("minibatch_steps", self.minibatch_steps),
            ("meta_batch", self.meta_batch),
            ("goal_horizon", self.goal_horizon),
            ("checkpoint_every", self.checkpoint_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if !(self.kappa > 0.0) || !(self.lr > 0.0) || !(self.max_grad_norm > 0.0) {
            return Err(Error::InvalidConfig("kappa, lr and max_grad_norm must be > 0".into()));
        }
        Ok(())
    }
}

/// SplitMix64 finalizer over a combined key; used to derive independent stream seeds.
pub fn mix_seed(parts: &[u64]) -> u64 {
    let mut z: u64 = 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
    }
    z
}

/// Simulator seed for a run seed under a scenario's demand seed.
pub fn sim_seed(flow_seed: u64, run_seed: u64) -> u64 {
    mix_seed(&[flow_seed, run_seed])
}
