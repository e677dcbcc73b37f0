//! Rewards, advantage estimation, actor-critic and adversarial goal losses, and the
//! joint training loop with ablation variants.

pub mod config;
pub mod gae;
pub mod loss;
pub mod reward;
pub mod trainer;

pub use config::{mix_seed, sim_seed, TrainConfig, Variant, REFERENCE_TOTAL_STEPS};
pub use gae::gae;
pub use loss::{meta_loss, ppo_loss, sub_loss, LossWeights, MetaLossOutput, PpoBatch, PpoOutput};
pub use reward::{goal_reward, local_reward, GoalWeights, RewardTerms};
pub use trainer::{run_baseline, Controller, EpisodeLog, Evaluation, Prepared, Rollout, Trainer};

#[cfg(test)]
mod tests;
