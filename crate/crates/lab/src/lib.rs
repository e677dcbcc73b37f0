//! Experiment front-end for `tsc-core`: scenario files, experiment configs, versioned CSV
//! outputs, binary checkpoints, and the training/evaluation/baseline/ablation drivers used
//! by the `tsc` binary.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod error;
pub mod experiment;
pub mod output;
pub mod scenario;

pub use config::ExperimentConfig;
pub use error::LabError;
pub use scenario::{Scenario, ScenarioKind};
