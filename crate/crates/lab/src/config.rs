use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tsc_core::sim::{CONTROL_STEP_S, EPISODE_S, YELLOW_S};
use tsc_core::train::TrainConfig;

use crate::error::LabError;

/// Environment variable that re-roots relative output directories.
pub const OUT_ROOT_ENV: &str = "TSC_OUT_ROOT";

/// Simulator timing. The simulator is compiled against these values; the section exists so
/// experiment records state them, and any other value is rejected.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulatorConstants {
    pub episode_s: u64,
    pub control_step_s: u32,
    pub yellow_s: u32,
}

impl Default for SimulatorConstants {
    fn default() -> SimulatorConstants {
        SimulatorConstants { episode_s: EPISODE_S, control_step_s: CONTROL_STEP_S, yellow_s: YELLOW_S }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub scenario: Option<PathBuf>,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub simulator: SimulatorConstants,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> ExperimentConfig {
        ExperimentConfig {
            scenario: None,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs"),
            simulator: SimulatorConstants::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), LabError> {
        if self.simulator != SimulatorConstants::default() {
            return Err(LabError::Config(format!(
                "simulator constants are fixed at {:?}, got {:?}",
                SimulatorConstants::default(),
                self.simulator
            )));
        }
        if self.seeds.is_empty() {
            return Err(LabError::Config("seed list is empty".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<ExperimentConfig, LabError> {
        let c: ExperimentConfig = toml::from_str(text).map_err(|e| LabError::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<ExperimentConfig, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        ExperimentConfig::from_toml(&text)
    }
}

/// Resolve an output directory, prefixing relative paths with `TSC_OUT_ROOT` when set.
pub fn resolve_out(dir: &Path) -> PathBuf {
    resolve_out_with(dir, std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from))
}

pub fn resolve_out_with(dir: &Path, root: Option<PathBuf>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}
