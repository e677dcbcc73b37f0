use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use tsc_core::network::{build_grid_network, Network};
use tsc_core::sim::{FlowPattern, FlowSpec, EPISODE_S};

use crate::error::LabError;

pub const SCENARIO_VERSION: u32 = 1;
pub const LINK_LENGTH_M: f64 = 200.0;
pub const SPEED_LIMIT_MPS: f64 = 13.89;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Grid4x4,
    Grid5x5,
    Grid2x2,
}

impl ScenarioKind {
    pub fn parse(name: &str) -> Result<ScenarioKind, LabError> {
        match name {
            "grid4x4" => Ok(ScenarioKind::Grid4x4),
            "grid5x5" => Ok(ScenarioKind::Grid5x5),
            "grid2x2" => Ok(ScenarioKind::Grid2x2),
            other => Err(LabError::Config(format!("unknown scenario kind `{other}`"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Grid4x4 => "grid4x4",
            ScenarioKind::Grid5x5 => "grid5x5",
            ScenarioKind::Grid2x2 => "grid2x2",
        }
    }

    /// (rows, cols, region rows, region cols)
    pub fn layout(self) -> (usize, usize, usize, usize) {
        match self {
            ScenarioKind::Grid4x4 => (4, 4, 2, 2),
            ScenarioKind::Grid5x5 => (5, 5, 2, 2),
            ScenarioKind::Grid2x2 => (2, 2, 1, 1),
        }
    }

    /// Network-wide (min, max) arrival rates in vehicles per second.
    pub fn rates(self) -> (f64, f64) {
        match self {
            ScenarioKind::Grid4x4 => (0.018, 0.038),
            ScenarioKind::Grid5x5 => (0.033, 0.379),
            // No published row; light enough that fixed-time control does not saturate.
            ScenarioKind::Grid2x2 => (0.05, 0.15),
        }
    }
}

/// A self-contained scenario file: grid, region partition and demand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub version: u32,
    pub kind: ScenarioKind,
    pub rows: usize,
    pub cols: usize,
    pub region_rows: usize,
    pub region_cols: usize,
    pub link_length: f64,
    pub speed_limit: f64,
    pub flow: FlowSpec,
}

impl Scenario {
    pub fn generate(kind: ScenarioKind, pattern: FlowPattern, seed: u64) -> Scenario {
        let (rows, cols, region_rows, region_cols) = kind.layout();
        let (min_rate, max_rate) = kind.rates();
        let min_rate = if pattern == FlowPattern::Constant { max_rate } else { min_rate };
        Scenario {
            version: SCENARIO_VERSION,
            kind,
            rows,
            cols,
            region_rows,
            region_cols,
            link_length: LINK_LENGTH_M,
            speed_limit: SPEED_LIMIT_MPS,
            flow: FlowSpec {
                pattern,
                min_rate,
                max_rate,
                components: FlowSpec::default_components(pattern, EPISODE_S as f64),
                seed,
            },
        }
    }

    pub fn validate(&self) -> Result<(), LabError> {
        if self.version != SCENARIO_VERSION {
            return Err(LabError::Version(format!("scenario version {} (supported: {SCENARIO_VERSION})", self.version)));
        }
        self.flow.validate()?;
        Ok(())
    }

    pub fn network(&self) -> Result<Arc<Network>, LabError> {
        let net = build_grid_network(self.rows, self.cols, self.link_length, self.speed_limit)?
            .with_regions(self.region_rows, self.region_cols)?;
        Ok(Arc::new(net))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("scenario serializes")
    }

    pub fn from_toml(text: &str) -> Result<Scenario, LabError> {
        let s: Scenario = toml::from_str(text).map_err(|e| LabError::Config(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Scenario, LabError> {
        let text = std::fs::read_to_string(path).map_err(|e| LabError::io(path, e))?;
        Scenario::from_toml(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), LabError> {
        crate::output::write_file(path, self.to_toml().as_bytes())
    }
}
