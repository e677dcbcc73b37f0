use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("version mismatch: {0}")]
    Version(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Core(#[from] tsc_core::Error),
    #[error("{context}: {source}")]
    Run { context: String, source: tsc_core::Error },
}

impl LabError {
    pub fn io(path: &Path, source: std::io::Error) -> LabError {
        LabError::Io { path: path.display().to_string(), source }
    }

    pub fn run(context: impl Into<String>, source: tsc_core::Error) -> LabError {
        LabError::Run { context: context.into(), source }
    }

    /// Process exit code for this failure category.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) => 2,
            LabError::Io { .. } | LabError::Csv(_) => 3,
            LabError::Version(_) | LabError::Checkpoint(_) => 4,
            LabError::Core(e) | LabError::Run { source: e, .. } => match e {
                tsc_core::Error::InvalidConfig(_)
                | tsc_core::Error::InvalidFlow(_)
                | tsc_core::Error::UnknownVariant(_)
                | tsc_core::Error::InvalidGrid(_)
                | tsc_core::Error::InvalidRegions(_) => 2,
                _ => 5,
            },
        }
    }
}
