use alloc::string::String;

/// Errors raised by the core crate.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid grid dimensions: {0}")]
    InvalidGrid(String),
    #[error("invalid region grid: {0}")]
    InvalidRegions(String),
    #[error("lane {0} missing from queue map")]
    MissingLane(usize),
    #[error("phase index {0} out of range [0, 8)")]
    PhaseOutOfRange(usize),
    #[error("expected {expected} actions, got {got}")]
    ActionCount { expected: usize, got: usize },
    #[error("no vehicles observed")]
    NoTraffic,
    #[error("region {0} has no member intersections")]
    EmptyRegion(usize),
    #[error("snapshot has {got} regions, history expects {expected}")]
    RegionCount { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("d_model must be even, got {0}")]
    OddModelDim(usize),
    #[error("model dim {dim} not divisible by {heads} heads")]
    HeadSplit { dim: usize, heads: usize },
    #[error("node {node} has degree {degree} > 4")]
    DegreeTooLarge { node: usize, degree: usize },
    #[error("non-finite gradient; update rejected")]
    NonFiniteGradient,
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("invalid flow spec: {0}")]
    InvalidFlow(String),
    #[error("unknown variant `{0}`")]
    UnknownVariant(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = core::result::Result<T, Error>;
