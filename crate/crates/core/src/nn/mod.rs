//! Minimal differentiable substrate with explicit forward caches and backward passes.

pub mod attention;
pub mod gradcheck;
pub mod layers;
pub mod lstm;
pub mod matrix;
pub mod optim;
pub mod param;

pub use attention::{Encoder, EncoderLayer, MultiHeadAttention};
pub use layers::{positional_encoding, positional_table, Dropout, Linear};
pub use lstm::Lstm;
pub use matrix::Matrix;
pub use optim::Adam;
pub use param::{Param, Parameters};
