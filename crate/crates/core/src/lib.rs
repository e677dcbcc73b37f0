//! Hierarchical reinforcement learning for traffic signal control.
//!
//! This crate holds everything that does not touch the operating system: the grid
//! road network and its point-queue simulator, observation features, a small
//! differentiable substrate, the meta-policy (transformer over subregions + LSTM
//! goal generator), the shared per-intersection sub-policy, and the joint
//! adversarial training loop. It is `no_std` and only needs `alloc`.
//!
//! File formats, the command line and thread fan-out live in the `tsc-lab` crate.
#![no_std]

extern crate alloc;
#[cfg(any(feature = "std", test))]
extern crate std;

pub mod error;
pub mod features;
pub mod meta;
pub mod network;
pub mod nn;
pub mod sim;
pub mod sub;
pub mod train;

pub use error::{Error, Result};
