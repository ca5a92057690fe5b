//! Conformal measurement of catastrophic forgetting in class-incremental learning.
//!
//! The crate is `no_std` with `alloc`: every algorithm here is a pure function of
//! its inputs and a seeded [`Rng`]. File IO, the command line and output formats
//! live in the `cpcf` companion crate.
//!
//! Pipeline, bottom to top:
//!
//! * [`math`], [`rng`], [`optim`]: dense `f64` matrices, softmax / cross-entropy,
//!   a deterministic generator and the Adam / SGD update rules.
//! * [`mlp`]: the 3-layer ReLU classifier with hand-derived gradients.
//! * [`data`]: IDX and CIFAR-10 byte parsers, synthetic blobs, and the
//!   class-incremental task stream with per-task calibration splits.
//! * [`conformal`]: adaptive conformal scores, the finite-sample quantile,
//!   prediction sets and the CPCF forgetting measure.
//! * [`continual`]: the base + incremental curriculum and both EWC penalties.
//! * [`metrics`]: the run log, the Ω retention metrics and distance correlation.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod conformal;
pub mod continual;
pub mod data;
mod error;
pub mod math;
pub mod metrics;
pub mod mlp;
pub mod optim;
pub mod rng;

pub use error::{CoreError, ParseError, Result};
pub use math::Matrix;
pub use rng::Rng;

/// Number of output classes of every dataset handled here.
pub const NUM_CLASSES: usize = 10;
