//! Friendly Training, Classic Training and Easy-Examples-First on a small,
//! dependency-light `f64` network stack.
//!
//! Modules, bottom up:
//!
//! - [`tensor`]: dense row-major arrays.
//! - [`nn`]: layers, models, cross-entropy, gradient checking.
//! - [`optim`]: Adam for weights, fixed-rate descent for input perturbations.
//! - [`curriculum`]: developmental plans and the three training strategies.
//! - [`data`]: two-moons synthesis, `.amat` ingestion, splits and mini-batches.
//! - [`eval`]: error rates, per-epoch history, model selection, snapshots.
//! - [`cli`]: experiment configs and the `friendly` command implementations.

pub mod cli;
pub mod curriculum;
pub mod data;
pub mod error;
pub mod eval;
pub mod nn;
pub mod optim;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::Tensor;
