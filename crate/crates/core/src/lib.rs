//! Positive-unlabeled learning with the variational objective.
//!
//! The crate trains a classifier `Φ(x) ≈ P(y = +1 | x)` from labeled
//! positives and unlabeled points only, without knowing the class prior.
//! Alongside the trainer it ships the usual prior-dependent baselines (uPU,
//! nnPU) and an exact oracle over finite supports used to check the
//! objective's properties.

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod losses;
pub mod matrix;
pub mod model;
pub mod oracle;
pub mod sampling;
pub mod trainer;

pub use error::{Error, Result};
