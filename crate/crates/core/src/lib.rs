//! Core library for separable-target learning experiments.
//!
//! Provides the numeric substrate (matrices, seeded RNG, least squares),
//! dataset generation for the three separable target families, the three
//! network architectures with exact backpropagation, Adam training with
//! explicit and implicit regularization, and closed-form evaluators for
//! the generalization-bound expressions.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod linalg;
pub mod network;
pub mod rng;
pub mod training;

pub use error::{Error, Result};
pub use linalg::{affine, ols_fit, Matrix};
pub use rng::Rng;
