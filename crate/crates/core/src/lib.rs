//! Continual vision-brain decoding.
//!
//! A shared commonality encoder reads 2D brain-signal grids; each training
//! step adds its own prompt-selection module and encoder-decoder, so subjects
//! learned in earlier steps keep an untouched inference path. The crate also
//! ships a synthetic multi-subject data generator, the continual trainer, and
//! the evaluation metrics.
//!
//! All model math is generic over [`numerics::Scalar`] (`f32`, `f64`); the
//! aliases below fix the precision used for training.

pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod synthdata;
pub mod trainer;

pub use error::{CobraError, Result};

pub type Tensor32 = numerics::Tensor<f32>;
pub type Tensor64 = numerics::Tensor<f64>;
pub type CobraModel32 = model::CobraModel<f32>;
pub type CobraModel64 = model::CobraModel<f64>;

/// Version string recorded in every run directory and checkpoint.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
