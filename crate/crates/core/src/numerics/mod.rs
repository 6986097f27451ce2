//! Tensor storage, reverse-mode autodiff, optimizer and schedule.

mod kernels;
mod optim;
mod rng;
mod scalar;
mod tape;
mod tensor;

pub use kernels::top_k;
pub use optim::{AdamW, AdamWConfig, CosineSchedule};
pub use rng::{Rng, RngState};
pub use scalar::{DType, Scalar};
pub use tape::{Tape, Var};
pub use tensor::Tensor;

pub(crate) use kernels::matmul_nt as matmul_nt_kernel;
