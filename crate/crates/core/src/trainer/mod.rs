//! Continual training over a step plan, the naive fine-tuning baseline and
//! rehearsal buffers.

mod buffer;
mod config;
mod plan;
mod train;

pub use buffer::{fill_buffer, RehearsalBuffer};
pub use config::TrainConfig;
pub use plan::StepPlan;
pub use train::{
    resume, train, train_continual, train_naive_baseline, write_log, LogRecord, StepCheckpoint,
    TrainMode, TrainOutcome,
};
