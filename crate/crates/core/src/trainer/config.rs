use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::model::{LossWeights, ModelConfig};
use crate::numerics::AdamWConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Peak learning rate; each step decays it with a half cosine.
    pub lr: f64,
    pub weight_decay: f64,
    pub weights: LossWeights,
    pub seed: u64,
    /// Steps (counted from 1) during which the commonality encoder trains.
    pub sc_trainable_steps: usize,
    /// Samples kept per completed subject; 0 is rehearsal-free.
    pub buffer_capacity: usize,
    /// Route buffered samples through their own (then unfrozen) step modules
    /// instead of the current ones.
    pub rehearsal_updates_old_modules: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::desk(),
            epochs: 50,
            batch_size: 16,
            lr: 1e-3,
            weight_decay: 0.01,
            weights: LossWeights::default(),
            seed: 0,
            sc_trainable_steps: 1,
            buffer_capacity: 0,
            rehearsal_updates_old_modules: false,
        }
    }
}

impl TrainConfig {
    /// Full-scale schedule; the model dimensions must be set separately.
    pub fn full_scale() -> Self {
        TrainConfig {
            model: ModelConfig::full_scale(),
            epochs: 300,
            batch_size: 32,
            lr: 2.5e-5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.weights.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(CobraError::Config(
                "train.epochs and train.batch_size must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(CobraError::Config(format!(
                "train.lr must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(CobraError::Config(
                "train.weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            ..AdamWConfig::default()
        }
    }
}
