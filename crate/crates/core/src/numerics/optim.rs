use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};

use super::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// AdamW with decoupled weight decay. Moment buffers are created lazily (zero
/// initialised) the first time a parameter key is stepped and kept in `f64`.
#[derive(Debug, Clone)]
pub struct AdamW {
    config: AdamWConfig,
    t: u64,
    moments: BTreeMap<usize, Moments>,
}

impl AdamW {
    pub fn new(config: AdamWConfig) -> Self {
        AdamW {
            config,
            t: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn config(&self) -> &AdamWConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// Applies one update to every `(key, param, grad)` triple at learning
    /// rate `lr`. Bias correction uses the shared step counter, which advances
    /// by exactly one per call.
    pub fn step<S: Scalar>(
        &mut self,
        lr: f64,
        updates: &mut [(usize, &mut [S], &[S])],
    ) -> Result<()> {
        for (key, param, grad) in updates.iter() {
            if param.len() != grad.len() {
                return Err(CobraError::Contract(format!(
                    "parameter {key} has {} values but gradient has {}",
                    param.len(),
                    grad.len()
                )));
            }
            if let Some(state) = self.moments.get(key) {
                if state.m.len() != param.len() {
                    return Err(CobraError::Contract(format!(
                        "parameter {key} changed size from {} to {}",
                        state.m.len(),
                        param.len()
                    )));
                }
            }
        }
        self.t += 1;
        let AdamWConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
            ..
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (key, param, grad) in updates.iter_mut() {
            let state = self.moments.entry(*key).or_insert_with(|| Moments {
                m: vec![0.0; param.len()],
                v: vec![0.0; param.len()],
            });
            for i in 0..param.len() {
                let g = grad[i].widen();
                let mut p = param[i].widen();
                p -= lr * weight_decay * p;
                state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g;
                state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g;
                let mhat = state.m[i] / bc1;
                let vhat = state.v[i] / bc2;
                p -= lr * mhat / (vhat.sqrt() + eps);
                param[i] = S::narrow(p);
            }
        }
        Ok(())
    }
}

/// Half-cosine decay from `initial_lr` at step 0 to zero at `total_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CosineSchedule {
    pub initial_lr: f64,
    pub total_steps: u64,
}

impl CosineSchedule {
    pub fn new(initial_lr: f64, total_steps: u64) -> Self {
        CosineSchedule {
            initial_lr,
            total_steps,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.total_steps == 0 {
            return 0.0;
        }
        let progress = step.min(self.total_steps) as f64 / self.total_steps as f64;
        if progress >= 1.0 {
            return 0.0;
        }
        0.5 * self.initial_lr * (1.0 + (PI * progress).cos())
    }
}
