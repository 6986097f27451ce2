use std::path::{Path, PathBuf};

use cobra_core::eval::EvalConfig;
use cobra_core::model::{LossWeights, ModelConfig};
use cobra_core::synthdata::GeneratorConfig;
use cobra_core::trainer::{StepPlan, TrainConfig, TrainMode};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Experiment file. Every key is required and unknown keys are rejected;
/// `cobra config-template` prints a complete example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seeds data generation and training.
    pub seed: u64,
    pub data: GeneratorConfig,
    pub model: ModelConfig,
    pub train: TrainSection,
    pub eval: EvalConfig,
    pub plan: PlanSection,
    pub output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub sc_trainable_steps: usize,
    pub buffer_capacity: usize,
    pub rehearsal_updates_old_modules: bool,
    pub weights: LossWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanSection {
    /// Steps separated by `|`, subjects by `,`.
    pub steps: String,
    pub mode: TrainMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        ExperimentConfig {
            seed: 0,
            data: GeneratorConfig::default(),
            model: ModelConfig::desk(),
            train: TrainSection {
                epochs: t.epochs,
                batch_size: t.batch_size,
                lr: t.lr,
                weight_decay: t.weight_decay,
                sc_trainable_steps: t.sc_trainable_steps,
                buffer_capacity: t.buffer_capacity,
                rehearsal_updates_old_modules: t.rehearsal_updates_old_modules,
                weights: t.weights,
            },
            eval: EvalConfig::default(),
            plan: PlanSection {
                steps: "3,4|6,8|1,2|5,7".into(),
                mode: TrainMode::Cobra,
            },
            output: OutputSection {
                dir: PathBuf::from("runs/default"),
            },
        }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.data.validate()?;
        self.training().validate()?;
        self.eval.validate()?;
        self.plan()?;
        Ok(())
    }

    pub fn plan(&self) -> Result<StepPlan, CliError> {
        Ok(self.plan.steps.parse()?)
    }

    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            model: self.model.clone(),
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            lr: self.train.lr,
            weight_decay: self.train.weight_decay,
            weights: self.train.weights,
            seed: self.seed,
            sc_trainable_steps: self.train.sc_trainable_steps,
            buffer_capacity: self.train.buffer_capacity,
            rehearsal_updates_old_modules: self.train.rehearsal_updates_old_modules,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }
}
