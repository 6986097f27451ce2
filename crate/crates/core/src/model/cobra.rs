use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::numerics::{Rng, RngState, Scalar, Tensor, Var};

use super::config::ModelConfig;
use super::losses::{self, LossComponents, LossWeights};
use super::mriformer::MriFormer;
use super::params::{Graph, ParamStore};
use super::pss::{PssModule, Selection};
use super::registry::SubjectRegistry;
use super::sc::{patchify, ScModule, ScOutput, SC_PREFIX};

/// Prompt module and encoder-decoder created for one training step.
#[derive(Debug, Clone)]
pub struct StepModules {
    pub pss: PssModule,
    pub mri: MriFormer,
}

pub fn step_prefix(step: usize) -> String {
    format!("step.{step}.")
}

/// Structural changes, in order. Replaying them on a fresh model rebuilds the
/// exact parameter layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ModelEvent {
    AddStep,
    Register { subject: u32, step: usize },
}

/// Vars of one sample's forward pass.
#[derive(Debug, Clone)]
pub struct SampleForward {
    pub sc: ScOutput,
    pub selection: Selection,
    pub f_mri: Var,
    /// `1 × N_s`
    pub subject_logits: Var,
}

/// Detached outputs of [`CobraModel::forward_full`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput<S> {
    /// `clip_len × dim`
    pub f_mri: Tensor<S>,
    /// Object probabilities, `1 × N_c`.
    pub object_probs: Tensor<S>,
    /// Softmax over registered subjects, `1 × N_s`.
    pub subject_probs: Tensor<S>,
    /// Selected prompts, `k × dim`.
    pub prompts: Tensor<S>,
    pub index: Vec<usize>,
}

/// One training example routed to a step's modules.
#[derive(Debug, Clone, Copy)]
pub struct BatchItem<'a> {
    pub grid: &'a [f32],
    pub labels: &'a [u8],
    pub target: &'a [f32],
    pub subject: u32,
    pub step: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct BatchLoss {
    pub total: Var,
    pub parts: LossComponents,
}

/// Shared commonality encoder, per-step module sets, the global subject head
/// and the subject → step routing table.
#[derive(Debug, Clone)]
pub struct CobraModel<S> {
    config: ModelConfig,
    store: ParamStore<S>,
    sc: ScModule,
    steps: Vec<StepModules>,
    registry: SubjectRegistry,
    routing: BTreeMap<u32, usize>,
    history: Vec<ModelEvent>,
    seed: u64,
    rng: Rng,
}

const INIT_STREAM: u64 = 0x1417;

impl<S: Scalar> CobraModel<S> {
    /// Builds the commonality encoder; step modules are added with
    /// [`add_step`](Self::add_step).
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Rng::stream(seed, &[INIT_STREAM]);
        let mut store = ParamStore::new();
        let sc = ScModule::new(&mut store, &config, &mut rng);
        let registry = SubjectRegistry::new(config.margin);
        Ok(CobraModel {
            config,
            store,
            sc,
            steps: Vec::new(),
            registry,
            routing: BTreeMap::new(),
            history: Vec::new(),
            seed,
            rng,
        })
    }

    /// Rebuilds the layout described by `history` with throwaway values.
    pub(crate) fn replay(config: ModelConfig, seed: u64, history: &[ModelEvent]) -> Result<Self> {
        let mut m = Self::new(config, seed)?;
        for ev in history {
            match *ev {
                ModelEvent::AddStep => {
                    m.add_step();
                }
                ModelEvent::Register { subject, step } => m.register_subject(subject, step)?,
            }
        }
        Ok(m)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn store(&self) -> &ParamStore<S> {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.store
    }

    pub fn sc(&self) -> &ScModule {
        &self.sc
    }

    pub fn steps(&self) -> &[StepModules] {
        &self.steps
    }

    pub fn registry(&self) -> &SubjectRegistry {
        &self.registry
    }

    pub fn routing(&self) -> &BTreeMap<u32, usize> {
        &self.routing
    }

    pub fn history(&self) -> &[ModelEvent] {
        &self.history
    }

    pub fn rng_state(&self) -> RngState {
        self.rng.state()
    }

    pub(crate) fn set_rng_state(&mut self, state: RngState) {
        self.rng = Rng::from_state(state);
    }

    /// Appends a freshly initialised prompt module and encoder-decoder.
    pub fn add_step(&mut self) -> usize {
        let idx = self.steps.len();
        let prefix = format!("step.{idx}");
        let pss = PssModule::new(
            &mut self.store,
            &format!("{prefix}.pss"),
            &self.config,
            &mut self.rng,
        );
        let mri = MriFormer::new(
            &mut self.store,
            &format!("{prefix}.mri"),
            &self.config,
            &mut self.rng,
        );
        self.steps.push(StepModules { pss, mri });
        self.history.push(ModelEvent::AddStep);
        idx
    }

    /// Adds a center row for `subject` and routes it to `step`.
    pub fn register_subject(&mut self, subject: u32, step: usize) -> Result<()> {
        if step >= self.steps.len() {
            return Err(CobraError::Plan(format!(
                "step {step} does not exist ({} steps)",
                self.steps.len()
            )));
        }
        self.registry
            .register(&mut self.store, subject, self.config.dim, &mut self.rng)?;
        self.routing.insert(subject, step);
        self.history.push(ModelEvent::Register { subject, step });
        Ok(())
    }

    pub fn step_of(&self, subject: u32) -> Result<usize> {
        self.routing
            .get(&subject)
            .copied()
            .ok_or(CobraError::Routing(subject))
    }

    pub fn set_sc_frozen(&mut self, frozen: bool) {
        self.store.set_frozen_prefix(SC_PREFIX, frozen);
    }

    pub fn set_step_frozen(&mut self, step: usize, frozen: bool) {
        self.store.set_frozen_prefix(&step_prefix(step), frozen);
    }

    pub fn set_center_frozen(&mut self, subject: u32, frozen: bool) -> Result<()> {
        self.registry.set_frozen(&mut self.store, subject, frozen)
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    pub fn sc_param_count(&self) -> usize {
        self.store.count_prefix(SC_PREFIX)
    }

    pub fn step_param_count(&self, step: usize) -> usize {
        self.store.count_prefix(&step_prefix(step))
    }

    pub fn center_param_count(&self) -> usize {
        self.registry.len() * self.config.dim
    }

    /// Commonality encoder over a raw grid.
    pub fn sc_forward(&self, g: &mut Graph<S>, grid: &[f32]) -> Result<ScOutput> {
        let patches = patchify::<S>(grid, &self.config)?;
        let x = g.input(patches);
        self.sc.forward(g, x)
    }

    fn step_modules(&self, step: usize) -> Result<&StepModules> {
        self.steps
            .get(step)
            .ok_or_else(|| CobraError::Plan(format!("step {step} does not exist")))
    }

    /// Full per-sample pass through the commonality encoder and the modules of
    /// `step`. `centers` is the stacked registry var of the same graph.
    pub fn forward_sample(
        &self,
        g: &mut Graph<S>,
        grid: &[f32],
        step: usize,
        centers: Var,
    ) -> Result<SampleForward> {
        let modules = self.step_modules(step)?;
        let sc = self.sc_forward(g, grid)?;
        let selection = modules.pss.select(g, sc.cls, sc.patches)?;
        let f_mri = modules.mri.forward(g, sc.tokens, selection.prompts)?;
        let subject_logits = losses::subject_logits(g, selection.prompts, centers)?;
        Ok(SampleForward {
            sc,
            selection,
            f_mri,
            subject_logits,
        })
    }

    /// Inference for a registered subject through the step set recorded at
    /// its registration.
    pub fn forward_full(&self, grid: &[f32], subject: u32) -> Result<ForwardOutput<S>> {
        let step = self.step_of(subject)?;
        let mut g = Graph::new(&self.store, false);
        let centers = self.registry.centers(&mut g)?;
        let out = self.forward_sample(&mut g, grid, step, centers)?;
        let subject_probs = g.tape.softmax(out.subject_logits, 1.0)?;
        Ok(ForwardOutput {
            f_mri: g.value(out.f_mri).clone(),
            object_probs: g.value(out.sc.probs).clone(),
            subject_probs: g.value(subject_probs).clone(),
            prompts: g.value(out.selection.prompts).clone(),
            index: out.selection.index,
        })
    }

    /// Records the weighted training objective of a batch on `g`.
    pub fn batch_loss(
        &self,
        g: &mut Graph<S>,
        items: &[BatchItem<'_>],
        weights: &LossWeights,
    ) -> Result<BatchLoss> {
        if items.is_empty() {
            return Err(CobraError::Contract("empty batch".into()));
        }
        let target_len = self.config.clip_len * self.config.dim;
        let centers = self.registry.centers(g)?;
        let mut flat_mri = Vec::with_capacity(items.len());
        let mut probs = Vec::with_capacity(items.len());
        let mut logits = Vec::with_capacity(items.len());
        let mut labels = Vec::with_capacity(items.len() * self.config.n_classes);
        let mut targets = Vec::with_capacity(items.len() * target_len);
        let mut subject_pos = Vec::with_capacity(items.len());
        for item in items {
            if item.target.len() != target_len {
                return Err(CobraError::dim(
                    "batch_loss",
                    format!(
                        "target has {} values, expected {target_len}",
                        item.target.len()
                    ),
                ));
            }
            if item.labels.len() != self.config.n_classes {
                return Err(CobraError::dim(
                    "batch_loss",
                    format!(
                        "{} labels for {} classes",
                        item.labels.len(),
                        self.config.n_classes
                    ),
                ));
            }
            let pos = self
                .registry
                .position(item.subject)
                .ok_or(CobraError::Routing(item.subject))?;
            let out = self.forward_sample(g, item.grid, item.step, centers)?;
            flat_mri.push(g.tape.reshape(out.f_mri, vec![1, target_len])?);
            probs.push(out.sc.probs);
            logits.push(out.subject_logits);
            labels.extend_from_slice(item.labels);
            targets.extend(item.target.iter().map(|&v| S::narrow(v as f64)));
            subject_pos.push(pos);
        }
        let probs = g.tape.concat_rows(&probs)?;
        let commonality = losses::commonality_loss(g, probs, &labels)?;
        let logits = g.tape.concat_rows(&logits)?;
        let subject = losses::subject_loss(g, logits, &subject_pos)?;
        let predicted = g.tape.concat_rows(&flat_mri)?;
        let target = g.input(Tensor::matrix(items.len(), target_len, targets)?);
        let contrastive = losses::contrastive_loss(g, predicted, target, self.config.temperature)?;
        let regularization = losses::center_regularization(g, centers, self.registry.margin)?;
        let parts = LossComponents {
            commonality,
            subject,
            contrastive,
            regularization,
        };
        let total = losses::total_loss(g, &parts, weights)?;
        Ok(BatchLoss { total, parts })
    }
}
