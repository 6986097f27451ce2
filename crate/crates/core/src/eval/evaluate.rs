use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::model::{checkpoint, CobraModel, ModelConfig};
use crate::numerics::{Rng, Scalar};
use crate::synthdata::Dataset;
use crate::trainer::{StepCheckpoint, StepPlan};

use super::metrics::{argmax, fraction, retrieval_hits, F1Counts};

const RETRIEVAL_STREAM: u64 = 0x7e7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// Candidates per identification trial (1 true + `n_way - 1` distractors).
    pub n_way: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig { n_way: 2, seed: 0 }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_way < 2 {
            return Err(CobraError::Config(format!(
                "eval.n_way must be at least 2, got {}",
                self.n_way
            )));
        }
        Ok(())
    }
}

/// Model state after training step `step` (1-based), which trained `group`.
#[derive(Debug, Clone)]
pub struct Snapshot<S> {
    pub step: usize,
    pub group: Vec<u32>,
    pub model: CobraModel<S>,
}

pub fn snapshot_from_checkpoint<S: Scalar>(ck: &StepCheckpoint) -> Result<Snapshot<S>> {
    let (model, _) = checkpoint::decode(&ck.bytes)?;
    Ok(Snapshot {
        step: ck.step,
        group: ck.subjects.clone(),
        model,
    })
}

/// Rebuilds a snapshot from checkpoint bytes alone, using the `plan` and
/// `step` metadata written by the trainer.
pub fn snapshot_from_bytes<S: Scalar>(bytes: &[u8]) -> Result<Snapshot<S>> {
    let (model, header) = checkpoint::decode(bytes)?;
    let missing = |k: &str| CobraError::Input(format!("checkpoint metadata lacks {k:?}"));
    let plan: StepPlan = header
        .meta
        .get("plan")
        .ok_or_else(|| missing("plan"))?
        .parse()?;
    let step: usize = header
        .meta
        .get("step")
        .ok_or_else(|| missing("step"))?
        .parse()
        .map_err(|_| CobraError::Input("checkpoint step is not a number".into()))?;
    let group = plan
        .groups()
        .get(step.wrapping_sub(1))
        .ok_or_else(|| CobraError::Input(format!("step {step} is outside plan {plan}")))?
        .clone();
    Ok(Snapshot { step, group, model })
}

/// Test-split outputs of one subject.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectOutputs {
    pub subject: u32,
    pub f_mri: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub object_probs: Vec<Vec<f64>>,
    pub labels: Vec<Vec<u8>>,
    pub subject_hits: Vec<bool>,
    /// Exact bits of every predicted embedding, for identity checks.
    pub raw: Vec<Vec<u64>>,
}

pub fn subject_outputs<S: Scalar>(
    model: &CobraModel<S>,
    data: &Dataset,
    subject: u32,
) -> Result<SubjectOutputs> {
    let test = data.test(subject);
    if test.is_empty() {
        return Err(CobraError::Input(format!(
            "subject {subject} has no test samples"
        )));
    }
    let pos = model
        .registry()
        .position(subject)
        .ok_or(CobraError::Routing(subject))?;
    let mut out = SubjectOutputs {
        subject,
        f_mri: Vec::new(),
        targets: Vec::new(),
        object_probs: Vec::new(),
        labels: Vec::new(),
        subject_hits: Vec::new(),
        raw: Vec::new(),
    };
    for x in test {
        let fwd = model.forward_full(&x.grid, subject)?;
        let f = fwd.f_mri.to_f64_vec();
        out.raw.push(f.iter().map(|v| v.to_bits()).collect());
        out.f_mri.push(f);
        out.targets
            .push(x.target.iter().map(|&v| v as f64).collect());
        out.object_probs.push(fwd.object_probs.to_f64_vec());
        out.labels.push(x.labels.clone());
        out.subject_hits
            .push(argmax(&fwd.subject_probs.to_f64_vec()) == Some(pos));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject: u32,
    /// Step that trained the subject (1-based).
    pub step: usize,
    pub samples: usize,
    /// `n_way` identification accuracy.
    pub retrieval: f64,
    /// Identification against every other test target of the subject.
    pub retrieval_full: f64,
    pub mean_cosine: f64,
    pub sc_f1: f64,
    pub pss_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupMetrics {
    pub step: usize,
    pub subjects: Vec<u32>,
    pub samples: usize,
    pub retrieval: f64,
    pub retrieval_full: f64,
    pub mean_cosine: f64,
    pub sc_f1: f64,
    pub pss_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForgettingRow {
    pub step: usize,
    pub subjects: Vec<u32>,
    /// Group retrieval right after its own step.
    pub before: f64,
    /// Group retrieval after the final step.
    pub after: f64,
    pub delta: f64,
    /// Every predicted embedding of the group is bit-identical.
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRow {
    pub step: usize,
    pub total: usize,
    pub sc: usize,
    /// Parameters of the prompt and encoder-decoder modules added at this
    /// step (0 when a step reuses an earlier set).
    pub step_modules: usize,
    pub centers: usize,
}

struct Tally {
    retrieval: Vec<bool>,
    full: Vec<bool>,
    cosine_sum: f64,
    f1: F1Counts,
    subject_hits: Vec<bool>,
}

impl Tally {
    fn new() -> Self {
        Tally {
            retrieval: Vec::new(),
            full: Vec::new(),
            cosine_sum: 0.0,
            f1: F1Counts::default(),
            subject_hits: Vec::new(),
        }
    }

    fn add(&mut self, o: &SubjectOutputs, cfg: &EvalConfig) -> Result<()> {
        let mut rng = Rng::stream(cfg.seed, &[RETRIEVAL_STREAM, o.subject as u64]);
        self.retrieval
            .extend(retrieval_hits(&o.f_mri, &o.targets, cfg.n_way, &mut rng)?);
        let n = o.f_mri.len();
        let mut rng = Rng::stream(cfg.seed, &[RETRIEVAL_STREAM, o.subject as u64, 1]);
        self.full
            .extend(retrieval_hits(&o.f_mri, &o.targets, n, &mut rng)?);
        self.cosine_sum += o
            .f_mri
            .iter()
            .zip(&o.targets)
            .map(|(p, t)| super::metrics::cosine(p, t))
            .sum::<f64>();
        for (p, y) in o.object_probs.iter().zip(&o.labels) {
            self.f1.add(p, y);
        }
        self.subject_hits.extend(&o.subject_hits);
        Ok(())
    }

    fn samples(&self) -> usize {
        self.retrieval.len()
    }

    fn mean_cosine(&self) -> f64 {
        self.cosine_sum / self.samples().max(1) as f64
    }
}

fn group_metrics(
    step: usize,
    subjects: &[u32],
    outputs: &[SubjectOutputs],
    cfg: &EvalConfig,
) -> Result<GroupMetrics> {
    let mut t = Tally::new();
    for o in outputs {
        t.add(o, cfg)?;
    }
    Ok(GroupMetrics {
        step,
        subjects: subjects.to_vec(),
        samples: t.samples(),
        retrieval: fraction(&t.retrieval),
        retrieval_full: fraction(&t.full),
        mean_cosine: t.mean_cosine(),
        sc_f1: t.f1.f1(),
        pss_accuracy: fraction(&t.subject_hits),
    })
}

pub fn subject_metrics(
    o: &SubjectOutputs,
    step: usize,
    cfg: &EvalConfig,
) -> Result<SubjectMetrics> {
    let g = group_metrics(step, &[o.subject], std::slice::from_ref(o), cfg)?;
    Ok(SubjectMetrics {
        subject: o.subject,
        step,
        samples: g.samples,
        retrieval: g.retrieval,
        retrieval_full: g.retrieval_full,
        mean_cosine: g.mean_cosine,
        sc_f1: g.sc_f1,
        pss_accuracy: g.pss_accuracy,
    })
}

pub fn evaluate_group<S: Scalar>(
    model: &CobraModel<S>,
    data: &Dataset,
    step: usize,
    subjects: &[u32],
    cfg: &EvalConfig,
) -> Result<GroupMetrics> {
    cfg.validate()?;
    let outputs = subjects
        .iter()
        .map(|&s| subject_outputs(model, data, s))
        .collect::<Result<Vec<_>>>()?;
    group_metrics(step, subjects, &outputs, cfg)
}

/// `delta = before − after` per group of every step but the last, on the same
/// test sets and distractor draws.
pub fn forgetting<S: Scalar>(
    snapshots: &[Snapshot<S>],
    data: &Dataset,
    cfg: &EvalConfig,
) -> Result<Vec<ForgettingRow>> {
    cfg.validate()?;
    if snapshots.len() < 2 {
        return Err(CobraError::Input(format!(
            "forgetting needs checkpoints from at least 2 steps, got {}",
            snapshots.len()
        )));
    }
    let last = &snapshots[snapshots.len() - 1].model;
    snapshots[..snapshots.len() - 1]
        .iter()
        .map(|snap| {
            let before = snap
                .group
                .iter()
                .map(|&s| subject_outputs(&snap.model, data, s))
                .collect::<Result<Vec<_>>>()?;
            let after = snap
                .group
                .iter()
                .map(|&s| subject_outputs(last, data, s))
                .collect::<Result<Vec<_>>>()?;
            let b = group_metrics(snap.step, &snap.group, &before, cfg)?.retrieval;
            let a = group_metrics(snap.step, &snap.group, &after, cfg)?.retrieval;
            Ok(ForgettingRow {
                step: snap.step,
                subjects: snap.group.clone(),
                before: b,
                after: a,
                delta: b - a,
                identical: before.iter().zip(&after).all(|(x, y)| x.raw == y.raw),
            })
        })
        .collect()
}

pub fn param_rows<S: Scalar>(snapshots: &[Snapshot<S>]) -> Vec<ParamRow> {
    snapshots
        .iter()
        .map(|snap| {
            let m = &snap.model;
            let idx = snap.step - 1;
            ParamRow {
                step: snap.step,
                total: m.param_count(),
                sc: m.sc_param_count(),
                step_modules: if idx < m.steps().len() {
                    m.step_param_count(idx)
                } else {
                    0
                },
                centers: m.center_param_count(),
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub subjects: usize,
    pub params: usize,
}

/// Parameter count of a continual model that adds one subject per step,
/// for `1..=max_subjects` subjects.
pub fn param_growth_curve(config: &ModelConfig, max_subjects: usize) -> Result<Vec<GrowthRow>> {
    if max_subjects == 0 {
        return Err(CobraError::Parameter(
            "max_subjects must be at least 1".into(),
        ));
    }
    let mut model = CobraModel::<f32>::new(config.clone(), 0)?;
    (1..=max_subjects)
        .map(|n| {
            let step = model.add_step();
            model.register_subject(n as u32, step)?;
            Ok(GrowthRow {
                subjects: n,
                params: model.param_count(),
            })
        })
        .collect()
}

pub fn growth_csv(rows: &[GrowthRow]) -> String {
    let mut s = String::from("subjects,params\n");
    for r in rows {
        s.push_str(&format!("{},{}\n", r.subjects, r.params));
    }
    s
}
