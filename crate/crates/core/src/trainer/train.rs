use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::model::{checkpoint, BatchItem, CobraModel, Graph, ParamId};
use crate::numerics::{AdamW, CosineSchedule, Rng, Scalar};
use crate::synthdata::{Dataset, Sample};

use super::buffer::{fill_buffer, RehearsalBuffer};
use super::config::TrainConfig;
use super::plan::StepPlan;

const SHUFFLE_STREAM: u64 = 0x5f1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    /// New prompt and encoder-decoder modules per step; earlier ones frozen.
    Cobra,
    /// One module set fine-tuned across all steps, nothing frozen.
    Naive,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Cobra => "cobra",
            TrainMode::Naive => "naive",
        }
    }
}

impl std::str::FromStr for TrainMode {
    type Err = CobraError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cobra" => Ok(TrainMode::Cobra),
            "naive" => Ok(TrainMode::Naive),
            other => Err(CobraError::Config(format!(
                "unknown mode {other:?} (expected cobra or naive)"
            ))),
        }
    }
}

/// One line of the training log: epoch means of the loss terms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub mode: TrainMode,
    /// 1-based.
    pub step: usize,
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    pub samples: usize,
    pub total: f64,
    pub commonality: f64,
    pub subject: f64,
    pub contrastive: f64,
    pub regularization: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepCheckpoint {
    /// 1-based.
    pub step: usize,
    pub subjects: Vec<u32>,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub model: CobraModel<S>,
    pub checkpoints: Vec<StepCheckpoint>,
    pub log: Vec<LogRecord>,
}

pub fn train_continual<S: Scalar>(
    plan: &StepPlan,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    train(plan, data, cfg, TrainMode::Cobra)
}

pub fn train_naive_baseline<S: Scalar>(
    plan: &StepPlan,
    data: &Dataset,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<S>> {
    train(plan, data, cfg, TrainMode::Naive)
}

fn check_compatible(data: &Dataset, cfg: &TrainConfig) -> Result<()> {
    let m = &cfg.model;
    let d = &data.meta;
    let pairs = [
        ("height", m.height, d.height),
        ("width", m.width, d.width),
        ("channels", m.channels, d.channels),
        ("n_classes", m.n_classes, d.n_classes),
        ("clip_len", m.clip_len, d.clip_len),
        ("dim (clip_dim)", m.dim, d.clip_dim),
    ];
    for (name, model, data) in pairs {
        if model != data {
            return Err(CobraError::Config(format!(
                "model {name} is {model} but the dataset has {data}"
            )));
        }
    }
    Ok(())
}

struct Totals {
    sums: [f64; 5],
    batches: usize,
}

pub fn train<S: Scalar>(
    plan: &StepPlan,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainOutcome<S>> {
    run(plan, data, cfg, mode, &[])
}

/// Continues a run from the checkpoints of its first `done.len()` steps. The
/// result equals an uninterrupted run with the same settings; only the
/// buffer options may differ from those used for the completed steps.
pub fn resume<S: Scalar>(
    done: &[StepCheckpoint],
    plan: &StepPlan,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: TrainMode,
) -> Result<TrainOutcome<S>> {
    run(plan, data, cfg, mode, done)
}

fn run<S: Scalar>(
    plan: &StepPlan,
    data: &Dataset,
    cfg: &TrainConfig,
    mode: TrainMode,
    done: &[StepCheckpoint],
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    check_compatible(data, cfg)?;
    let known = data.subject_ids();
    for s in plan.subjects() {
        if !known.contains(&s) {
            return Err(CobraError::Input(format!(
                "subject {s} is not in the dataset"
            )));
        }
        if data.train(s).is_empty() {
            return Err(CobraError::Input(format!(
                "subject {s} has no training samples"
            )));
        }
    }
    if done.len() > plan.len() {
        return Err(CobraError::Plan(format!(
            "{} completed steps exceed the {}-step plan",
            done.len(),
            plan.len()
        )));
    }
    for (t, ck) in done.iter().enumerate() {
        if ck.step != t + 1 || ck.subjects != plan.groups()[t] {
            return Err(CobraError::Plan(format!(
                "checkpoint {} does not match step {} of plan {plan}",
                ck.step,
                t + 1
            )));
        }
    }

    let mut model = match done.last() {
        None => CobraModel::<S>::new(cfg.model.clone(), cfg.seed)?,
        Some(ck) => {
            let (model, header) = checkpoint::decode::<S>(&ck.bytes)?;
            if header.config != cfg.model || header.seed != cfg.seed {
                return Err(CobraError::Config(
                    "checkpoint model config or seed differs from the training config".into(),
                ));
            }
            if header.meta.get("mode").map(String::as_str) != Some(mode.as_str()) {
                return Err(CobraError::Config(format!(
                    "checkpoint was not written in {} mode",
                    mode.as_str()
                )));
            }
            model
        }
    };
    let mut buffer = RehearsalBuffer::new(cfg.buffer_capacity);
    for group in &plan.groups()[..done.len()] {
        for &s in group {
            fill_buffer(&mut buffer, s, &data.train(s), cfg.seed);
        }
    }
    let mut checkpoints = done.to_vec();
    let mut log = Vec::new();

    for (t, group) in plan.groups().iter().enumerate().skip(done.len()) {
        let module_step = match mode {
            TrainMode::Cobra => model.add_step(),
            TrainMode::Naive if t == 0 => model.add_step(),
            TrainMode::Naive => 0,
        };
        for &s in group {
            model.register_subject(s, module_step)?;
        }

        let mut items: Vec<(&Sample, usize)> = Vec::new();
        for &s in group {
            items.extend(data.train(s).into_iter().map(|x| (x, module_step)));
        }
        for x in buffer.iter() {
            let step = match mode {
                TrainMode::Cobra if cfg.rehearsal_updates_old_modules => {
                    model.step_of(x.subject)?
                }
                _ => module_step,
            };
            items.push((x, step));
        }

        if mode == TrainMode::Cobra {
            set_cobra_freezing(&mut model, t, group, &buffer, cfg)?;
        }

        let batches_per_epoch = items.len().div_ceil(cfg.batch_size);
        let schedule = CosineSchedule::new(cfg.lr, (cfg.epochs * batches_per_epoch) as u64);
        let mut opt = AdamW::new(cfg.optimizer());
        let mut order: Vec<usize> = (0..items.len()).collect();
        for epoch in 0..cfg.epochs {
            let mut rng = Rng::stream(cfg.seed, &[SHUFFLE_STREAM, t as u64, epoch as u64]);
            rng.shuffle(&mut order);
            let mut totals = Totals {
                sums: [0.0; 5],
                batches: 0,
            };
            let mut lr = cfg.lr;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<BatchItem<'_>> = chunk
                    .iter()
                    .map(|&i| {
                        let (x, step) = items[i];
                        BatchItem {
                            grid: &x.grid,
                            labels: &x.labels,
                            target: &x.target,
                            subject: x.subject,
                            step,
                        }
                    })
                    .collect();
                lr = schedule.lr(opt.steps_taken());
                let values = update(&mut model, &mut opt, &batch, cfg, lr)
                    .map_err(|e| annotate(e, t + 1, epoch + 1))?;
                for (acc, v) in totals.sums.iter_mut().zip(values) {
                    *acc += v;
                }
                totals.batches += 1;
            }
            let n = totals.batches as f64;
            log.push(LogRecord {
                mode,
                step: t + 1,
                epoch: epoch + 1,
                lr,
                samples: items.len(),
                total: totals.sums[0] / n,
                commonality: totals.sums[1] / n,
                subject: totals.sums[2] / n,
                contrastive: totals.sums[3] / n,
                regularization: totals.sums[4] / n,
            });
        }

        if mode == TrainMode::Cobra {
            freeze_all(&mut model);
        }
        for &s in group {
            fill_buffer(&mut buffer, s, &data.train(s), cfg.seed);
        }
        let meta = BTreeMap::from([
            ("mode".to_string(), mode.as_str().to_string()),
            ("plan".to_string(), plan.to_string()),
            ("step".to_string(), (t + 1).to_string()),
        ]);
        checkpoints.push(StepCheckpoint {
            step: t + 1,
            subjects: group.clone(),
            bytes: checkpoint::encode(&model, &meta)?,
        });
    }
    Ok(TrainOutcome {
        model,
        checkpoints,
        log,
    })
}

fn annotate(e: CobraError, step: usize, epoch: usize) -> CobraError {
    match e {
        CobraError::NonFinite(what) => {
            CobraError::NonFinite(format!("{what} (step {step}, epoch {epoch})"))
        }
        other => other,
    }
}

fn freeze_all<S: Scalar>(model: &mut CobraModel<S>) {
    for e in model.store_mut().entries_mut() {
        e.frozen = true;
    }
}

/// Only the current step's modules and new centers train, plus the
/// commonality encoder while `t < sc_trainable_steps` and, in the
/// old-module rehearsal variant, the step sets that own buffered subjects.
fn set_cobra_freezing<S: Scalar>(
    model: &mut CobraModel<S>,
    t: usize,
    group: &[u32],
    buffer: &RehearsalBuffer,
    cfg: &TrainConfig,
) -> Result<()> {
    freeze_all(model);
    model.set_step_frozen(t, false);
    for &s in group {
        model.set_center_frozen(s, false)?;
    }
    if t < cfg.sc_trainable_steps {
        model.set_sc_frozen(false);
    }
    if cfg.rehearsal_updates_old_modules {
        for s in buffer.subjects() {
            if !buffer.get(s).is_empty() {
                let step = model.step_of(s)?;
                model.set_step_frozen(step, false);
            }
        }
    }
    Ok(())
}

/// One optimizer update; returns the batch's total and component losses.
fn update<S: Scalar>(
    model: &mut CobraModel<S>,
    opt: &mut AdamW,
    batch: &[BatchItem<'_>],
    cfg: &TrainConfig,
    lr: f64,
) -> Result<[f64; 5]> {
    let (values, grads) = {
        let mut g = Graph::new(model.store(), true);
        let loss = model.batch_loss(&mut g, batch, &cfg.weights)?;
        let read = |v| g.value(v).item().widen();
        let values = [
            read(loss.total),
            read(loss.parts.commonality),
            read(loss.parts.subject),
            read(loss.parts.contrastive),
            read(loss.parts.regularization),
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(CobraError::NonFinite("training loss".into()));
        }
        g.tape.backward(loss.total)?;
        let mut grads: Vec<(ParamId, Vec<S>)> = Vec::new();
        for (id, v) in g.trainable_bindings() {
            if let Some(grad) = g.tape.grad(v) {
                if grad.iter().any(|x| !x.is_finite()) {
                    return Err(CobraError::NonFinite(format!(
                        "gradient of {}",
                        model.store().entry(id).name
                    )));
                }
                grads.push((id, grad.to_vec()));
            }
        }
        (values, grads)
    };
    let mut by_index: BTreeMap<usize, &[S]> = grads
        .iter()
        .map(|(id, g)| (id.index(), g.as_slice()))
        .collect();
    let mut updates: Vec<(usize, &mut [S], &[S])> = model
        .store_mut()
        .entries_mut()
        .iter_mut()
        .enumerate()
        .filter_map(|(i, e)| by_index.remove(&i).map(|g| (i, e.tensor.data_mut(), g)))
        .collect();
    opt.step(lr, &mut updates)?;
    Ok(values)
}

/// Writes the log as newline-delimited JSON.
pub fn write_log(log: &[LogRecord], path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in log {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}
