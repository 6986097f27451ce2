//! Central finite-difference checks for every tape operation and every
//! composed loss, in f64.

use cobra_core::model::{
    losses, BatchItem, CobraModel, Graph, LossWeights, ModelConfig, ParamStore,
};
use cobra_core::numerics::{Rng, Tape, Tensor, Var};
use cobra_core::Result;

pub const STEP: f64 = 1e-4;
pub const REL_TOL: f64 = 1e-3;
pub const INSTANCES: usize = 20;

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub instances: usize,
    /// Largest `‖analytic − numeric‖ / max(‖analytic‖, ‖numeric‖)` seen.
    pub worst: f64,
    /// Instances redrawn because a perturbation changed a discrete choice.
    pub redrawn: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.instances >= INSTANCES && self.worst <= REL_TOL
    }
}

#[derive(Clone, Copy)]
pub enum Init {
    Normal,
    /// Uniform in `[lo, hi]`.
    Uniform(f64, f64),
}

fn draw(rng: &mut Rng, init: Init) -> f64 {
    match init {
        Init::Normal => rng.normal(),
        Init::Uniform(lo, hi) => lo + (hi - lo) * rng.uniform(),
    }
}

fn rel_error(a: &[f64], n: &[f64]) -> f64 {
    let diff = a
        .iter()
        .zip(n)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = norm(a).max(norm(n));
    if scale < 1e-12 {
        diff
    } else {
        diff / scale
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

type Build = dyn Fn(&mut Graph<f64>, &[Var]) -> Result<Var>;

/// Scalar loss: the op output itself when scalar, otherwise `Σ out ⊙ w`.
fn evaluate(build: &Build, inputs: &[Tensor<f64>], weights: Option<&[f64]>) -> Result<f64> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, true);
    let vars: Vec<Var> = inputs.iter().map(|t| g.tape.constant(t.clone())).collect();
    let out = build(&mut g, &vars)?;
    Ok(match weights {
        None => g.value(out).item(),
        Some(w) => g.value(out).data().iter().zip(w).map(|(a, b)| a * b).sum(),
    })
}

fn analytic(
    build: &Build,
    inputs: &[Tensor<f64>],
    rng: &mut Rng,
) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store, true);
    let vars: Vec<Var> = inputs
        .iter()
        .map(|t| g.tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let out = build(&mut g, &vars)?;
    let (loss, weights) = if g.value(out).is_scalar() {
        (out, None)
    } else {
        let shape = g.value(out).shape().to_vec();
        let w: Vec<f64> = (0..g.value(out).numel()).map(|_| rng.normal()).collect();
        let wv = g.tape.constant(Tensor::new(shape, w.clone())?);
        let prod = g.tape.mul(out, wv)?;
        (g.tape.sum_all(prod)?, Some(w))
    };
    g.tape.backward(loss)?;
    let grads = vars
        .iter()
        .zip(inputs)
        .map(|(v, t)| {
            g.tape
                .grad(*v)
                .map(|s| s.to_vec())
                .unwrap_or_else(|| vec![0.0; t.numel()])
        })
        .collect();
    Ok((grads, weights))
}

/// Checks `build` on [`INSTANCES`] random input sets of the given shapes.
pub fn check_op(
    name: &'static str,
    shapes: &[&[usize]],
    init: Init,
    seed: u64,
    build: &Build,
) -> Result<CheckResult> {
    let mut worst = 0.0f64;
    for inst in 0..INSTANCES {
        let mut rng = Rng::stream(seed, &[inst as u64]);
        let inputs: Vec<Tensor<f64>> = shapes
            .iter()
            .map(|s| {
                let n = s.iter().product();
                Tensor::new(s.to_vec(), (0..n).map(|_| draw(&mut rng, init)).collect())
            })
            .collect::<Result<_>>()?;
        let (grads, weights) = analytic(build, &inputs, &mut rng)?;
        for (which, grad) in grads.iter().enumerate() {
            let mut numeric = vec![0.0; grad.len()];
            for (e, slot) in numeric.iter_mut().enumerate() {
                let mut plus = inputs.clone();
                plus[which].data_mut()[e] += STEP;
                let mut minus = inputs.clone();
                minus[which].data_mut()[e] -= STEP;
                let fp = evaluate(build, &plus, weights.as_deref())?;
                let fm = evaluate(build, &minus, weights.as_deref())?;
                *slot = (fp - fm) / (2.0 * STEP);
            }
            worst = worst.max(rel_error(grad, &numeric));
        }
    }
    Ok(CheckResult {
        name,
        instances: INSTANCES,
        worst,
        redrawn: 0,
    })
}

/// Every differentiable tape operation.
pub fn op_suite() -> Result<Vec<CheckResult>> {
    let gather_index: Vec<usize> = vec![2, 0, 2, 3];
    let mut out = Vec::new();
    out.push(check_op(
        "matmul",
        &[&[3, 4], &[4, 2]],
        Init::Normal,
        1,
        &|g, v| g.tape.matmul(v[0], v[1]),
    )?);
    out.push(check_op(
        "matmul_nt",
        &[&[3, 4], &[5, 4]],
        Init::Normal,
        2,
        &|g, v| g.tape.matmul_nt(v[0], v[1]),
    )?);
    out.push(check_op(
        "transpose",
        &[&[3, 4]],
        Init::Normal,
        3,
        &|g, v| g.tape.transpose(v[0]),
    )?);
    out.push(check_op(
        "add",
        &[&[3, 4], &[3, 4]],
        Init::Normal,
        4,
        &|g, v| g.tape.add(v[0], v[1]),
    )?);
    out.push(check_op(
        "add_row",
        &[&[3, 4], &[1, 4]],
        Init::Normal,
        5,
        &|g, v| g.tape.add_row(v[0], v[1]),
    )?);
    out.push(check_op(
        "sub",
        &[&[3, 4], &[3, 4]],
        Init::Normal,
        6,
        &|g, v| g.tape.sub(v[0], v[1]),
    )?);
    out.push(check_op(
        "mul",
        &[&[3, 4], &[3, 4]],
        Init::Normal,
        7,
        &|g, v| g.tape.mul(v[0], v[1]),
    )?);
    out.push(check_op("scale", &[&[3, 4]], Init::Normal, 8, &|g, v| {
        g.tape.scale(v[0], -1.7)
    })?);
    out.push(check_op("gelu", &[&[3, 4]], Init::Normal, 9, &|g, v| {
        g.tape.gelu(v[0])
    })?);
    out.push(check_op(
        "sigmoid",
        &[&[3, 4]],
        Init::Normal,
        10,
        &|g, v| g.tape.sigmoid(v[0]),
    )?);
    out.push(check_op(
        "softmax",
        &[&[3, 5]],
        Init::Normal,
        11,
        &|g, v| g.tape.softmax(v[0], 0.7),
    )?);
    out.push(check_op(
        "layer_norm",
        &[&[3, 6], &[1, 6], &[1, 6]],
        Init::Normal,
        12,
        &|g, v| g.tape.layer_norm(v[0], v[1], v[2]),
    )?);
    out.push(check_op(
        "mean_rows",
        &[&[3, 4]],
        Init::Normal,
        13,
        &|g, v| g.tape.mean_rows(v[0]),
    )?);
    out.push(check_op(
        "concat_rows",
        &[&[2, 3], &[1, 3]],
        Init::Normal,
        14,
        &|g, v| g.tape.concat_rows(&[v[0], v[1], v[0]]),
    )?);
    out.push(check_op(
        "concat_cols",
        &[&[2, 3], &[2, 1]],
        Init::Normal,
        15,
        &|g, v| g.tape.concat_cols(&[v[0], v[1]]),
    )?);
    out.push(check_op(
        "slice_cols",
        &[&[3, 5]],
        Init::Normal,
        16,
        &|g, v| g.tape.slice_cols(v[0], 1, 3),
    )?);
    out.push(check_op(
        "gather_rows",
        &[&[4, 3]],
        Init::Normal,
        17,
        &move |g, v| g.tape.gather_rows(v[0], &gather_index),
    )?);
    out.push(check_op(
        "reshape",
        &[&[3, 4]],
        Init::Normal,
        18,
        &|g, v| g.tape.reshape(v[0], vec![2, 6]),
    )?);
    out.push(check_op(
        "l2_normalize_rows",
        &[&[3, 4]],
        Init::Normal,
        19,
        &|g, v| g.tape.l2_normalize_rows(v[0]),
    )?);
    out.push(check_op(
        "sum_all",
        &[&[3, 4]],
        Init::Normal,
        20,
        &|g, v| g.tape.sum_all(v[0]),
    )?);
    out.push(check_op(
        "bce",
        &[&[3, 4]],
        Init::Uniform(0.05, 0.95),
        21,
        &|g, v| {
            let t = [1., 0., 0., 1., 0., 1., 1., 0., 0., 0., 1., 1.];
            g.tape.bce(v[0], &t, 1e-7)
        },
    )?);
    out.push(check_op(
        "cross_entropy",
        &[&[3, 5]],
        Init::Normal,
        22,
        &|g, v| g.tape.cross_entropy(v[0], &[4, 0, 2]),
    )?);
    out.push(check_op(
        "margin_penalty",
        &[&[4, 3]],
        Init::Uniform(-0.6, 0.6),
        23,
        &|g, v| g.tape.margin_penalty(v[0], 1.0),
    )?);
    out.push(check_op(
        "weighted_sum",
        &[&[1, 1], &[1, 1]],
        Init::Normal,
        24,
        &|g, v| {
            let a = g.tape.sum_all(v[0])?;
            let b = g.tape.mul(v[1], v[1])?;
            let b = g.tape.sum_all(b)?;
            g.tape.weighted_sum(&[(a, 0.3), (b, 2.0)])
        },
    )?);
    Ok(out)
}

/// The four training objectives on their own inputs.
pub fn loss_suite() -> Result<Vec<CheckResult>> {
    let labels: Vec<u8> = vec![1, 0, 1, 0, 0, 0, 1, 1, 0, 1, 0, 0];
    let mut out = Vec::new();
    out.push(check_op(
        "commonality_loss",
        &[&[3, 4]],
        Init::Normal,
        31,
        &move |g, v| {
            let p = g.tape.sigmoid(v[0])?;
            losses::commonality_loss(g, p, &labels)
        },
    )?);
    out.push(check_op(
        "subject_loss",
        &[&[4, 5], &[3, 5], &[4, 5]],
        Init::Normal,
        32,
        &|g, v| {
            let a = losses::subject_logits(g, v[0], v[1])?;
            let b = losses::subject_logits(g, v[2], v[1])?;
            let logits = g.tape.concat_rows(&[a, b])?;
            losses::subject_loss(g, logits, &[2, 0])
        },
    )?);
    out.push(check_op(
        "contrastive_loss",
        &[&[4, 6], &[4, 6]],
        Init::Normal,
        33,
        &|g, v| losses::contrastive_loss(g, v[0], v[1], 0.5),
    )?);
    out.push(check_op(
        "center_regularization",
        &[&[5, 3]],
        Init::Uniform(-0.7, 0.7),
        34,
        &|g, v| losses::center_regularization(g, v[0], 1.0),
    )?);
    out.push(total_loss_check()?);
    Ok(out)
}

/// Small model used for the end-to-end objective check.
pub fn small_model_config() -> ModelConfig {
    ModelConfig {
        height: 16,
        width: 16,
        patch: 4,
        dim: 8,
        heads: 2,
        mlp_ratio: 2,
        sc_depth: 1,
        encoder_depth: 1,
        decoder_depth: 1,
        clip_len: 3,
        n_classes: 4,
        top_k: 3,
        temperature: 0.5,
        ..ModelConfig::desk()
    }
}

struct Batch {
    grids: Vec<Vec<f32>>,
    labels: Vec<Vec<u8>>,
    targets: Vec<Vec<f32>>,
    subjects: Vec<u32>,
    steps: Vec<usize>,
}

impl Batch {
    fn items(&self) -> Vec<BatchItem<'_>> {
        (0..self.grids.len())
            .map(|i| BatchItem {
                grid: &self.grids[i],
                labels: &self.labels[i],
                target: &self.targets[i],
                subject: self.subjects[i],
                step: self.steps[i],
            })
            .collect()
    }
}

fn total_loss(model: &CobraModel<f64>, batch: &Batch) -> Result<(f64, Vec<Vec<usize>>)> {
    let mut g = Graph::new(model.store(), false);
    let loss = model.batch_loss(&mut g, &batch.items(), &LossWeights::default())?;
    let value = g.value(loss.total).item();
    let mut selections = Vec::new();
    for (grid, &s) in batch.grids.iter().zip(&batch.subjects) {
        selections.push(model.forward_full(grid, s)?.index);
    }
    Ok((value, selections))
}

/// Directional derivative of the weighted total objective of a two-step
/// model with respect to every trainable parameter at once.
pub fn total_loss_check() -> Result<CheckResult> {
    let cfg = small_model_config();
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut redrawn = 0;
    let mut attempt = 0u64;
    while done < INSTANCES {
        attempt += 1;
        assert!(attempt < 200, "too many discontinuous draws");
        let mut rng = Rng::stream(41, &[attempt]);
        let mut model = CobraModel::<f64>::new(cfg.clone(), attempt)?;
        let s0 = model.add_step();
        model.register_subject(1, s0)?;
        model.register_subject(2, s0)?;
        let s1 = model.add_step();
        model.register_subject(3, s1)?;
        let batch = Batch {
            grids: (0..3)
                .map(|_| (0..cfg.grid_len()).map(|_| rng.normal() as f32).collect())
                .collect(),
            labels: (0..3)
                .map(|_| {
                    (0..cfg.n_classes)
                        .map(|_| rng.bernoulli(0.4) as u8)
                        .collect()
                })
                .collect(),
            targets: (0..3)
                .map(|_| {
                    (0..cfg.clip_len * cfg.dim)
                        .map(|_| rng.normal() as f32)
                        .collect()
                })
                .collect(),
            subjects: vec![1, 2, 3],
            steps: vec![s0, s0, s1],
        };

        let (grad_dot, ids) = {
            let mut g = Graph::new(model.store(), true);
            let loss = model.batch_loss(&mut g, &batch.items(), &LossWeights::default())?;
            g.tape.backward(loss.total)?;
            let bindings = g.trainable_bindings();
            let mut dir = Vec::new();
            let mut dot = 0.0;
            for (id, var) in &bindings {
                let n = g.value(*var).numel();
                let d: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
                if let Some(grad) = g.tape.grad(*var) {
                    dot += grad.iter().zip(&d).map(|(a, b)| a * b).sum::<f64>();
                }
                dir.push((*id, d));
            }
            (dot, dir)
        };
        let scale = 1.0 / norm(&ids.iter().flat_map(|(_, d)| d.clone()).collect::<Vec<_>>());
        let grad_dot = grad_dot * scale;
        let base = total_loss(&model, &batch)?.1;
        let shift = |m: &mut CobraModel<f64>, sign: f64| {
            for (id, d) in &ids {
                let t = m.store_mut().get_mut(*id);
                for (x, dx) in t.data_mut().iter_mut().zip(d) {
                    *x += sign * STEP * scale * dx;
                }
            }
        };
        let mut plus = model.clone();
        shift(&mut plus, 1.0);
        let mut minus = model.clone();
        shift(&mut minus, -1.0);
        let (fp, sel_p) = total_loss(&plus, &batch)?;
        let (fm, sel_m) = total_loss(&minus, &batch)?;
        if sel_p != base || sel_m != base {
            redrawn += 1;
            continue;
        }
        let numeric = (fp - fm) / (2.0 * STEP);
        worst = worst.max(rel_error(&[grad_dot], &[numeric]));
        done += 1;
    }
    Ok(CheckResult {
        name: "total_loss",
        instances: done,
        worst,
        redrawn,
    })
}

/// Gradient of a plain tape, used by the conservation property.
pub fn gather_grad(x: Tensor<f64>, index: &[usize], upstream: Tensor<f64>) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let xv = tape.leaf(x.with_requires_grad(true));
    let out = tape.gather_rows(xv, index)?;
    let w = tape.constant(upstream);
    let prod = tape.mul(out, w)?;
    let loss = tape.sum_all(prod)?;
    tape.backward(loss)?;
    Ok(tape.grad(xv).expect("leaf gradient").to_vec())
}
