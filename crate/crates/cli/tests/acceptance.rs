//! Acceptance run: one PASS/FAIL line per criterion, tolerances pinned below.
//! Runs as a plain binary so the lines always reach the console.

#[allow(dead_code)]
#[path = "../../core/tests/common/gradcheck.rs"]
mod gradcheck;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use cobra_core::eval::{
    binomial_sigma, evaluate_group, forgetting, micro_f1, param_growth_curve, parse_report,
    snapshot_from_checkpoint, EvalConfig, Snapshot,
};
use cobra_core::model::{checkpoint, select_top_k, ModelConfig};
use cobra_core::numerics::Rng;
use cobra_core::synthdata::{generate, Dataset, GeneratorConfig};
use cobra_core::trainer::{resume, train, StepCheckpoint, StepPlan, TrainConfig, TrainMode};
use sha2::{Digest, Sha256};

const C1_BUDGET: Duration = Duration::from_secs(60);
const C2_BUDGET: Duration = Duration::from_secs(600);
const C3_BUDGET: Duration = Duration::from_secs(1);
const C2_PLAN: &str = "3,4,6,8|1,2,5,7";
const SIGMAS: f64 = 3.0;
const F1_MARGIN: f64 = 0.1;
const TOPK_DRAWS: usize = 1000;
const GROWTH_MAX: usize = 10;
const ABLATION_TOPK: &str = "1,2,4,8,16";
const REHEARSAL_EPOCHS: usize = 20;
const REHEARSAL_SC_STEPS: usize = 2;
const REHEARSAL_SEEDS: [u64; 3] = [0, 1, 2];
const REHEARSAL_REQUIRED: usize = 2;

struct Verdict {
    id: u8,
    pass: bool,
    detail: String,
}

fn report(v: &Verdict) {
    let tag = if v.pass { "PASS" } else { "FAIL" };
    println!("criterion {} {tag}: {}", v.id, v.detail);
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn c1_gradients() -> Verdict {
    let start = Instant::now();
    let mut results = gradcheck::op_suite().expect("op suite runs");
    results.extend(gradcheck::loss_suite().expect("loss suite runs"));
    let took = start.elapsed();
    let failed: Vec<&str> = results
        .iter()
        .filter(|r| !r.passed())
        .map(|r| r.name)
        .collect();
    let worst = results.iter().map(|r| r.worst).fold(0.0, f64::max);
    let min_inst = results.iter().map(|r| r.instances).min().unwrap_or(0);
    Verdict {
        id: 1,
        pass: failed.is_empty() && took < C1_BUDGET,
        detail: format!(
            "{} checks (>= {} instances each, min {min_inst}), worst relative error {worst:.2e} \
             (tol {:.0e}, h {:.0e}), failed {failed:?}, {} (budget {})",
            results.len(),
            gradcheck::INSTANCES,
            gradcheck::REL_TOL,
            gradcheck::STEP,
            secs(took),
            secs(C1_BUDGET)
        ),
    }
}

struct ForgettingRun {
    cobra_step1: StepCheckpoint,
    verdict: Verdict,
}

fn snapshots(cks: &[StepCheckpoint]) -> Vec<Snapshot<f32>> {
    cks.iter()
        .map(|c| snapshot_from_checkpoint(c).expect("checkpoint decodes"))
        .collect()
}

fn c2_forgetting(data: &Dataset) -> ForgettingRun {
    let start = Instant::now();
    let plan: StepPlan = C2_PLAN.parse().unwrap();
    let cfg = TrainConfig::default();
    let eval = EvalConfig::default();
    let cobra = train::<f32>(&plan, data, &cfg, TrainMode::Cobra).expect("cobra run");
    let naive = train::<f32>(&plan, data, &cfg, TrainMode::Naive).expect("naive run");
    let fc = forgetting(&snapshots(&cobra.checkpoints), data, &eval).unwrap();
    let fnv = forgetting(&snapshots(&naive.checkpoints), data, &eval).unwrap();
    let took = start.elapsed();
    let (c, n) = (&fc[0], &fnv[0]);
    let pass = c.delta == 0.0 && c.identical && n.after < n.before && took < C2_BUDGET;
    ForgettingRun {
        cobra_step1: cobra.checkpoints[0].clone(),
        verdict: Verdict {
            id: 2,
            pass,
            detail: format!(
                "plan {C2_PLAN}, {} epochs: COBRA step-1 retrieval {:.4} -> {:.4} (delta {}, \
                 bit-identical {}); naive {:.4} -> {:.4} (delta {:.4}); {} (budget {})",
                cfg.epochs,
                c.before,
                c.after,
                c.delta,
                c.identical,
                n.before,
                n.after,
                n.delta,
                secs(took),
                secs(C2_BUDGET)
            ),
        },
    }
}

/// Rank counting: `i` is selected iff fewer than `k` entries beat it; a
/// tie is won by the lower index.
fn oracle_top_k(sim: &[f64], k: usize) -> Vec<usize> {
    (0..sim.len())
        .filter(|&i| {
            (0..sim.len())
                .filter(|&j| sim[j] > sim[i] || (sim[j] == sim[i] && j < i))
                .count()
                < k
        })
        .collect()
}

fn c3_top_k() -> Verdict {
    let mut rng = Rng::new(2024);
    let draws: Vec<(Vec<f64>, usize)> = (0..TOPK_DRAWS)
        .map(|i| {
            let n = 1 + rng.below(64);
            let tied = i % 2 == 0;
            let sim = (0..n)
                .map(|_| {
                    if tied {
                        rng.below(5) as f64 - 2.0
                    } else {
                        rng.normal()
                    }
                })
                .collect();
            (sim, 1 + rng.below(n))
        })
        .collect();
    let start = Instant::now();
    let mismatches = draws
        .iter()
        .filter(|(sim, k)| {
            let mut got = select_top_k(sim, *k).unwrap();
            got.sort_unstable();
            got != oracle_top_k(sim, *k)
        })
        .count();
    let took = start.elapsed();
    Verdict {
        id: 3,
        pass: mismatches == 0 && took < C3_BUDGET,
        detail: format!(
            "{TOPK_DRAWS} draws (half with ties), {mismatches} mismatches, {:.1}ms (budget {})",
            took.as_secs_f64() * 1e3,
            secs(C3_BUDGET)
        ),
    }
}

fn c4_learning(data: &Dataset, step1: &StepCheckpoint) -> Verdict {
    let (model, _) = checkpoint::decode::<f32>(&step1.bytes).unwrap();
    let g = evaluate_group(&model, data, 1, &step1.subjects, &EvalConfig::default()).unwrap();
    let n = g.samples;
    let retrieval_bar = 0.5 + SIGMAS * binomial_sigma(0.5, n);
    let chance = 1.0 / model.registry().len() as f64;
    let pss_bar = chance + SIGMAS * binomial_sigma(chance, n);
    let (probs, labels): (Vec<Vec<f64>>, Vec<Vec<u8>>) = step1
        .subjects
        .iter()
        .flat_map(|&s| data.test(s))
        .map(|x| (vec![0.0; x.labels.len()], x.labels.clone()))
        .unzip();
    let negative_f1 = micro_f1(&probs, &labels);
    let f1_bar = negative_f1 + F1_MARGIN;
    Verdict {
        id: 4,
        pass: g.retrieval > retrieval_bar && g.pss_accuracy > pss_bar && g.sc_f1 >= f1_bar,
        detail: format!(
            "step-1 group {:?}, n {n}: 2-way retrieval {:.4} > {:.4}; PSS accuracy {:.4} > {:.4} \
             (chance 1/{}); SC micro-F1 {:.4} >= {:.4} (all-negative {:.4})",
            step1.subjects,
            g.retrieval,
            retrieval_bar,
            g.pss_accuracy,
            pss_bar,
            model.registry().len(),
            g.sc_f1,
            f1_bar,
            negative_f1
        ),
    }
}

fn c5_growth() -> Verdict {
    let cfg = ModelConfig::desk();
    let rows = param_growth_curve(&cfg, GROWTH_MAX).unwrap();
    let base = rows[0].params;
    let inc = rows[1].params - rows[0].params;
    let affine = rows
        .iter()
        .all(|r| r.params == base + (r.subjects - 1) * inc);
    let sc = {
        let m = cobra_core::CobraModel32::new(cfg, 0).unwrap();
        m.sc_param_count()
    };
    let ratio = inc as f64 / base as f64;
    Verdict {
        id: 5,
        pass: affine && ratio < 1.0,
        detail: format!(
            "n = 1..{GROWTH_MAX}: params = {base} + (n-1)·{inc} exactly ({affine}); \
             increment/base {ratio:.4} < 1; increment/|SC| {:.4} (|SC| {sc})",
            inc as f64 / sc as f64
        ),
    }
}

fn cobra(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_cobra"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("cobra runs");
    assert!(
        out.status.success(),
        "cobra {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn small_config(dir: &Path) {
    cobra(dir, &["config-template", "--out", "base.toml"]);
    let text = std::fs::read_to_string(dir.join("base.toml")).unwrap();
    let text = text
        .replace("epochs = 50\n", "epochs = 2\n")
        .replace("train_per_subject = 96\n", "train_per_subject = 12\n")
        .replace("test_stimuli = 32\n", "test_stimuli = 8\n")
        .replace("steps = \"3,4|6,8|1,2|5,7\"", "steps = \"3,4|6\"");
    std::fs::write(dir.join("exp.toml"), text).unwrap();
}

/// Every command once, with relative paths inside `dir`.
fn pipeline(dir: &Path) {
    std::fs::create_dir_all(dir).unwrap();
    small_config(dir);
    cobra(
        dir,
        &["generate", "--config", "exp.toml", "--out", "data/d.bin"],
    );
    cobra(
        dir,
        &[
            "train",
            "--config",
            "exp.toml",
            "--data",
            "data/d.bin",
            "--out",
            "run",
        ],
    );
    cobra(
        dir,
        &[
            "eval",
            "--config",
            "exp.toml",
            "--checkpoints",
            "run",
            "--data",
            "data/d.bin",
            "--report",
            "run/report.ndjson",
        ],
    );
    cobra(
        dir,
        &[
            "ablate",
            "--config",
            "exp.toml",
            "--data",
            "data/d.bin",
            "--topk",
            ABLATION_TOPK,
            "--out",
            "ablate",
        ],
    );
    cobra(
        dir,
        &[
            "growth",
            "--config",
            "exp.toml",
            "--max-subjects",
            "5",
            "--out",
            "growth.csv",
        ],
    );
}

fn c6_ablation(dir: &Path) -> Verdict {
    let text = std::fs::read_to_string(dir.join("ablate/ablation.ndjson")).unwrap();
    let parsed = parse_report(&text);
    let (pass, detail) = match parsed {
        Ok(r) => {
            let ks: Vec<usize> = r.ablation.iter().map(|a| a.top_k).collect();
            let wanted: Vec<usize> = ABLATION_TOPK
                .split(',')
                .map(|k| k.parse().unwrap())
                .collect();
            let finite = r.ablation.iter().all(|a| {
                [
                    a.retrieval,
                    a.retrieval_full,
                    a.mean_cosine,
                    a.sc_f1,
                    a.pss_accuracy,
                ]
                .iter()
                .all(|v| v.is_finite())
            });
            let rows: Vec<String> = r
                .ablation
                .iter()
                .map(|a| format!("k{}={:.3}", a.top_k, a.retrieval))
                .collect();
            (
                ks == wanted && finite,
                format!(
                    "top-k {ABLATION_TOPK} (16 = full pool): report parsed, k column {ks:?}, \
                     finite {finite}; retrieval {}",
                    rows.join(" ")
                ),
            )
        }
        Err(e) => (false, format!("report did not parse: {e}")),
    };
    Verdict {
        id: 6,
        pass,
        detail,
    }
}

fn tree_hashes(root: &Path) -> Vec<(PathBuf, String)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let digest = Sha256::digest(std::fs::read(&p).unwrap());
                let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
                out.push((p.strip_prefix(root).unwrap().to_path_buf(), hex));
            }
        }
    }
    out.sort();
    out
}

fn c8_reproducibility(a: &Path, b: &Path) -> Verdict {
    let (ha, hb) = (tree_hashes(a), tree_hashes(b));
    let differing: Vec<_> = ha
        .iter()
        .zip(&hb)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.display().to_string())
        .collect();
    let ckpts = ha
        .iter()
        .filter(|(p, _)| p.extension().is_some_and(|e| e == "ckpt"))
        .count();
    Verdict {
        id: 8,
        pass: ha.len() == hb.len() && differing.is_empty() && ckpts > 0,
        detail: format!(
            "generate/train/eval/ablate/growth run twice: {} files each ({ckpts} checkpoints), \
             differing {differing:?}",
            ha.len()
        ),
    }
}

fn c7_rehearsal() -> Verdict {
    let plan: StepPlan = C2_PLAN.parse().unwrap();
    let first = StepPlan::new(vec![plan.groups()[0].clone()]).unwrap();
    let per_subject = GeneratorConfig::default().train_per_subject;
    let capacities = [0, per_subject / 4, per_subject];
    let mut lines = Vec::new();
    let mut ok = 0;
    for seed in REHEARSAL_SEEDS {
        let data = generate(&GeneratorConfig::default(), seed).unwrap();
        let base = TrainConfig {
            epochs: REHEARSAL_EPOCHS,
            seed,
            sc_trainable_steps: REHEARSAL_SC_STEPS,
            ..TrainConfig::default()
        };
        let step1 = train::<f32>(&first, &data, &base, TrainMode::Cobra).unwrap();
        let accs: Vec<f64> = capacities
            .iter()
            .map(|&c| {
                let cfg = TrainConfig {
                    buffer_capacity: c,
                    ..base.clone()
                };
                let out = resume::<f32>(&step1.checkpoints, &plan, &data, &cfg, TrainMode::Cobra)
                    .unwrap();
                evaluate_group(
                    &out.model,
                    &data,
                    1,
                    &plan.groups()[0],
                    &EvalConfig::default(),
                )
                .unwrap()
                .retrieval
            })
            .collect();
        let monotone = accs.windows(2).all(|w| w[1] >= w[0]);
        ok += monotone as usize;
        lines.push(format!(
            "seed {seed}: {} ({})",
            accs.iter()
                .map(|a| format!("{a:.3}"))
                .collect::<Vec<_>>()
                .join("/"),
            if monotone {
                "non-decreasing"
            } else {
                "not monotone"
            }
        ));
    }
    Verdict {
        id: 7,
        pass: ok >= REHEARSAL_REQUIRED,
        detail: format!(
            "old-group 2-way retrieval at capacities {capacities:?} per subject, COBRA, \
             {REHEARSAL_EPOCHS} epochs, SC trainable for {REHEARSAL_SC_STEPS} steps: {}; \
             {ok}/{} seeds non-decreasing (need {REHEARSAL_REQUIRED})",
            lines.join(", "),
            REHEARSAL_SEEDS.len()
        ),
    }
}

fn main() {
    let started = Instant::now();
    let mut verdicts = Vec::new();
    let mut emit = |v: Verdict| {
        report(&v);
        verdicts.push(v);
    };

    emit(c1_gradients());
    let data = generate(&GeneratorConfig::default(), 0).unwrap();
    let c2 = c2_forgetting(&data);
    emit(c2.verdict);
    emit(c3_top_k());
    emit(c4_learning(&data, &c2.cobra_step1));
    emit(c5_growth());
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    pipeline(&a);
    pipeline(&b);
    emit(c6_ablation(&a));
    emit(c7_rehearsal());
    emit(c8_reproducibility(&a, &b));

    verdicts.sort_by_key(|v| v.id);
    let passed = verdicts.iter().filter(|v| v.pass).count();
    println!(
        "acceptance: {passed}/{} criteria passed in {}",
        verdicts.len(),
        secs(started.elapsed())
    );
    if passed != verdicts.len() {
        std::process::exit(1);
    }
}
