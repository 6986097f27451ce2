use std::path::{Path, PathBuf};

use cobra_core::eval::{
    ablation_csv, emit_report, evaluate_group, evaluate_run, forgetting_csv, groups_csv,
    growth_csv, param_growth_curve, snapshot_from_bytes, AblationRow, MetricReport, ReportHeader,
    Snapshot,
};
use cobra_core::model::checkpoint;
use cobra_core::synthdata::{self, file as datafile};
use cobra_core::trainer::{self, write_log, StepPlan, TrainMode};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::error::{io_error, CliError};

#[derive(Serialize)]
struct RunInfo<'a> {
    version: &'a str,
    command: &'a str,
    seed: u64,
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

/// Records the resolved config and the run identity next to the outputs.
fn record_run(
    cfg: &ExperimentConfig,
    command: &str,
    config_path: &Path,
    run_path: &Path,
) -> Result<(), CliError> {
    write(config_path, cfg.to_toml())?;
    let info = RunInfo {
        version: cobra_core::VERSION,
        command,
        seed: cfg.seed,
    };
    write(
        run_path,
        toml::to_string(&info).expect("run info is plain data"),
    )
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

fn load_data(path: &Path) -> Result<synthdata::Dataset, CliError> {
    datafile::load(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn generate(config: &Path, seed: Option<u64>, out: &Path) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = synthdata::generate(&cfg.data, cfg.seed)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    datafile::save(&data, out).map_err(|e| CliError::Data(format!("{}: {e}", out.display())))?;
    record_run(
        &cfg,
        "generate",
        &sibling(out, ".config.toml"),
        &sibling(out, ".run.toml"),
    )?;
    println!(
        "wrote {} samples for {} subjects to {}",
        data.samples.len(),
        data.subjects.len(),
        out.display()
    );
    Ok(())
}

pub struct TrainArgs<'a> {
    pub config: &'a Path,
    pub data: &'a Path,
    pub plan: Option<&'a str>,
    pub mode: Option<TrainMode>,
    pub buffer: Option<usize>,
    pub out: Option<&'a Path>,
}

pub fn checkpoint_name(step: usize) -> String {
    format!("step-{step}.ckpt")
}

pub fn train(args: TrainArgs<'_>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(args.config)?;
    if let Some(p) = args.plan {
        cfg.plan.steps = p.to_string();
    }
    if let Some(m) = args.mode {
        cfg.plan.mode = m;
    }
    if let Some(b) = args.buffer {
        cfg.train.buffer_capacity = b;
    }
    if let Some(o) = args.out {
        cfg.output.dir = o.to_path_buf();
    }
    cfg.validate()?;
    let plan = cfg.plan()?;
    let data = load_data(args.data)?;
    let outcome = trainer::train::<f32>(&plan, &data, &cfg.training(), cfg.plan.mode)?;
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    for ck in &outcome.checkpoints {
        write(&dir.join(checkpoint_name(ck.step)), &ck.bytes)?;
    }
    let log_path = dir.join("train_log.ndjson");
    write_log(&outcome.log, &log_path)
        .map_err(|e| CliError::Data(format!("{}: {e}", log_path.display())))?;
    record_run(
        &cfg,
        "train",
        &dir.join("config.toml"),
        &dir.join("run.toml"),
    )?;
    if let Some(last) = outcome.log.last() {
        println!(
            "trained {} step(s) in {} mode; final epoch loss {:.6}",
            plan.len(),
            cfg.plan.mode.as_str(),
            last.total
        );
    }
    println!("checkpoints in {}", dir.display());
    Ok(())
}

/// `step-<n>.ckpt` files of `dir`, ordered by step.
pub fn checkpoint_files(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let entries = std::fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut found = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_error(dir, e))?.path();
        let name = path
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default();
        if let Some(step) = name
            .strip_prefix("step-")
            .and_then(|r| r.strip_suffix(".ckpt"))
            .and_then(|n| n.parse::<usize>().ok())
        {
            found.push((step, path));
        }
    }
    found.sort();
    for (i, (step, _)) in found.iter().enumerate() {
        if *step != i + 1 {
            return Err(CliError::Data(format!(
                "missing checkpoint {} in {}",
                checkpoint_name(i + 1),
                dir.display()
            )));
        }
    }
    if found.is_empty() {
        return Err(CliError::Data(format!(
            "no checkpoints in {}",
            dir.display()
        )));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

pub fn eval(config: &Path, checkpoints: &Path, data: &Path, report: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let data = load_data(data)?;
    let mut snaps: Vec<Snapshot<f32>> = Vec::new();
    let mut header = None;
    for path in checkpoint_files(checkpoints)? {
        let bytes = std::fs::read(&path).map_err(|e| io_error(&path, e))?;
        let snap = snapshot_from_bytes(&bytes)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        if header.is_none() {
            let (_, h) = checkpoint::decode::<f32>(&bytes)?;
            header = Some(ReportHeader {
                crate_version: cobra_core::VERSION.to_string(),
                mode: h.meta.get("mode").cloned().unwrap_or_default(),
                plan: h.meta.get("plan").cloned().unwrap_or_default(),
                seed: h.seed,
                n_way: cfg.eval.n_way,
                eval_seed: cfg.eval.seed,
            });
        }
        snaps.push(snap);
    }
    let header = header.expect("checkpoint_files never returns an empty list");
    let report_data = evaluate_run(&snaps, &data, &cfg.eval, header)?;
    if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    emit_report(&report_data, report)
        .map_err(|e| CliError::Data(format!("{}: {e}", report.display())))?;
    write(&sibling(report, ".groups.csv"), groups_csv(&report_data))?;
    write(
        &sibling(report, ".forgetting.csv"),
        forgetting_csv(&report_data),
    )?;
    print!("{}", groups_csv(&report_data));
    if !report_data.forgetting.is_empty() {
        print!("{}", forgetting_csv(&report_data));
    }
    Ok(())
}

pub fn parse_topk(list: &str) -> Result<Vec<usize>, CliError> {
    let mut ks = list
        .split(',')
        .map(|k| {
            k.trim()
                .parse::<usize>()
                .map_err(|_| CliError::Config(format!("bad top-k value {k:?}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    ks.sort_unstable();
    ks.dedup();
    Ok(ks)
}

pub fn ablate(config: &Path, data: &Path, topk: &str, out: Option<&Path>) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(config)?;
    if let Some(o) = out {
        cfg.output.dir = o.to_path_buf();
    }
    let ks = parse_topk(topk)?;
    for &k in &ks {
        cfg.model.check_top_k(k)?;
    }
    let plan: StepPlan = cfg.plan()?;
    let data = load_data(data)?;
    let all = plan.subjects();
    let mut report = MetricReport::empty(ReportHeader {
        crate_version: cobra_core::VERSION.to_string(),
        mode: cfg.plan.mode.as_str().to_string(),
        plan: plan.to_string(),
        seed: cfg.seed,
        n_way: cfg.eval.n_way,
        eval_seed: cfg.eval.seed,
    });
    for k in ks {
        let mut tc = cfg.training();
        tc.model.top_k = k;
        let outcome = trainer::train::<f32>(&plan, &data, &tc, cfg.plan.mode)?;
        let g = evaluate_group(&outcome.model, &data, plan.len(), &all, &cfg.eval)?;
        report.ablation.push(AblationRow {
            top_k: k,
            retrieval: g.retrieval,
            retrieval_full: g.retrieval_full,
            mean_cosine: g.mean_cosine,
            sc_f1: g.sc_f1,
            pss_accuracy: g.pss_accuracy,
            params: outcome.model.param_count(),
        });
        println!("top_k {k}: retrieval {:.4}", g.retrieval);
    }
    let dir = &cfg.output.dir;
    create_dir(dir)?;
    let path = dir.join("ablation.ndjson");
    emit_report(&report, &path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    write(&dir.join("ablation.csv"), ablation_csv(&report))?;
    record_run(
        &cfg,
        "ablate",
        &dir.join("config.toml"),
        &dir.join("run.toml"),
    )?;
    Ok(())
}

pub fn growth(config: &Path, max_subjects: usize, out: &Path) -> Result<(), CliError> {
    let cfg = ExperimentConfig::load(config)?;
    let rows = param_growth_curve(&cfg.model, max_subjects)?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    let csv = growth_csv(&rows);
    write(out, &csv)?;
    record_run(
        &cfg,
        "growth",
        &sibling(out, ".config.toml"),
        &sibling(out, ".run.toml"),
    )?;
    print!("{csv}");
    Ok(())
}

pub fn config_template(out: Option<&Path>) -> Result<(), CliError> {
    let text = ExperimentConfig::default().to_toml();
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}
