use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};
use crate::numerics::Scalar;
use crate::synthdata::Dataset;

use super::evaluate::{
    evaluate_group, forgetting, param_rows, subject_metrics, subject_outputs, EvalConfig,
    ForgettingRow, GroupMetrics, ParamRow, Snapshot, SubjectMetrics,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportHeader {
    pub crate_version: String,
    pub mode: String,
    pub plan: String,
    pub seed: u64,
    pub n_way: usize,
    pub eval_seed: u64,
}

/// One row of a top-k sweep: metrics averaged over all trained subjects of
/// the final model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub top_k: usize,
    pub retrieval: f64,
    pub retrieval_full: f64,
    pub mean_cosine: f64,
    pub sc_f1: f64,
    pub pss_accuracy: f64,
    pub params: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub header: ReportHeader,
    pub subjects: Vec<SubjectMetrics>,
    pub groups: Vec<GroupMetrics>,
    pub forgetting: Vec<ForgettingRow>,
    pub params: Vec<ParamRow>,
    pub ablation: Vec<AblationRow>,
}

impl MetricReport {
    pub fn empty(header: ReportHeader) -> Self {
        MetricReport {
            header,
            subjects: Vec::new(),
            groups: Vec::new(),
            forgetting: Vec::new(),
            params: Vec::new(),
            ablation: Vec::new(),
        }
    }

    /// Same report with every float rounded to 6 significant digits, i.e.
    /// exactly what a written report parses back to.
    pub fn rounded(&self) -> Self {
        let mut r = self.clone();
        for s in &mut r.subjects {
            for v in [
                &mut s.retrieval,
                &mut s.retrieval_full,
                &mut s.mean_cosine,
                &mut s.sc_f1,
                &mut s.pss_accuracy,
            ] {
                *v = round6(*v);
            }
        }
        for g in &mut r.groups {
            for v in [
                &mut g.retrieval,
                &mut g.retrieval_full,
                &mut g.mean_cosine,
                &mut g.sc_f1,
                &mut g.pss_accuracy,
            ] {
                *v = round6(*v);
            }
        }
        for f in &mut r.forgetting {
            for v in [&mut f.before, &mut f.after, &mut f.delta] {
                *v = round6(*v);
            }
        }
        for a in &mut r.ablation {
            for v in [
                &mut a.retrieval,
                &mut a.retrieval_full,
                &mut a.mean_cosine,
                &mut a.sc_f1,
                &mut a.pss_accuracy,
            ] {
                *v = round6(*v);
            }
        }
        r
    }
}

/// Rounds to 6 significant digits.
pub fn round6(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.5e}").parse().unwrap_or(x)
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum Record {
    Header(ReportHeader),
    Subject(SubjectMetrics),
    Group(GroupMetrics),
    Forgetting(ForgettingRow),
    Params(ParamRow),
    Ablation(AblationRow),
}

/// Evaluates a run from its per-step snapshots: final-model metrics per
/// subject and per group, forgetting for every earlier group, and parameter
/// counts per step.
pub fn evaluate_run<S: Scalar>(
    snapshots: &[Snapshot<S>],
    data: &Dataset,
    cfg: &EvalConfig,
    header: ReportHeader,
) -> Result<MetricReport> {
    cfg.validate()?;
    let last = snapshots
        .last()
        .ok_or_else(|| CobraError::Input("no checkpoints to evaluate".into()))?;
    let mut report = MetricReport::empty(header);
    for snap in snapshots {
        for &s in &snap.group {
            let o = subject_outputs(&last.model, data, s)?;
            report.subjects.push(subject_metrics(&o, snap.step, cfg)?);
        }
        report.groups.push(evaluate_group(
            &last.model,
            data,
            snap.step,
            &snap.group,
            cfg,
        )?);
    }
    if snapshots.len() >= 2 {
        report.forgetting = forgetting(snapshots, data, cfg)?;
    }
    report.params = param_rows(snapshots);
    Ok(report)
}

pub fn render_report(report: &MetricReport) -> Result<String> {
    let r = report.rounded();
    let mut out = String::new();
    let mut push = |rec: Record| -> Result<()> {
        out.push_str(&serde_json::to_string(&rec)?);
        out.push('\n');
        Ok(())
    };
    push(Record::Header(r.header))?;
    for x in r.subjects {
        push(Record::Subject(x))?;
    }
    for x in r.groups {
        push(Record::Group(x))?;
    }
    for x in r.forgetting {
        push(Record::Forgetting(x))?;
    }
    for x in r.params {
        push(Record::Params(x))?;
    }
    for x in r.ablation {
        push(Record::Ablation(x))?;
    }
    Ok(out)
}

/// Writes the report as newline-delimited JSON: one header record, then one
/// record per row, each tagged with `"kind"`.
pub fn emit_report(report: &MetricReport, path: &Path) -> Result<()> {
    let text = render_report(report)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

pub fn parse_report(text: &str) -> Result<MetricReport> {
    let mut header = None;
    let mut r = MetricReport::empty(ReportHeader {
        crate_version: String::new(),
        mode: String::new(),
        plan: String::new(),
        seed: 0,
        n_way: 0,
        eval_seed: 0,
    });
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        match serde_json::from_str::<Record>(line)? {
            Record::Header(h) => {
                if header.replace(h).is_some() {
                    return Err(CobraError::Format("report has two header records".into()));
                }
            }
            Record::Subject(x) => r.subjects.push(x),
            Record::Group(x) => r.groups.push(x),
            Record::Forgetting(x) => r.forgetting.push(x),
            Record::Params(x) => r.params.push(x),
            Record::Ablation(x) => r.ablation.push(x),
        }
    }
    r.header = header.ok_or_else(|| CobraError::Format("report has no header record".into()))?;
    Ok(r)
}

pub fn groups_csv(report: &MetricReport) -> String {
    let mut s = String::from(
        "step,subjects,samples,retrieval,retrieval_full,mean_cosine,sc_f1,pss_accuracy\n",
    );
    for g in &report.rounded().groups {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            g.step,
            join(&g.subjects),
            g.samples,
            g.retrieval,
            g.retrieval_full,
            g.mean_cosine,
            g.sc_f1,
            g.pss_accuracy
        ));
    }
    s
}

pub fn forgetting_csv(report: &MetricReport) -> String {
    let mut s = String::from("step,subjects,before,after,delta,identical\n");
    for f in &report.rounded().forgetting {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f.step,
            join(&f.subjects),
            f.before,
            f.after,
            f.delta,
            f.identical
        ));
    }
    s
}

pub fn ablation_csv(report: &MetricReport) -> String {
    let mut s =
        String::from("top_k,retrieval,retrieval_full,mean_cosine,sc_f1,pss_accuracy,params\n");
    for a in &report.rounded().ablation {
        s.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            a.top_k,
            a.retrieval,
            a.retrieval_full,
            a.mean_cosine,
            a.sc_f1,
            a.pss_accuracy,
            a.params
        ));
    }
    s
}

fn join(ids: &[u32]) -> String {
    ids.iter().map(u32::to_string).collect::<Vec<_>>().join(" ")
}
