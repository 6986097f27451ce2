//! Retrieval, forgetting, auxiliary accuracies, parameter growth and report
//! files.
//!
//! Retrieval is embedding-space identification: a predicted embedding is
//! compared by cosine with its own target and with distractor targets drawn
//! from the same subject's test set.

mod evaluate;
mod metrics;
mod report;

pub use evaluate::{
    evaluate_group, forgetting, growth_csv, param_growth_curve, param_rows, snapshot_from_bytes,
    snapshot_from_checkpoint, subject_metrics, subject_outputs, EvalConfig, ForgettingRow,
    GroupMetrics, GrowthRow, ParamRow, Snapshot, SubjectMetrics, SubjectOutputs,
};
pub use metrics::{
    argmax, binomial_sigma, cosine, fraction, mean_cosine, micro_f1, retrieval_accuracy,
    retrieval_hits, F1Counts,
};
pub use report::{
    ablation_csv, emit_report, evaluate_run, forgetting_csv, groups_csv, parse_report,
    render_report, round6, AblationRow, MetricReport, ReportHeader,
};
