//! Core-level metrics, the exact paired signed-rank test and report files.

mod metrics;
pub mod plot;
mod report;
mod wilcoxon;

pub use metrics::{
    auroc, balanced_accuracy, binary_entropy, centroid_grade_auroc, core_score, mann_whitney_doubled, mean_entropy, per_grade_auroc,
    roc_points, sens_at_spec, CoreScore, EntropyAccumulator, PositiveRule, RocPoint, ENTROPY_CLAMP, SPEC_TARGETS,
};
pub use report::{
    emit_report, metrics_csv, read_reports, summarize, sweep_series, EvalReport, EvalSettings, GroupSummary,
    ReportFiles, RunTag, SensTable, SweepSeries, CSV_HEADER,
};
pub use wilcoxon::{doubled_ranks, wilcoxon_signed_rank_exact, WilcoxonResult, MAX_EXACT_N};
