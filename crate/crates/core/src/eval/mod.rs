//! Evaluation loop, metrics and report rendering.

pub mod metrics;
mod report;
mod run;

pub use metrics::{compute_metrics, format_percent, format_signed_percent, CellMetrics, Confusion, MetricsError};
pub use report::{
    compare_runs, published_reports, render_csv, render_deltas, render_report, render_table,
    reports_from_accuracy_table, CellDelta, EvalReport, ReportCell, ReportError, ReportFormat, ReportMetadata,
    PUBLISHED_ACCURACY_CSV,
};
pub use run::{run_eval, run_eval_with, EvalDeps, EvalError, InstructionSource, PredictionStore, RunConfig};
