//! Metric suite and error analyses: confusion-matrix metrics with "yes" as
//! the positive class, per-category breakdowns, pairwise error overlap and
//! report emission.

mod metrics;
mod report;

pub use metrics::{
    breakdown_by_category, compute_metrics, error_overlap, evaluate, read_predictions, write_predictions,
    CategoryMetrics, ConfusionMatrix, ErrorOverlap, EvalReport, Metrics, PredictionRecord, ScoredPrediction,
};
pub use report::{emit_report, fmt4, metrics_table, ReportFiles, METRIC_COLUMNS};

use std::path::Path;
use thiserror::Error;

use crate::plot_synth::SynthError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("empty prediction list")]
    EmptyPredictionList,
    #[error("qa_id {0:?} not found in manifest")]
    UnknownQaId(String),
    #[error("duplicate prediction for qa_id {0:?}")]
    DuplicateQaId(String),
    #[error("reports cover different evaluation sets: {0}")]
    MismatchedEvaluationSets(String),
    #[error("cannot write {path}: {source}")]
    WriteFailure { path: String, source: std::io::Error },
    #[error("predictions line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("chart rendering failed: {0}")]
    Render(#[from] SynthError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl EvalError {
    pub(crate) fn write(path: &Path, source: std::io::Error) -> Self {
        EvalError::WriteFailure {
            path: path.display().to_string(),
            source,
        }
    }
}
