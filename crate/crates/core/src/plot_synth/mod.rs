//! Synthetic plot generation with exact ground truth: plot specs, a
//! rasteriser that reports element boxes, templated yes/no questions
//! answered by an oracle, balanced split assembly, and PlotQA ingestion.

mod dataset;
mod font;
mod plotqa;
mod render;
mod spec;
mod templates;

pub use dataset::{
    boxes_rel_path, build_split, generate_dataset, image_rel_path, load_boxes, load_specs, mix_seed, Counts,
    DatasetConfig, DatasetManifest, GeneratedDataset, QAItem, SplitName, PLOTS_FILE, SKIP_LOG_FILE,
};
pub use plotqa::{ingest_plotqa, AnswerFilter, IngestOptions, UNMATCHED_TEMPLATE};
pub use render::{
    nice_axis, render_plot, RegionBox, RegionLabel, Rendered, DEFAULT_HEIGHT, DEFAULT_WIDTH, MIN_DIMENSION,
};
pub use spec::{sample_plot_spec, sample_plot_spec_with, PlotKind, PlotSpec, SamplerConfig, Series};
pub use templates::{
    generate_questions, oracle_answer, oracle_answer_in, Answer, Category, GeneratedQuestions, SkipRecord, Slot, Slots,
    Template, TemplateSet, TEMPLATE_SET_ID,
};

use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("image {width}x{height} is too small for the plot layout (minimum {min}px per side)")]
    DimensionTooSmall { width: u32, height: u32, min: u32 },
    #[error("unknown template {0:?}")]
    UnknownTemplate(String),
    #[error("template {template_id} has unbound or out-of-range slot {slot}")]
    UnboundSlot { template_id: String, slot: String },
    #[error("template {template_id} not applicable: {reason}")]
    TemplateNotApplicable { template_id: String, reason: String },
    #[error("insufficient pool: need {needed} {answer} items, only {available} available (deficit {})", needed - available)]
    InsufficientPool {
        answer: Answer,
        needed: usize,
        available: usize,
    },
    #[error("parse error in record {index}: {message}")]
    Parse { index: usize, message: String },
    #[error("missing images: {}", .0.join(", "))]
    MissingImage(Vec<String>),
    #[error("invalid plot spec: {0}")]
    InvalidSpec(String),
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    IoAt { path: String, source: std::io::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

impl SynthError {
    pub(crate) fn io_at(path: &Path, source: std::io::Error) -> Self {
        SynthError::IoAt {
            path: path.display().to_string(),
            source,
        }
    }
}
