//! The three fusion architectures over the shared encoders, all ending in
//! the same shallow classifier.

mod config;
mod crossmodal;
mod model;

pub use config::{Activation, CrossModalityConfig, FusionVariant, ModelConfig, ShallowClassifierConfig};
pub use crossmodal::CrossModalEncoder;
pub use model::{
    classify, count_parameters, Example, FusionModel, Mode, ParameterCount, Prediction, ShallowClassifier,
};

use crate::encoders::EncoderError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum FusionError {
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("text sequence of {length} tokens exceeds max_text_positions {max}")]
    SequenceTooLong { length: usize, max: usize },
    #[error("non-finite logits {0:?}")]
    NonFiniteLogits([f64; 2]),
    #[error("variant {variant} does not support {operation}")]
    IncompatibleVariant {
        variant: FusionVariant,
        operation: &'static str,
    },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}
