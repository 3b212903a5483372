//! Experiment driver behind the `plotvqa` binary: generate, ingest, train,
//! eval, compare and report.

pub mod commands;
pub mod config;

pub use config::ExperimentConfig;

use plotvqa::encoders::EncoderError;
use plotvqa::evaluation::EvalError;
use plotvqa::plot_synth::SynthError;
use plotvqa::training::TrainError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error("classifier parity violation: {0}")]
    ParityViolation(String),
    #[error("gradient check failed at step 0: max relative error {error:.3e} exceeds {tolerance:.1e}")]
    GradCheckFailed { error: f64, tolerance: f64 },
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    /// 1 usage/config error, 2 data error, 3 training failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::GradCheckFailed { .. } => 3,
            CliError::Train(e) => match e {
                TrainError::DivergedLoss { .. }
                | TrainError::IncompatibleVariant { .. }
                | TrainError::ShapeMismatch { .. }
                | TrainError::Fusion(_) => 3,
                TrainError::InvalidConfig(_) => 1,
                _ => 2,
            },
            _ => 2,
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;
