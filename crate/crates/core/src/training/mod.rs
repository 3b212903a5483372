//! Seeded training loop, loss, optimizers, gradient verification and
//! checkpoint I/O.

mod checkpoint;
mod data;
mod gradcheck;
mod optim;
mod trainer;

pub use checkpoint::{
    config_hash, load_checkpoint, load_checkpoint_into, load_optimizer, read_metadata, save_checkpoint,
    save_training_checkpoint, sha256_hex, CheckpointInfo, CheckpointMeta, VocabRef, FORMAT_VERSION, METADATA_FILE,
};
pub use data::PreparedSplit;
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport, GradObjective, GroupCheck};
pub use optim::{Optimizer, OptimizerKind};
pub use trainer::{predict_split, score_split, train, BestSnapshot, TrainOutcome, Trainer};

use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;
use thiserror::Error;

use crate::encoders::EncoderError;
use crate::evaluation::EvalError;
use crate::fusion::{FusionError, FusionVariant};
use crate::plot_synth::SynthError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("loss diverged to {loss} at epoch {epoch}, batch {batch}")]
    DivergedLoss { epoch: usize, batch: usize, loss: f64 },
    #[error("variant {variant} cannot train on this data: {reason}")]
    IncompatibleVariant { variant: FusionVariant, reason: String },
    #[error("logits batch has {logits} rows but {labels} labels were given")]
    ShapeMismatch { logits: usize, labels: usize },
    #[error("corrupt checkpoint {path}: {message}")]
    CorruptCheckpoint { path: String, message: String },
    #[error("checkpoint holds a {found} model, expected {expected}")]
    VariantMismatch {
        expected: FusionVariant,
        found: FusionVariant,
    },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub dropout_rate: f64,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    pub freeze_trunk: bool,
    /// Global gradient-norm clip; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
    /// Stop once an epoch's training accuracy reaches this value.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 8,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            dropout_rate: 0.2,
            seed: 0,
            early_stop_patience: None,
            freeze_trunk: false,
            max_grad_norm: Some(5.0),
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    /// A learning rate of exactly zero is accepted (null-update runs).
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::InvalidConfig(m));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must lie in [0, 1), got {}", self.dropout_rate));
        }
        if self.max_grad_norm.is_some_and(|n| !(n > 0.0)) {
            return bad("max_grad_norm must be positive".into());
        }
        if self.early_stop_patience == Some(0) {
            return bad("early_stop_patience must be at least 1".into());
        }
        Ok(())
    }
}

/// Mean two-class cross-entropy of `[batch, 2]` logits, stabilized by
/// subtracting the row maximum before exponentiating.
pub fn loss(logits: &ndarray::Array2<f64>, labels: &[usize]) -> Result<f64, TrainError> {
    if logits.nrows() != labels.len() || logits.ncols() != 2 || labels.iter().any(|&y| y > 1) {
        return Err(TrainError::ShapeMismatch {
            logits: logits.nrows(),
            labels: labels.len(),
        });
    }
    if labels.is_empty() {
        return Err(TrainError::ShapeMismatch { logits: 0, labels: 0 });
    }
    let total: f64 = logits
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(r, &y)| {
            let max = r[0].max(r[1]);
            let lse = ((r[0] - max).exp() + (r[1] - max).exp()).ln() + max;
            lse - r[y]
        })
        .sum();
    Ok(total / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub seconds: f64,
}

/// Per-epoch records, serialized as CSV.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

pub const HISTORY_HEADER: [&str; 6] = ["epoch", "train_loss", "train_acc", "val_acc", "val_f1", "seconds"];

impl TrainHistory {
    pub fn to_csv(&self) -> String {
        let mut out = HISTORY_HEADER.join(",");
        out.push('\n');
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{:.3}\n",
                r.epoch, r.train_loss, r.train_accuracy, r.val_accuracy, r.val_f1, r.seconds
            ));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn read_csv(path: &Path) -> Result<Self, TrainError> {
        let mut reader =
            csv::Reader::from_path(path).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, row) in reader.records().enumerate() {
            let row = row.map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
            let field = |k: usize| -> Result<f64, TrainError> {
                row.get(k).and_then(|v| v.parse().ok()).ok_or_else(|| {
                    TrainError::Data(format!(
                        "{} row {}: bad column {}",
                        path.display(),
                        i + 1,
                        HISTORY_HEADER[k]
                    ))
                })
            };
            records.push(EpochRecord {
                epoch: field(0)? as usize,
                train_loss: field(1)?,
                train_accuracy: field(2)?,
                val_accuracy: field(3)?,
                val_f1: field(4)?,
                seconds: field(5)?,
            });
        }
        Ok(Self { records })
    }
}
