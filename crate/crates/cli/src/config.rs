//! Experiment configuration: one TOML file with `[dataset]`, `[model]`,
//! `[training]` and `[paths]` sections. Unknown keys are rejected and
//! every value is range-checked before any command touches the disk.

use plotvqa::encoders::EncoderConfig;
use plotvqa::fusion::{Activation, CrossModalityConfig, FusionVariant, ModelConfig, ShallowClassifierConfig};
use plotvqa::plot_synth::DatasetConfig;
use plotvqa::training::{GradCheckOptions, GradObjective, OptimizerKind, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetConfig,
    pub model: ModelSection,
    pub training: TrainingSection,
    pub paths: PathsSection,
}

/// Classifier architecture shared by every variant. Dropout is a training
/// hyperparameter and lives in `[training]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierSection {
    pub hidden_dim: usize,
    pub activation: Activation,
}

impl Default for ClassifierSection {
    fn default() -> Self {
        let c = ShallowClassifierConfig::default();
        Self {
            hidden_dim: c.hidden_dim,
            activation: c.activation,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: FusionVariant,
    pub vocab_min_count: usize,
    pub encoder: EncoderConfig,
    pub crossmodal: CrossModalityConfig,
    pub classifier: ClassifierSection,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            variant: FusionVariant::BaselineConcat,
            vocab_min_count: 1,
            encoder: EncoderConfig::default(),
            crossmodal: CrossModalityConfig::default(),
            classifier: ClassifierSection::default(),
        }
    }
}

/// A value that may differ per variant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerVariant<T> {
    pub baseline_concat: T,
    pub crossmodal: T,
    pub crossmodal_joint: T,
}

impl<T: Copy> PerVariant<T> {
    pub fn get(&self, v: FusionVariant) -> T {
        match v {
            FusionVariant::BaselineConcat => self.baseline_concat,
            FusionVariant::Crossmodal => self.crossmodal,
            FusionVariant::CrossmodalJoint => self.crossmodal_joint,
        }
    }
}

/// Optional per-variant overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariantOverrides<T> {
    pub baseline_concat: Option<T>,
    pub crossmodal: Option<T>,
    pub crossmodal_joint: Option<T>,
}

impl<T: Copy> VariantOverrides<T> {
    pub fn get(&self, v: FusionVariant) -> Option<T> {
        match v {
            FusionVariant::BaselineConcat => self.baseline_concat,
            FusionVariant::Crossmodal => self.crossmodal,
            FusionVariant::CrossmodalJoint => self.crossmodal_joint,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckSection {
    pub enabled: bool,
    /// Training examples in the step-0 check batch.
    pub examples: usize,
    pub epsilon: f64,
    pub sample_fraction: f64,
    /// Cap on checked scalars per parameter group (keeps the step-0 gate
    /// short at full width); `0` means no cap.
    pub max_per_group: usize,
    pub tolerance: f64,
    /// Deliberately corrupts one analytic partial; the gate must then fail.
    pub negative_control: bool,
}

impl Default for GradCheckSection {
    fn default() -> Self {
        Self {
            enabled: true,
            examples: 2,
            epsilon: 1e-4,
            sample_fraction: 0.01,
            max_per_group: 24,
            tolerance: 1e-3,
            negative_control: false,
        }
    }
}

impl GradCheckSection {
    pub fn options(&self, seed: u64) -> GradCheckOptions {
        GradCheckOptions {
            epsilon: self.epsilon,
            sample_fraction: self.sample_fraction,
            seed,
            max_per_group: (self.max_per_group > 0).then_some(self.max_per_group),
            objective: GradObjective::Loss,
            corrupt: self.negative_control,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// When set, every variant trains for this many epochs; otherwise the
    /// per-variant defaults in `variant_epochs` apply.
    pub epochs: Option<usize>,
    pub variant_epochs: PerVariant<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub variant_learning_rate: VariantOverrides<f64>,
    pub optimizer: OptimizerKind,
    pub dropout_rate: f64,
    pub seed: u64,
    pub early_stop_patience: Option<usize>,
    pub freeze_trunk: bool,
    pub max_grad_norm: Option<f64>,
    pub target_train_accuracy: Option<f64>,
    pub grad_check: GradCheckSection,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: None,
            variant_epochs: PerVariant {
                baseline_concat: 8,
                crossmodal: 100,
                crossmodal_joint: 100,
            },
            batch_size: t.batch_size,
            learning_rate: t.learning_rate,
            variant_learning_rate: VariantOverrides::default(),
            optimizer: t.optimizer,
            dropout_rate: t.dropout_rate,
            seed: t.seed,
            early_stop_patience: t.early_stop_patience,
            freeze_trunk: t.freeze_trunk,
            max_grad_norm: t.max_grad_norm,
            target_train_accuracy: t.target_train_accuracy,
            grad_check: GradCheckSection::default(),
        }
    }
}

impl TrainingSection {
    pub fn resolve(&self, variant: FusionVariant) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(self.variant_epochs.get(variant)),
            batch_size: self.batch_size,
            learning_rate: self.variant_learning_rate.get(variant).unwrap_or(self.learning_rate),
            optimizer: self.optimizer,
            dropout_rate: self.dropout_rate,
            seed: self.seed,
            early_stop_patience: self.early_stop_patience,
            freeze_trunk: self.freeze_trunk,
            max_grad_norm: self.max_grad_norm,
            target_train_accuracy: self.target_train_accuracy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub data_dir: PathBuf,
    pub runs_dir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            runs_dir: PathBuf::from("runs"),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// `--seed` overrides both the dataset and the training seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.dataset.seed = seed;
        self.training.seed = seed;
        self
    }

    pub fn model_config(&self, variant: FusionVariant, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            variant,
            vocab_size,
            encoder: self.model.encoder.clone(),
            crossmodal: self.model.crossmodal.clone(),
            classifier: ShallowClassifierConfig {
                hidden_dim: self.model.classifier.hidden_dim,
                dropout_rate: self.training.dropout_rate,
                activation: self.model.classifier.activation,
            },
            init_seed: self.training.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        self.dataset
            .validate()
            .map_err(|e| CliError::Config(format!("[dataset] {e}")))?;
        if self.model.vocab_min_count == 0 {
            return bad("[model] vocab_min_count must be at least 1".into());
        }
        for v in FusionVariant::ALL {
            self.model_config(v, 64)
                .validate()
                .map_err(|e| CliError::Config(format!("[model] {e}")))?;
            self.training
                .resolve(v)
                .validate()
                .map_err(|e| CliError::Config(format!("[training] {v}: {e}")))?;
        }
        let g = &self.training.grad_check;
        if g.examples == 0 {
            return bad("[training.grad_check] examples must be at least 1".into());
        }
        if !(g.epsilon > 0.0) {
            return bad("[training.grad_check] epsilon must be positive".into());
        }
        if !(g.sample_fraction > 0.0 && g.sample_fraction <= 1.0) {
            return bad("[training.grad_check] sample_fraction must lie in (0, 1]".into());
        }
        if !(g.tolerance > 0.0) {
            return bad("[training.grad_check] tolerance must be positive".into());
        }
        if let Some(t) = self.training.target_train_accuracy {
            if !(0.0..=1.0).contains(&t) {
                return bad("[training] target_train_accuracy must lie in [0, 1]".into());
            }
        }
        Ok(())
    }
}
