use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

use crate::encoders::EncoderConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionVariant {
    /// LSTM question vector concatenated with the pooled CNN image vector.
    BaselineConcat,
    /// Transformer over `[CLS] + text tokens + region tokens`.
    Crossmodal,
    /// Crossmodal CLS vector concatenated with the whole-image vector.
    CrossmodalJoint,
}

impl FusionVariant {
    pub const ALL: [FusionVariant; 3] = [
        FusionVariant::BaselineConcat,
        FusionVariant::Crossmodal,
        FusionVariant::CrossmodalJoint,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FusionVariant::BaselineConcat => "baseline_concat",
            FusionVariant::Crossmodal => "crossmodal",
            FusionVariant::CrossmodalJoint => "crossmodal_joint",
        }
    }

    pub fn uses_regions(&self) -> bool {
        !matches!(self, FusionVariant::BaselineConcat)
    }

    pub fn uses_whole_image(&self) -> bool {
        !matches!(self, FusionVariant::Crossmodal)
    }
}

impl fmt::Display for FusionVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FusionVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline_concat" | "baseline" => Ok(FusionVariant::BaselineConcat),
            "crossmodal" => Ok(FusionVariant::Crossmodal),
            "crossmodal_joint" | "joint" => Ok(FusionVariant::CrossmodalJoint),
            other => Err(format!(
                "unknown variant {other:?} (expected baseline_concat, crossmodal or crossmodal_joint)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShallowClassifierConfig {
    pub hidden_dim: usize,
    pub dropout_rate: f64,
    pub activation: Activation,
}

impl Default for ShallowClassifierConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 256,
            dropout_rate: 0.2,
            activation: Activation::Gelu,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrossModalityConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub model_dim: usize,
    pub feedforward_dim: usize,
    pub max_text_positions: usize,
}

impl Default for CrossModalityConfig {
    fn default() -> Self {
        Self {
            num_layers: 4,
            num_heads: 4,
            model_dim: 128,
            feedforward_dim: 256,
            max_text_positions: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub variant: FusionVariant,
    pub vocab_size: usize,
    #[serde(default)]
    pub encoder: EncoderConfig,
    #[serde(default)]
    pub crossmodal: CrossModalityConfig,
    #[serde(default)]
    pub classifier: ShallowClassifierConfig,
    #[serde(default)]
    pub init_seed: u64,
}

impl ModelConfig {
    pub fn new(variant: FusionVariant, vocab_size: usize) -> Self {
        Self {
            variant,
            vocab_size,
            encoder: EncoderConfig::default(),
            crossmodal: CrossModalityConfig::default(),
            classifier: ShallowClassifierConfig::default(),
            init_seed: 0,
        }
    }

    /// Classifier input width for this variant.
    pub fn classifier_input_dim(&self) -> usize {
        match self.variant {
            FusionVariant::BaselineConcat => self.encoder.hidden_dim + self.encoder.image_dim,
            FusionVariant::Crossmodal => self.crossmodal.model_dim,
            FusionVariant::CrossmodalJoint => self.crossmodal.model_dim + self.encoder.image_dim,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        self.encoder.validate()?;
        if self.vocab_size < crate::encoders::SPECIAL_TOKENS.len() {
            return Err("vocab_size must cover the special tokens".into());
        }
        let c = &self.classifier;
        if c.hidden_dim == 0 {
            return Err("classifier.hidden_dim must be positive".into());
        }
        if !(0.0..1.0).contains(&c.dropout_rate) {
            return Err(format!(
                "classifier.dropout_rate must lie in [0, 1), got {}",
                c.dropout_rate
            ));
        }
        if self.variant.uses_regions() {
            let x = &self.crossmodal;
            if x.num_layers == 0 || x.num_heads == 0 || x.model_dim == 0 || x.feedforward_dim == 0 {
                return Err("crossmodal sizes must be positive".into());
            }
            if !x.model_dim.is_multiple_of(x.num_heads) {
                return Err(format!(
                    "crossmodal.model_dim ({}) must be divisible by num_heads ({})",
                    x.model_dim, x.num_heads
                ));
            }
            if x.max_text_positions == 0 {
                return Err("crossmodal.max_text_positions must be positive".into());
            }
        }
        Ok(())
    }
}
