//! Shared encoding stack: tokenizer and vocabulary, embedding + LSTM
//! question encoder, residual CNN image encoder and region features.

mod image;
mod text;
mod tokenize;
mod vocab;

pub use self::image::{
    grid_boxes, prepare_image, prepare_regions, select_regions, ImageEncoder, Planar, PreparedImage, PreparedRegions,
    ResidualTrunk,
};
pub use text::{LstmEncoder, TextEmbedding};
pub use tokenize::tokenize;
pub use vocab::{build_vocab, TokenSequence, Vocabulary, CLS_ID, PAD_ID, SEP_ID, SPECIAL_TOKENS, UNK_ID};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("cannot build a vocabulary from an empty manifest")]
    EmptyManifest,
    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    OutOfVocabularyId { id: usize, vocab_size: usize },
    #[error("token sequence contains only padding")]
    AllPadding,
    #[error("empty batch")]
    EmptyBatch,
    #[error("expected an 8-bit RGB image, got {0}")]
    NonRGBInput(String),
    #[error("no region boxes (enable grid fallback to encode anyway)")]
    EmptyBoxList,
    #[error("box {index} lies outside the {width}x{height} image")]
    InvalidBox { index: usize, width: u32, height: u32 },
    #[error("{what}: expected dimension {expected}, got {actual}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },
    #[error("invalid vocabulary: {0}")]
    InvalidVocabulary(String),
    #[error("pretrained vectors line {line}: cannot parse {value:?}")]
    InvalidPretrained { line: usize, value: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Where region boxes come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionSource {
    /// Element boxes reported by the renderer (or shipped with the data).
    GroundTruth,
    /// A uniform `grid_size × grid_size` grid, ignoring element boxes.
    Grid,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    /// LSTM hidden size `H`.
    pub hidden_dim: usize,
    /// Image/region feature size `D_img`.
    pub image_dim: usize,
    pub max_question_length: usize,
    pub trunk_channels: Vec<usize>,
    pub blocks_per_stage: usize,
    /// Whole-image input size fed to the trunk.
    pub image_width: usize,
    pub image_height: usize,
    pub patch_size: usize,
    pub max_regions: usize,
    pub region_source: RegionSource,
    pub grid_size: usize,
    /// Use grid regions when an image has no element boxes.
    pub grid_fallback: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 128,
            hidden_dim: 128,
            image_dim: 128,
            max_question_length: 32,
            trunk_channels: vec![8, 16, 32, 64],
            blocks_per_stage: 2,
            image_width: 128,
            image_height: 96,
            patch_size: 32,
            max_regions: 36,
            region_source: RegionSource::GroundTruth,
            grid_size: 6,
            grid_fallback: true,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("image_dim", self.image_dim),
            ("max_question_length", self.max_question_length),
            ("blocks_per_stage", self.blocks_per_stage),
            ("image_width", self.image_width),
            ("image_height", self.image_height),
            ("patch_size", self.patch_size),
            ("max_regions", self.max_regions),
            ("grid_size", self.grid_size),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(format!("encoder.{name} must be positive"));
        }
        if self.trunk_channels.is_empty() || self.trunk_channels.contains(&0) {
            return Err("encoder.trunk_channels must be a non-empty list of positive sizes".into());
        }
        Ok(())
    }
}
