#![allow(dead_code)]

use plotvqa::encoders::{build_vocab, EncoderConfig, Planar, PreparedImage, Vocabulary};
use plotvqa::fusion::{CrossModalityConfig, FusionModel, FusionVariant, ModelConfig, ShallowClassifierConfig};
use plotvqa::plot_synth::{
    generate_dataset, render_plot, sample_plot_spec, DatasetConfig, GeneratedDataset, PlotKind, SplitName,
};
use plotvqa::training::PreparedSplit;

/// Narrow encoder so double-precision checks stay fast.
pub fn tiny_encoder() -> EncoderConfig {
    EncoderConfig {
        embed_dim: 12,
        hidden_dim: 10,
        image_dim: 8,
        trunk_channels: vec![4, 6],
        blocks_per_stage: 1,
        image_width: 24,
        image_height: 16,
        patch_size: 8,
        max_regions: 10,
        ..EncoderConfig::default()
    }
}

pub fn tiny_model_config(variant: FusionVariant, vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        variant,
        vocab_size,
        encoder: tiny_encoder(),
        crossmodal: CrossModalityConfig {
            num_layers: 2,
            num_heads: 2,
            model_dim: 12,
            feedforward_dim: 16,
            max_text_positions: 32,
        },
        classifier: ShallowClassifierConfig {
            hidden_dim: 10,
            dropout_rate: 0.0,
            ..Default::default()
        },
        init_seed: seed,
    }
}

pub fn tiny_model(variant: FusionVariant, vocab_size: usize, seed: u64) -> FusionModel<f32> {
    FusionModel::new(tiny_model_config(variant, vocab_size, seed)).unwrap()
}

pub fn small_dataset(seed: u64) -> GeneratedDataset {
    generate_dataset(&DatasetConfig {
        questions: [64, 32, 32],
        images: [24, 8, 8],
        seed,
        ..DatasetConfig::default()
    })
    .unwrap()
}

pub struct Fixture {
    pub dataset: GeneratedDataset,
    pub vocab: Vocabulary,
    pub train: PreparedSplit,
    pub val: PreparedSplit,
}

pub fn fixture(seed: u64, encoder: &EncoderConfig) -> Fixture {
    let dataset = small_dataset(seed);
    let vocab = build_vocab(dataset.split(SplitName::Train), 1).unwrap();
    let train = PreparedSplit::render(&dataset, SplitName::Train, &vocab, encoder).unwrap();
    let val = PreparedSplit::render(&dataset, SplitName::Val, &vocab, encoder).unwrap();
    Fixture {
        dataset,
        vocab,
        train,
        val,
    }
}

/// Renders one sampled plot and prepares it.
pub fn prepared_plot(seed: u64, kind: PlotKind, cfg: &EncoderConfig) -> PreparedImage {
    let spec = sample_plot_spec(seed, kind);
    let r = render_plot(&spec, 448, 336).unwrap();
    plotvqa::encoders::prepare_image(&Planar::from_rgb(&r.image), &r.boxes, cfg).unwrap()
}
