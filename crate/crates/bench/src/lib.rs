//! Shared fixtures for the benchmarks in `benches/`.

use plotvqa::encoders::{build_vocab, EncoderConfig, Vocabulary};
use plotvqa::plot_synth::{generate_dataset, DatasetConfig, SplitName};
use plotvqa::training::PreparedSplit;

pub use plotvqa;

/// A 64-question training split at desk-scale encoder settings.
pub fn desk_split(seed: u64) -> (PreparedSplit, Vocabulary) {
    let ds = generate_dataset(&DatasetConfig {
        questions: [64, 8, 8],
        images: [16, 2, 2],
        seed,
        ..DatasetConfig::default()
    })
    .expect("fixture dataset");
    let vocab = build_vocab(ds.split(SplitName::Train), 1).expect("vocab");
    let split = PreparedSplit::render(&ds, SplitName::Train, &vocab, &EncoderConfig::default()).expect("render");
    (split, vocab)
}
