use plotvqa::plot_synth::{ingest_plotqa, mix_seed, Answer, DatasetManifest, IngestOptions, SplitName};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::PathBuf;

use super::generate::{summarize, SplitSummary};
use super::{ensure_fresh, publish, staging_dir};
use crate::{CliError, Result};

#[derive(Debug, Clone)]
pub struct IngestArgs {
    pub qa_file: PathBuf,
    pub images_dir: PathBuf,
    pub split: SplitName,
    /// Subsample the majority answer so yes and no counts match.
    pub balance: bool,
    pub seed: u64,
    pub out: PathBuf,
}

/// Reads a PlotQA-format file and writes a manifest for one split into
/// `out`. Images stay where they are; the manifest records their paths.
pub fn ingest(args: &IngestArgs) -> Result<SplitSummary> {
    ensure_fresh(&args.out, "choose another --out")?;
    let images_dir = fs::canonicalize(&args.images_dir)
        .map_err(|e| CliError::Data(format!("{}: {e}", args.images_dir.display())))?;
    let options = IngestOptions {
        split: args.split,
        ..IngestOptions::default()
    };
    let mut manifest = ingest_plotqa(&args.qa_file, &images_dir, &options)?;
    if manifest.is_empty() {
        return Err(CliError::Data(format!(
            "{} holds no yes/no questions",
            args.qa_file.display()
        )));
    }
    if args.balance && !manifest.is_balanced() {
        manifest = balance(&manifest, args.seed);
    }

    let staging = staging_dir(&args.out);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    fs::create_dir_all(&staging)?;
    if let Err(e) = manifest.save(&staging) {
        let _ = fs::remove_dir_all(&staging);
        return Err(e.into());
    }
    publish(&staging, &args.out)?;
    Ok(summarize(&manifest))
}

fn balance(m: &DatasetManifest, seed: u64) -> DatasetManifest {
    let (mut yes, mut no): (Vec<_>, Vec<_>) = m.items.iter().cloned().partition(|i| i.answer == Answer::Yes);
    let keep = yes.len().min(no.len());
    yes.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 0)));
    no.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(seed, 1)));
    yes.truncate(keep);
    no.truncate(keep);
    let kept: std::collections::BTreeSet<String> = yes.iter().chain(&no).map(|i| i.qa_id.clone()).collect();
    let items: Vec<_> = m.items.iter().filter(|i| kept.contains(&i.qa_id)).cloned().collect();
    let image_paths = m
        .image_paths
        .iter()
        .filter(|(id, _)| items.iter().any(|i| &i.plot_id == *id))
        .map(|(k, v)| (k.clone(), v.clone()))
        .collect();
    DatasetManifest::new(m.split_name, m.template_set.clone(), items, image_paths)
}
