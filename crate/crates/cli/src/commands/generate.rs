use plotvqa::plot_synth::{generate_dataset, Answer, Category, DatasetManifest, SplitName};
use serde::Serialize;
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::{ensure_fresh, publish, staging_dir, text_table};
use crate::{ExperimentConfig, Result};

pub const DATASET_CONFIG_FILE: &str = "dataset.toml";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSummary {
    pub split: SplitName,
    pub questions: usize,
    pub yes: usize,
    pub no: usize,
    pub images: usize,
    pub per_category: BTreeMap<Category, usize>,
}

pub fn summarize(m: &DatasetManifest) -> SplitSummary {
    let mut per_category = BTreeMap::new();
    for it in &m.items {
        *per_category.entry(it.category).or_insert(0) += 1;
    }
    SplitSummary {
        split: m.split_name,
        questions: m.len(),
        yes: m.items.iter().filter(|i| i.answer == Answer::Yes).count(),
        no: m.items.iter().filter(|i| i.answer == Answer::No).count(),
        images: m.plot_ids().len(),
        per_category,
    }
}

pub fn format_summary(rows: &[SplitSummary]) -> String {
    let cats = [
        Category::Structure,
        Category::DataRetrieval,
        Category::Reasoning,
        Category::Unknown,
    ];
    let shown: Vec<Category> = cats
        .into_iter()
        .filter(|c| rows.iter().any(|r| r.per_category.contains_key(c)))
        .collect();
    let mut header: Vec<String> = ["split", "questions", "yes", "no", "images"].map(String::from).to_vec();
    header.extend(shown.iter().map(|c| c.as_str().to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut row = vec![
                r.split.as_str().to_string(),
                r.questions.to_string(),
                r.yes.to_string(),
                r.no.to_string(),
                r.images.to_string(),
            ];
            row.extend(
                shown
                    .iter()
                    .map(|c| r.per_category.get(c).copied().unwrap_or(0).to_string()),
            );
            row
        })
        .collect();
    text_table(&header, &body)
}

#[derive(Serialize)]
struct Snapshot<'a> {
    dataset: &'a plotvqa::plot_synth::DatasetConfig,
}

/// Generates the three-split dataset into `out`. The directory is built
/// under a hidden staging name and only moved into place once complete.
pub fn generate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<SplitSummary>> {
    ensure_fresh(out, "datasets are never overwritten; choose another --out")?;
    let staging = staging_dir(out);
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let result = (|| -> Result<Vec<SplitSummary>> {
        let ds = generate_dataset(&cfg.dataset)?;
        ds.write(&staging)?;
        let snapshot = toml::to_string(&Snapshot { dataset: &cfg.dataset }).expect("dataset config serializes");
        fs::write(staging.join(DATASET_CONFIG_FILE), snapshot)?;
        Ok(ds.splits.iter().map(summarize).collect())
    })();
    match result {
        Ok(summary) => {
            publish(&staging, out)?;
            Ok(summary)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}
