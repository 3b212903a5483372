use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::render::{render_plot, RegionBox, DEFAULT_HEIGHT, DEFAULT_WIDTH};
use super::spec::{sample_plot_spec_with, PlotKind, PlotSpec, SamplerConfig};
use super::templates::{generate_questions, Answer, Category, SkipRecord, TemplateSet, TEMPLATE_SET_ID};
use super::SynthError;

/// One question instance. Serialises to exactly the six manifest fields.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QAItem {
    pub qa_id: String,
    pub plot_id: String,
    pub question: String,
    pub template_id: String,
    pub category: Category,
    pub answer: Answer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Val,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Val, SplitName::Test];

    pub fn as_str(&self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Val => "val",
            SplitName::Test => "test",
        }
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitName {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitName::Train),
            "val" | "validation" => Ok(SplitName::Val),
            "test" => Ok(SplitName::Test),
            other => Err(SynthError::InvalidArgument(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub n_yes: usize,
    pub n_no: usize,
    pub per_category: BTreeMap<Category, usize>,
}

impl Counts {
    pub fn of(items: &[QAItem]) -> Self {
        let mut c = Counts::default();
        for item in items {
            match item.answer {
                Answer::Yes => c.n_yes += 1,
                Answer::No => c.n_no += 1,
            }
            *c.per_category.entry(item.category).or_insert(0) += 1;
        }
        c
    }

    pub fn total(&self) -> usize {
        self.n_yes + self.n_no
    }
}

/// An ordered split of questions with image references.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub split_name: SplitName,
    pub template_set: String,
    pub items: Vec<QAItem>,
    /// plot_id → image path, relative to the dataset root unless absolute.
    pub image_paths: BTreeMap<String, PathBuf>,
    pub counts: Counts,
}

/// Sidecar written next to each split's JSON-lines file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestIndex {
    split_name: SplitName,
    template_set: String,
    counts: Counts,
    image_paths: BTreeMap<String, PathBuf>,
}

impl DatasetManifest {
    pub fn new(
        split_name: SplitName,
        template_set: impl Into<String>,
        items: Vec<QAItem>,
        image_paths: BTreeMap<String, PathBuf>,
    ) -> Self {
        let counts = Counts::of(&items);
        Self {
            split_name,
            template_set: template_set.into(),
            items,
            image_paths,
            counts,
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn is_balanced(&self) -> bool {
        self.counts.n_yes == self.counts.n_no
    }

    pub fn plot_ids(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.plot_id.as_str()).collect()
    }

    /// Checks counts against items, image coverage, and (when
    /// `require_balance`) exact yes/no balance.
    pub fn validate(&self, require_balance: bool) -> Result<(), SynthError> {
        if Counts::of(&self.items) != self.counts {
            return Err(SynthError::InvalidManifest("counts do not match items".into()));
        }
        if let Some(item) = self.items.iter().find(|i| !self.image_paths.contains_key(&i.plot_id)) {
            return Err(SynthError::InvalidManifest(format!(
                "no image path for plot {}",
                item.plot_id
            )));
        }
        if require_balance && !self.is_balanced() {
            return Err(SynthError::InvalidManifest(format!(
                "unbalanced split: {} yes / {} no",
                self.counts.n_yes, self.counts.n_no
            )));
        }
        Ok(())
    }

    pub fn jsonl_path(dir: &Path, split: SplitName) -> PathBuf {
        dir.join(format!("{split}.jsonl"))
    }

    pub fn index_path(dir: &Path, split: SplitName) -> PathBuf {
        dir.join(format!("{split}.index.json"))
    }

    pub fn save(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir)?;
        write_jsonl(&Self::jsonl_path(dir, self.split_name), &self.items)?;
        let index = ManifestIndex {
            split_name: self.split_name,
            template_set: self.template_set.clone(),
            counts: self.counts.clone(),
            image_paths: self.image_paths.clone(),
        };
        write_json(&Self::index_path(dir, self.split_name), &index)
    }

    pub fn load(dir: &Path, split: SplitName) -> Result<Self, SynthError> {
        let items: Vec<QAItem> = read_jsonl(&Self::jsonl_path(dir, split))?;
        let index: ManifestIndex = read_json(&Self::index_path(dir, split))?;
        let m = Self {
            split_name: index.split_name,
            template_set: index.template_set,
            items,
            image_paths: index.image_paths,
            counts: index.counts,
        };
        m.validate(false)?;
        Ok(m)
    }

    /// Resolves an item's image against the dataset root.
    pub fn image_path(&self, root: &Path, plot_id: &str) -> Option<PathBuf> {
        self.image_paths
            .get(plot_id)
            .map(|p| if p.is_absolute() { p.clone() } else { root.join(p) })
    }
}

pub(crate) fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>, SynthError> {
    let reader = BufReader::new(File::open(path).map_err(|e| SynthError::io_at(path, e))?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| SynthError::Parse {
            index: i,
            message: format!("{}: {e}", path.display()),
        })?);
    }
    Ok(out)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), SynthError> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, SynthError> {
    let text = fs::read_to_string(path).map_err(|e| SynthError::io_at(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Draws an exactly balanced, seeded subsample from `qa_pool`, restricted
/// to the plots in `specs`.
pub fn build_split(
    specs: &[PlotSpec],
    qa_pool: &[QAItem],
    split_name: SplitName,
    target_questions: usize,
    seed: u64,
) -> Result<DatasetManifest, SynthError> {
    if !target_questions.is_multiple_of(2) {
        return Err(SynthError::InvalidArgument(format!(
            "target_questions must be even, got {target_questions}"
        )));
    }
    let allowed: BTreeSet<&str> = specs.iter().map(|s| s.plot_id.as_str()).collect();
    let mut yes: Vec<&QAItem> = Vec::new();
    let mut no: Vec<&QAItem> = Vec::new();
    for item in qa_pool.iter().filter(|i| allowed.contains(i.plot_id.as_str())) {
        match item.answer {
            Answer::Yes => yes.push(item),
            Answer::No => no.push(item),
        }
    }
    let half = target_questions / 2;
    for (answer, pool) in [(Answer::Yes, &yes), (Answer::No, &no)] {
        if pool.len() < half {
            return Err(SynthError::InsufficientPool {
                answer,
                needed: half,
                available: pool.len(),
            });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    yes.shuffle(&mut rng);
    no.shuffle(&mut rng);
    let mut items: Vec<QAItem> = yes[..half].iter().chain(&no[..half]).map(|i| (*i).clone()).collect();
    items.shuffle(&mut rng);
    let image_paths = items
        .iter()
        .map(|i| (i.plot_id.clone(), image_rel_path(&i.plot_id)))
        .collect();
    Ok(DatasetManifest::new(split_name, TEMPLATE_SET_ID, items, image_paths))
}

pub fn image_rel_path(plot_id: &str) -> PathBuf {
    PathBuf::from("images").join(format!("{plot_id}.png"))
}

pub fn boxes_rel_path(plot_id: &str) -> PathBuf {
    PathBuf::from("boxes").join(format!("{plot_id}.json"))
}

/// Sizes and knobs for a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    /// Questions per split: train, val, test.
    pub questions: [usize; 3],
    /// Plots (images) per split: train, val, test.
    pub images: [usize; 3],
    pub kinds: Vec<PlotKind>,
    pub seed: u64,
    pub template_set: String,
    pub width: u32,
    pub height: u32,
    pub sampler: SamplerConfig,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            questions: [2000, 500, 500],
            images: [400, 100, 100],
            kinds: PlotKind::ALL.to_vec(),
            seed: 0,
            template_set: TEMPLATE_SET_ID.to_string(),
            width: DEFAULT_WIDTH,
            height: DEFAULT_HEIGHT,
            sampler: SamplerConfig::default(),
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        if self.kinds.is_empty() {
            return Err(SynthError::InvalidArgument("dataset.kinds is empty".into()));
        }
        if self.template_set != TEMPLATE_SET_ID {
            return Err(SynthError::InvalidArgument(format!(
                "unknown template set {:?}; available: {TEMPLATE_SET_ID}",
                self.template_set
            )));
        }
        if let Some(q) = self.questions.iter().find(|q| *q % 2 != 0) {
            return Err(SynthError::InvalidArgument(format!("question count {q} is odd")));
        }
        if self.images.contains(&0) {
            return Err(SynthError::InvalidArgument(
                "every split needs at least one image".into(),
            ));
        }
        let s = &self.sampler;
        if !(s.value_min < s.value_max) || s.value_min < 0.0 {
            return Err(SynthError::InvalidArgument(
                "sampler value range must satisfy 0 <= min < max".into(),
            ));
        }
        for p in [s.p_monotone, s.p_constant, s.p_crossing] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SynthError::InvalidArgument(format!(
                    "sampler probability {p} outside [0,1]"
                )));
            }
        }
        if s.p_monotone + s.p_constant > 1.0 {
            return Err(SynthError::InvalidArgument("p_monotone + p_constant exceeds 1".into()));
        }
        Ok(())
    }
}

/// Specs, question pool and balanced manifests for all three splits.
#[derive(Debug, Clone)]
pub struct GeneratedDataset {
    pub config: DatasetConfig,
    pub specs: Vec<PlotSpec>,
    pub pool: Vec<QAItem>,
    pub skipped: Vec<SkipRecord>,
    pub splits: Vec<DatasetManifest>,
}

/// SplitMix64 finaliser, used to derive independent per-plot seeds.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Samples plots, partitions them by image into train/val/test, generates
/// the question pool and draws a balanced manifest per split. Plot ids are
/// disjoint across splits by construction.
pub fn generate_dataset(config: &DatasetConfig) -> Result<GeneratedDataset, SynthError> {
    config.validate()?;
    let templates = TemplateSet::default();
    let total: usize = config.images.iter().sum();
    let mut kind_rng = ChaCha8Rng::seed_from_u64(mix_seed(config.seed, u64::MAX));
    let kinds: Vec<PlotKind> = (0..total)
        .map(|_| *config.kinds.choose(&mut kind_rng).expect("non-empty kinds"))
        .collect();

    let generated: Vec<(PlotSpec, Vec<QAItem>, Vec<SkipRecord>)> = (0..total)
        .into_par_iter()
        .map(|i| {
            let plot_seed = mix_seed(config.seed, i as u64);
            let spec = sample_plot_spec_with(plot_seed, kinds[i], &config.sampler);
            let q = generate_questions(&spec, &templates, mix_seed(plot_seed, 1))?;
            Ok((spec, q.items, q.skipped))
        })
        .collect::<Result<_, SynthError>>()?;

    let mut specs = Vec::with_capacity(total);
    let mut pool = Vec::new();
    let mut skipped = Vec::new();
    for (spec, items, skips) in generated {
        specs.push(spec);
        pool.extend(items);
        skipped.extend(skips);
    }

    let mut splits = Vec::with_capacity(3);
    let mut start = 0;
    for (i, split) in SplitName::ALL.into_iter().enumerate() {
        let end = start + config.images[i];
        let manifest = build_split(
            &specs[start..end],
            &pool,
            split,
            config.questions[i],
            mix_seed(config.seed, 1_000_000 + i as u64),
        )?;
        splits.push(manifest);
        start = end;
    }

    Ok(GeneratedDataset {
        config: config.clone(),
        specs,
        pool,
        skipped,
        splits,
    })
}

pub const PLOTS_FILE: &str = "plots.jsonl";
pub const SKIP_LOG_FILE: &str = "skipped_templates.jsonl";

impl GeneratedDataset {
    pub fn split(&self, name: SplitName) -> &DatasetManifest {
        self.splits
            .iter()
            .find(|m| m.split_name == name)
            .expect("all splits present")
    }

    /// Writes manifests, specs, skip log, and (for every referenced plot)
    /// the PNG image and region-box file.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        fs::create_dir_all(dir.join("images"))?;
        fs::create_dir_all(dir.join("boxes"))?;
        write_jsonl(&dir.join(PLOTS_FILE), &self.specs)?;
        write_jsonl(&dir.join(SKIP_LOG_FILE), &self.skipped)?;
        for m in &self.splits {
            m.save(dir)?;
        }
        let referenced: BTreeSet<&str> = self.splits.iter().flat_map(|m| m.plot_ids()).collect();
        let specs: Vec<&PlotSpec> = self
            .specs
            .iter()
            .filter(|s| referenced.contains(s.plot_id.as_str()))
            .collect();
        specs.par_iter().try_for_each(|spec| {
            let r = render_plot(spec, self.config.width, self.config.height)?;
            r.image
                .save_with_format(dir.join(image_rel_path(&spec.plot_id)), image::ImageFormat::Png)?;
            write_json(&dir.join(boxes_rel_path(&spec.plot_id)), &r.boxes)
        })
    }
}

pub fn load_specs(dir: &Path) -> Result<BTreeMap<String, PlotSpec>, SynthError> {
    let specs: Vec<PlotSpec> = read_jsonl(&dir.join(PLOTS_FILE))?;
    Ok(specs.into_iter().map(|s| (s.plot_id.clone(), s)).collect())
}

pub fn load_boxes(dir: &Path, plot_id: &str) -> Result<Option<Vec<RegionBox>>, SynthError> {
    let path = dir.join(boxes_rel_path(plot_id));
    if !path.exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}
