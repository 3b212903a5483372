use rayon::prelude::*;
use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use super::TrainError;
use crate::encoders::{prepare_image, EncoderConfig, Planar, PreparedImage, TokenSequence, Vocabulary};
use crate::fusion::Example;
use crate::plot_synth::{load_boxes, render_plot, DatasetManifest, GeneratedDataset, QAItem, RegionBox, SplitName};

/// A split with every question tokenized and every plot preprocessed,
/// ready for repeated passes.
#[derive(Debug, Clone)]
pub struct PreparedSplit {
    pub items: Vec<QAItem>,
    pub tokens: Vec<TokenSequence>,
    pub labels: Vec<usize>,
    pub images: Vec<PreparedImage>,
    /// Item index → index into `images`.
    pub image_index: Vec<usize>,
}

fn unique_plots(items: &[QAItem]) -> (Vec<String>, Vec<usize>) {
    let mut ids: Vec<String> = Vec::new();
    let mut pos: HashMap<&str, usize> = HashMap::new();
    let mut image_index = Vec::with_capacity(items.len());
    for it in items {
        let i = *pos.entry(it.plot_id.as_str()).or_insert_with(|| {
            ids.push(it.plot_id.clone());
            ids.len() - 1
        });
        image_index.push(i);
    }
    (ids, image_index)
}

impl PreparedSplit {
    fn assemble(
        items: Vec<QAItem>,
        vocab: &Vocabulary,
        cfg: &EncoderConfig,
        images: Vec<PreparedImage>,
        image_index: Vec<usize>,
    ) -> Result<Self, TrainError> {
        let tokens = items
            .iter()
            .map(|it| vocab.encode(&it.question, cfg.max_question_length))
            .collect::<Result<Vec<_>, _>>()?;
        let labels = items.iter().map(|it| it.answer.index()).collect();
        Ok(Self {
            items,
            tokens,
            labels,
            images,
            image_index,
        })
    }

    /// Loads images and region boxes from a dataset directory.
    pub fn load(
        manifest: &DatasetManifest,
        root: &Path,
        vocab: &Vocabulary,
        cfg: &EncoderConfig,
    ) -> Result<Self, TrainError> {
        let (plot_ids, image_index) = unique_plots(&manifest.items);
        let images = plot_ids
            .par_iter()
            .map(|id| {
                let path = manifest
                    .image_path(root, id)
                    .ok_or_else(|| TrainError::Data(format!("no image path for plot {id}")))?;
                let img = image::open(&path).map_err(|e| TrainError::Data(format!("{}: {e}", path.display())))?;
                let planar = match Planar::from_dynamic(&img) {
                    Ok(p) => p,
                    Err(_) => {
                        log::debug!("converting {} to RGB", path.display());
                        Planar::from_rgb(&img.to_rgb8())
                    }
                };
                let boxes = load_boxes(root, id)?.unwrap_or_default();
                Ok(prepare_image(&planar, &boxes, cfg)?)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Self::assemble(manifest.items.clone(), vocab, cfg, images, image_index)
    }

    /// Renders plots in memory from a generated dataset (no disk I/O).
    pub fn render(
        dataset: &GeneratedDataset,
        split: SplitName,
        vocab: &Vocabulary,
        cfg: &EncoderConfig,
    ) -> Result<Self, TrainError> {
        Self::render_items(dataset, dataset.split(split).items.clone(), vocab, cfg)
    }

    /// As [`render`](Self::render) for an arbitrary item list.
    pub fn render_items(
        dataset: &GeneratedDataset,
        items: Vec<QAItem>,
        vocab: &Vocabulary,
        cfg: &EncoderConfig,
    ) -> Result<Self, TrainError> {
        let specs: BTreeMap<&str, _> = dataset.specs.iter().map(|s| (s.plot_id.as_str(), s)).collect();
        let (plot_ids, image_index) = unique_plots(&items);
        let (w, h) = (dataset.config.width, dataset.config.height);
        let images = plot_ids
            .par_iter()
            .map(|id| {
                let spec = specs
                    .get(id.as_str())
                    .ok_or_else(|| TrainError::Data(format!("unknown plot {id}")))?;
                let r = render_plot(spec, w, h)?;
                Ok(prepare_image(&Planar::from_rgb(&r.image), &r.boxes, cfg)?)
            })
            .collect::<Result<Vec<_>, TrainError>>()?;
        Self::assemble(items, vocab, cfg, images, image_index)
    }

    /// Builds from already prepared parts.
    pub fn from_parts(
        items: Vec<QAItem>,
        vocab: &Vocabulary,
        cfg: &EncoderConfig,
        images: Vec<PreparedImage>,
        image_index: Vec<usize>,
    ) -> Result<Self, TrainError> {
        if image_index.len() != items.len() || image_index.iter().any(|&i| i >= images.len()) {
            return Err(TrainError::Data("image index does not match items".into()));
        }
        Self::assemble(items, vocab, cfg, images, image_index)
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn example(&self, i: usize) -> Example<'_> {
        Example {
            tokens: &self.tokens[i],
            image: &self.images[self.image_index[i]],
        }
    }

    pub fn examples(&self, indices: &[usize]) -> Vec<Example<'_>> {
        indices.iter().map(|&i| self.example(i)).collect()
    }

    pub fn labels_of(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// Items restricted to `indices` (images shared, not copied per item).
    pub fn subset(&self, indices: &[usize]) -> Self {
        let mut remap: HashMap<usize, usize> = HashMap::new();
        let mut images = Vec::new();
        let mut image_index = Vec::with_capacity(indices.len());
        for &i in indices {
            let src = self.image_index[i];
            let dst = *remap.entry(src).or_insert_with(|| {
                images.push(self.images[src].clone());
                images.len() - 1
            });
            image_index.push(dst);
        }
        Self {
            items: indices.iter().map(|&i| self.items[i].clone()).collect(),
            tokens: indices.iter().map(|&i| self.tokens[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            images,
            image_index,
        }
    }

    /// True when every image has at least one region.
    pub fn has_regions(&self) -> bool {
        self.images.iter().all(|im| !im.regions.is_empty())
    }

    pub fn region_boxes(&self, image: usize) -> &[RegionBox] {
        &self.images[image].regions.boxes
    }
}
