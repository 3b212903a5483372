//! Checkpoint directories: `metadata.json` plus a flat little-endian f32
//! tensor archive (`tensors.bin`) with a JSON index (`tensors.json`)
//! mapping parameter names to offset, shape and dtype.

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use super::optim::Optimizer;
use super::TrainError;
use crate::fusion::{FusionModel, FusionVariant, ModelConfig};
use crate::tensor::{ParamGroup, ParamStore};

pub const FORMAT_VERSION: u32 = 1;
pub const METADATA_FILE: &str = "metadata.json";
const TENSORS: &str = "tensors";
const OPTIMIZER: &str = "optimizer";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub format_version: u32,
    pub variant: FusionVariant,
    pub model_config: ModelConfig,
    pub config_sha256: String,
    pub vocab: Option<VocabRef>,
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
    pub tensors_sha256: String,
    pub frozen_groups: Vec<ParamGroup>,
}

/// Caller-supplied parts of the metadata.
#[derive(Debug, Clone, Default)]
pub struct CheckpointInfo {
    pub epoch: usize,
    pub metrics: BTreeMap<String, f64>,
    pub vocab: Option<VocabRef>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    offset: u64,
    shape: [usize; 2],
    dtype: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Stable hash of a model configuration.
pub fn config_hash(config: &ModelConfig) -> String {
    sha256_hex(serde_json::to_string(config).expect("config serializes").as_bytes())
}

fn corrupt(dir: &Path, msg: impl Into<String>) -> TrainError {
    TrainError::CorruptCheckpoint {
        path: dir.display().to_string(),
        message: msg.into(),
    }
}

fn write_archive(dir: &Path, stem: &str, entries: &[(String, &Array2<f32>)]) -> Result<String, TrainError> {
    let mut bin = Vec::new();
    let mut index = Vec::with_capacity(entries.len());
    for (name, a) in entries {
        index.push(IndexEntry {
            name: name.clone(),
            offset: bin.len() as u64,
            shape: [a.nrows(), a.ncols()],
            dtype: "f32".into(),
        });
        for v in a.iter() {
            bin.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(dir.join(format!("{stem}.bin")), &bin)?;
    fs::write(
        dir.join(format!("{stem}.json")),
        serde_json::to_string_pretty(&index)? + "\n",
    )?;
    Ok(sha256_hex(&bin))
}

fn read_archive(dir: &Path, stem: &str) -> Result<(Vec<(String, Array2<f32>)>, String), TrainError> {
    let index_path = dir.join(format!("{stem}.json"));
    let bin_path = dir.join(format!("{stem}.bin"));
    let index: Vec<IndexEntry> = serde_json::from_str(
        &fs::read_to_string(&index_path).map_err(|e| corrupt(dir, format!("{}: {e}", index_path.display())))?,
    )
    .map_err(|e| corrupt(dir, format!("{}: {e}", index_path.display())))?;
    let bin = fs::read(&bin_path).map_err(|e| corrupt(dir, format!("{}: {e}", bin_path.display())))?;
    let mut out = Vec::with_capacity(index.len());
    let mut expected_end = 0u64;
    for e in &index {
        if e.dtype != "f32" {
            return Err(corrupt(dir, format!("{}: unsupported dtype {}", e.name, e.dtype)));
        }
        let n = e.shape[0] * e.shape[1];
        let start = e.offset as usize;
        let end = start + 4 * n;
        if end > bin.len() {
            return Err(corrupt(
                dir,
                format!("{}: needs bytes {start}..{end} but archive has {}", e.name, bin.len()),
            ));
        }
        let values: Vec<f32> = bin[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let a = Array2::from_shape_vec((e.shape[0], e.shape[1]), values).expect("length checked");
        out.push((e.name.clone(), a));
        expected_end = expected_end.max(end as u64);
    }
    if expected_end != bin.len() as u64 {
        return Err(corrupt(
            dir,
            format!("archive is {} bytes, index describes {expected_end}", bin.len()),
        ));
    }
    Ok((out, sha256_hex(&bin)))
}

fn frozen_groups(params: &ParamStore<f32>) -> Vec<ParamGroup> {
    let mut groups: Vec<ParamGroup> = params
        .iter()
        .filter(|(_, p)| !p.trainable)
        .map(|(_, p)| p.group)
        .collect();
    groups.sort();
    groups.dedup();
    groups
}

/// Writes `model` to `dir`, replacing any previous checkpoint there.
pub fn save_checkpoint(
    dir: &Path,
    model: &FusionModel<f32>,
    info: &CheckpointInfo,
) -> Result<CheckpointMeta, TrainError> {
    save_with(dir, model, info, None)
}

/// As [`save_checkpoint`], also storing optimizer state for resuming.
pub fn save_training_checkpoint(
    dir: &Path,
    model: &FusionModel<f32>,
    info: &CheckpointInfo,
    optimizer: &Optimizer,
) -> Result<CheckpointMeta, TrainError> {
    save_with(dir, model, info, Some(optimizer))
}

fn staging_dir(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    dir.with_file_name(format!(".{name}.partial"))
}

fn save_with(
    dir: &Path,
    model: &FusionModel<f32>,
    info: &CheckpointInfo,
    optimizer: Option<&Optimizer>,
) -> Result<CheckpointMeta, TrainError> {
    let tmp = staging_dir(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp)?;
    }
    fs::create_dir_all(&tmp)?;
    let entries: Vec<(String, &Array2<f32>)> = model.params.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
    let tensors_sha256 = write_archive(&tmp, TENSORS, &entries)?;
    if let Some(opt) = optimizer {
        let mut state: Vec<(String, &Array2<f32>)> = Vec::new();
        for (id, p) in model.params.iter() {
            state.push((format!("m/{}", p.name), &opt.m[id.0]));
            state.push((format!("v/{}", p.name), &opt.v[id.0]));
        }
        write_archive(&tmp, OPTIMIZER, &state)?;
        let header = serde_json::json!({ "kind": opt.kind, "learning_rate": opt.learning_rate, "step": opt.step });
        fs::write(
            tmp.join("optimizer_state.json"),
            serde_json::to_string_pretty(&header)? + "\n",
        )?;
    }
    let meta = CheckpointMeta {
        format_version: FORMAT_VERSION,
        variant: model.variant(),
        model_config: model.config.clone(),
        config_sha256: config_hash(&model.config),
        vocab: info.vocab.clone(),
        epoch: info.epoch,
        metrics: info.metrics.clone(),
        tensors_sha256,
        frozen_groups: frozen_groups(&model.params),
    };
    fs::write(tmp.join(METADATA_FILE), serde_json::to_string_pretty(&meta)? + "\n")?;
    if dir.exists() {
        fs::remove_dir_all(dir)?;
    }
    fs::rename(&tmp, dir)?;
    Ok(meta)
}

pub fn read_metadata(dir: &Path) -> Result<CheckpointMeta, TrainError> {
    let path = dir.join(METADATA_FILE);
    let text = fs::read_to_string(&path).map_err(|e| corrupt(dir, format!("{}: {e}", path.display())))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| corrupt(dir, format!("metadata: {e}")))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(corrupt(
            dir,
            format!("unsupported format version {}", meta.format_version),
        ));
    }
    Ok(meta)
}

fn assign(dir: &Path, params: &mut ParamStore<f32>, tensors: Vec<(String, Array2<f32>)>) -> Result<(), TrainError> {
    if tensors.len() != params.len() {
        return Err(corrupt(
            dir,
            format!("archive has {} tensors, model has {}", tensors.len(), params.len()),
        ));
    }
    let mut by_name: HashMap<String, Array2<f32>> = tensors.into_iter().collect();
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let name = params.get(id).name.clone();
        let value = by_name
            .remove(&name)
            .ok_or_else(|| corrupt(dir, format!("missing tensor {name}")))?;
        if value.dim() != params.value(id).dim() {
            return Err(corrupt(
                dir,
                format!(
                    "{name}: shape {:?}, model expects {:?}",
                    value.dim(),
                    params.value(id).dim()
                ),
            ));
        }
        *params.value_mut(id) = value;
    }
    Ok(())
}

/// Loads parameters into an existing model of the same variant.
pub fn load_checkpoint_into(model: &mut FusionModel<f32>, dir: &Path) -> Result<CheckpointMeta, TrainError> {
    let meta = read_metadata(dir)?;
    if meta.variant != model.variant() {
        return Err(TrainError::VariantMismatch {
            expected: model.variant(),
            found: meta.variant,
        });
    }
    let (tensors, sha) = read_archive(dir, TENSORS)?;
    if sha != meta.tensors_sha256 {
        return Err(corrupt(dir, "tensor archive checksum mismatch"));
    }
    assign(dir, &mut model.params, tensors)?;
    for g in ParamGroup::ALL {
        model.params.set_group_trainable(g, !meta.frozen_groups.contains(&g));
    }
    Ok(meta)
}

/// Rebuilds a model from its stored configuration and loads parameters.
pub fn load_checkpoint(dir: &Path) -> Result<(FusionModel<f32>, CheckpointMeta), TrainError> {
    let meta = read_metadata(dir)?;
    let mut model = FusionModel::new(meta.model_config.clone())?;
    let meta = load_checkpoint_into(&mut model, dir)?;
    Ok((model, meta))
}

/// Restores optimizer state saved by [`save_training_checkpoint`].
pub fn load_optimizer(dir: &Path, params: &ParamStore<f32>) -> Result<Optimizer, TrainError> {
    #[derive(Deserialize)]
    struct Header {
        kind: super::OptimizerKind,
        learning_rate: f32,
        step: u64,
    }
    let path = dir.join("optimizer_state.json");
    let header: Header =
        serde_json::from_str(&fs::read_to_string(&path).map_err(|e| corrupt(dir, format!("{}: {e}", path.display())))?)
            .map_err(|e| corrupt(dir, format!("optimizer state: {e}")))?;
    let (tensors, _) = read_archive(dir, OPTIMIZER)?;
    let mut by_name: HashMap<String, Array2<f32>> = tensors.into_iter().collect();
    let mut opt = Optimizer::new(header.kind, header.learning_rate as f64, params);
    opt.learning_rate = header.learning_rate;
    opt.step = header.step;
    for (id, p) in params.iter() {
        let mut take = |prefix: &str| {
            by_name
                .remove(&format!("{prefix}/{}", p.name))
                .ok_or_else(|| corrupt(dir, format!("missing optimizer state for {}", p.name)))
        };
        opt.m[id.0] = take("m")?;
        opt.v[id.0] = take("v")?;
    }
    Ok(opt)
}
