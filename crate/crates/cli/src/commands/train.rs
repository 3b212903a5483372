use plotvqa::encoders::{build_vocab, Vocabulary};
use plotvqa::fusion::{FusionModel, FusionVariant, ModelConfig};
use plotvqa::plot_synth::{DatasetManifest, SplitName};
use plotvqa::training::{
    grad_check, load_checkpoint, load_optimizer, save_checkpoint, save_training_checkpoint, sha256_hex, BestSnapshot,
    CheckpointInfo, GradCheckReport, PreparedSplit, TrainConfig, TrainError, TrainHistory, Trainer, VocabRef,
};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::ensure_fresh;
use crate::config::GradCheckSection;
use crate::{CliError, ExperimentConfig, Result};

pub const CONFIG_FILE: &str = "config.toml";
pub const RUN_FILE: &str = "run.json";
pub const VOCAB_FILE: &str = "vocab.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const GRAD_CHECK_FILE: &str = "grad_check.json";
pub const BEST_DIR: &str = "checkpoints/best";
pub const LAST_DIR: &str = "checkpoints/last";

/// Written once per run; identifies what was trained on what.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunInfo {
    pub variant: FusionVariant,
    pub dataset_dir: PathBuf,
    pub dataset_sha256: String,
    pub model_config: ModelConfig,
    pub train_config: TrainConfig,
    pub parameters: usize,
    pub parameters_by_group: BTreeMap<String, usize>,
}

#[derive(Debug, Clone)]
pub struct TrainArgs {
    pub data_dir: PathBuf,
    /// Overrides `[model] variant`.
    pub variant: Option<FusionVariant>,
    pub run_dir: PathBuf,
    pub resume: bool,
    /// Overrides the resolved epoch budget (equalizes variants).
    pub epochs: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub run_dir: PathBuf,
    pub variant: FusionVariant,
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub best_val_f1: f64,
    pub grad_check: Option<GradCheckReport>,
    pub history: TrainHistory,
}

#[derive(Serialize)]
struct GradCheckRecord<'a> {
    tolerance: f64,
    passed: bool,
    examples: usize,
    report: &'a GradCheckReport,
}

/// SHA-256 over the train, val and test manifest files present in `dir`.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    for split in SplitName::ALL {
        let p = DatasetManifest::jsonl_path(dir, split);
        if p.exists() {
            bytes.extend(fs::read(&p)?);
        }
    }
    if bytes.is_empty() {
        return Err(CliError::Data(format!("{} holds no manifests", dir.display())));
    }
    Ok(sha256_hex(&bytes))
}

pub fn load_run_info(run_dir: &Path) -> Result<RunInfo> {
    let p = run_dir.join(RUN_FILE);
    let text = fs::read_to_string(&p).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
    Ok(serde_json::from_str(&text)?)
}

fn load_split(dir: &Path, split: SplitName) -> Result<DatasetManifest> {
    DatasetManifest::load(dir, split).map_err(|e| CliError::Data(format!("{} {split:?} split: {e}", dir.display())))
}

fn vocab_ref(run_dir: &Path) -> Result<VocabRef> {
    Ok(VocabRef {
        path: VOCAB_FILE.to_string(),
        sha256: sha256_hex(&fs::read(run_dir.join(VOCAB_FILE))?),
    })
}

fn grad_gate(
    cfg: &GradCheckSection,
    seed: u64,
    model: &FusionModel<f32>,
    split: &PreparedSplit,
    run_dir: &Path,
) -> Result<Option<GradCheckReport>> {
    if !cfg.enabled {
        return Ok(None);
    }
    let idx: Vec<usize> = (0..cfg.examples.min(split.len())).collect();
    let report = grad_check(model, &split.examples(&idx), &split.labels_of(&idx), &cfg.options(seed))?;
    let passed = report.max_relative_error < cfg.tolerance;
    let record = GradCheckRecord {
        tolerance: cfg.tolerance,
        passed,
        examples: idx.len(),
        report: &report,
    };
    fs::write(
        run_dir.join(GRAD_CHECK_FILE),
        serde_json::to_string_pretty(&record)? + "\n",
    )?;
    log::info!(
        "step-0 gradient check: max relative error {:.3e} over {} scalars",
        report.max_relative_error,
        report.checked
    );
    if !passed {
        return Err(CliError::GradCheckFailed {
            error: report.max_relative_error,
            tolerance: cfg.tolerance,
        });
    }
    Ok(Some(report))
}

fn run_epochs(trainer: &mut Trainer, train: &PreparedSplit, val: &PreparedSplit, run_dir: &Path) -> Result<()> {
    let vocab = Some(vocab_ref(run_dir)?);
    let history_path = run_dir.join(HISTORY_FILE);
    let (last, best) = (run_dir.join(LAST_DIR), run_dir.join(BEST_DIR));
    trainer.run(train, val, |t, rec| {
        t.history.write_csv(&history_path)?;
        let info = CheckpointInfo {
            epoch: rec.epoch,
            metrics: BTreeMap::from([
                ("train_loss".to_string(), rec.train_loss),
                ("train_accuracy".to_string(), rec.train_accuracy),
                ("val_accuracy".to_string(), rec.val_accuracy),
                ("val_f1".to_string(), rec.val_f1),
            ]),
            vocab: vocab.clone(),
        };
        save_training_checkpoint(&last, &t.model, &info, &t.optimizer)?;
        if t.best.as_ref().is_some_and(|b| b.epoch == rec.epoch) {
            save_checkpoint(&best, &t.model, &info)?;
        }
        Ok::<(), TrainError>(())
    })?;
    Ok(())
}

fn summary(trainer: &Trainer, run_dir: &Path, grad: Option<GradCheckReport>) -> RunSummary {
    let best = trainer.best.as_ref();
    RunSummary {
        run_dir: run_dir.to_path_buf(),
        variant: trainer.model.variant(),
        epochs_completed: trainer.epochs_completed(),
        best_epoch: best.map_or(0, |b| b.epoch),
        best_val_accuracy: best.map_or(0.0, |b| b.val_accuracy),
        best_val_f1: best.map_or(0.0, |b| b.val_f1),
        grad_check: grad,
        history: trainer.history.clone(),
    }
}

/// Trains one variant into a fresh run directory, or continues the run in
/// `args.run_dir` when `args.resume` is set.
pub fn train(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<RunSummary> {
    if args.resume {
        return resume(args);
    }
    ensure_fresh(
        &args.run_dir,
        "run directories are immutable; pass --resume to continue it",
    )?;
    let variant = args.variant.unwrap_or(cfg.model.variant);
    let mut train_cfg = cfg.training.resolve(variant);
    if let Some(e) = args.epochs {
        train_cfg.epochs = e;
    }
    train_cfg.validate()?;

    let data = &args.data_dir;
    let train_m = load_split(data, SplitName::Train)?;
    let val_m = load_split(data, SplitName::Val)?;
    let vocab = build_vocab(&train_m, cfg.model.vocab_min_count)?;
    let model_cfg = cfg.model_config(variant, vocab.len());
    let model = FusionModel::<f32>::new(model_cfg.clone()).map_err(TrainError::from)?;
    let train_split = PreparedSplit::load(&train_m, data, &vocab, &model_cfg.encoder)?;
    let val_split = PreparedSplit::load(&val_m, data, &vocab, &model_cfg.encoder)?;
    let mut trainer = Trainer::new(model, train_cfg.clone())?;
    trainer.check_compatible(&[&train_split, &val_split])?;

    let run_dir = &args.run_dir;
    fs::create_dir_all(run_dir)?;
    let mut snapshot = cfg.clone();
    snapshot.model.variant = variant;
    snapshot.training.epochs = Some(train_cfg.epochs);
    snapshot.paths.data_dir = data.clone();
    fs::write(run_dir.join(CONFIG_FILE), snapshot.to_toml())?;
    vocab.save(&run_dir.join(VOCAB_FILE))?;
    let count = trainer.model.count_parameters();
    let info = RunInfo {
        variant,
        dataset_dir: data.clone(),
        dataset_sha256: dataset_fingerprint(data)?,
        model_config: model_cfg,
        train_config: train_cfg,
        parameters: count.total,
        parameters_by_group: count
            .by_group
            .iter()
            .map(|(g, n)| (g.as_str().to_string(), *n))
            .collect(),
    };
    fs::write(run_dir.join(RUN_FILE), serde_json::to_string_pretty(&info)? + "\n")?;
    log::info!("{variant}: {} trainable parameters", count.total);

    let grad = grad_gate(
        &cfg.training.grad_check,
        cfg.training.seed,
        &trainer.model,
        &train_split,
        run_dir,
    )?;
    run_epochs(&mut trainer, &train_split, &val_split, run_dir)?;
    Ok(summary(&trainer, run_dir, grad))
}

fn resume(args: &TrainArgs) -> Result<RunSummary> {
    let run_dir = &args.run_dir;
    let mut info = load_run_info(run_dir)?;
    if let Some(v) = args.variant.filter(|v| *v != info.variant) {
        return Err(CliError::Usage(format!(
            "{} holds a {} run, not {v}",
            run_dir.display(),
            info.variant
        )));
    }
    if let Some(e) = args.epochs {
        info.train_config.epochs = e;
    }
    let data = &info.dataset_dir;
    if dataset_fingerprint(data)? != info.dataset_sha256 {
        return Err(CliError::Data(format!(
            "dataset at {} changed since the run started",
            data.display()
        )));
    }
    let vocab = Vocabulary::load(&run_dir.join(VOCAB_FILE))?;
    let (model, meta) = load_checkpoint(&run_dir.join(LAST_DIR))?;
    if model.config != info.model_config {
        return Err(CliError::Data("last checkpoint does not match run.json".into()));
    }
    let optimizer = load_optimizer(&run_dir.join(LAST_DIR), &model.params)?;
    let mut history = TrainHistory::read_csv(&run_dir.join(HISTORY_FILE))?;
    history.records.truncate(meta.epoch);
    if history.records.len() != meta.epoch {
        return Err(CliError::Data(format!(
            "history has {} epochs but the last checkpoint is from epoch {}",
            history.records.len(),
            meta.epoch
        )));
    }
    let (best_model, best_meta) = load_checkpoint(&run_dir.join(BEST_DIR))?;
    let metric = |k: &str| best_meta.metrics.get(k).copied().unwrap_or(0.0);
    let best = BestSnapshot {
        epoch: best_meta.epoch,
        val_accuracy: metric("val_accuracy"),
        val_f1: metric("val_f1"),
        params: best_model.params,
    };

    let train_m = load_split(data, SplitName::Train)?;
    let val_m = load_split(data, SplitName::Val)?;
    let enc = &info.model_config.encoder;
    let train_split = PreparedSplit::load(&train_m, data, &vocab, enc)?;
    let val_split = PreparedSplit::load(&val_m, data, &vocab, enc)?;
    let mut trainer = Trainer::resume(model, optimizer, info.train_config.clone(), history, Some(best))?;
    fs::write(run_dir.join(RUN_FILE), serde_json::to_string_pretty(&info)? + "\n")?;
    log::info!("resuming {} at epoch {}", info.variant, meta.epoch + 1);
    run_epochs(&mut trainer, &train_split, &val_split, run_dir)?;
    Ok(summary(&trainer, run_dir, None))
}

/// Trains the same configuration with and without classifier dropout into
/// `<run_dir>/dropout_on` and `<run_dir>/dropout_off`, and writes the
/// paired histories to `<run_dir>/dropout_ablation.csv`.
pub fn dropout_ablation(cfg: &ExperimentConfig, args: &TrainArgs) -> Result<(RunSummary, RunSummary)> {
    if args.resume {
        return Err(CliError::Usage(
            "--dropout-ablation cannot be combined with --resume".into(),
        ));
    }
    if cfg.training.dropout_rate == 0.0 {
        return Err(CliError::Usage("training.dropout_rate is 0; nothing to ablate".into()));
    }
    ensure_fresh(&args.run_dir, "choose another --out")?;
    let sub = |name: &str| TrainArgs {
        run_dir: args.run_dir.join(name),
        ..args.clone()
    };
    let on = train(cfg, &sub("dropout_on"))?;
    let mut off_cfg = cfg.clone();
    off_cfg.training.dropout_rate = 0.0;
    let off = train(&off_cfg, &sub("dropout_off"))?;

    let mut csv =
        String::from("epoch,train_loss_on,train_acc_on,val_acc_on,train_loss_off,train_acc_off,val_acc_off\n");
    let n = on.history.records.len().max(off.history.records.len());
    for i in 0..n {
        let cell = |h: &TrainHistory, f: fn(&plotvqa::training::EpochRecord) -> f64| {
            h.records.get(i).map(|r| f(r).to_string()).unwrap_or_default()
        };
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            cell(&on.history, |r| r.train_loss),
            cell(&on.history, |r| r.train_accuracy),
            cell(&on.history, |r| r.val_accuracy),
            cell(&off.history, |r| r.train_loss),
            cell(&off.history, |r| r.train_accuracy),
            cell(&off.history, |r| r.val_accuracy),
        ));
    }
    fs::write(args.run_dir.join("dropout_ablation.csv"), csv)?;
    Ok((on, off))
}
