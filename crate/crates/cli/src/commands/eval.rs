use plotvqa::encoders::Vocabulary;
use plotvqa::evaluation::{evaluate, write_predictions, EvalReport, PredictionRecord};
use plotvqa::plot_synth::{DatasetManifest, SplitName};
use plotvqa::training::{load_checkpoint, predict_split, sha256_hex, PreparedSplit, TrainError};
use std::fs;
use std::path::{Path, PathBuf};

use super::train::{load_run_info, RunInfo, BEST_DIR, VOCAB_FILE};
use crate::{CliError, Result};

pub const EVAL_DIR: &str = "eval";
pub const PREDICTIONS_FILE: &str = "predictions.jsonl";
pub const METRICS_FILE: &str = "metrics.json";

/// Scores the best checkpoint of `run_dir` on one split. The dataset is
/// the one the run trained on unless `data` overrides it.
pub fn evaluate_run(
    run_dir: &Path,
    data: Option<&Path>,
    split: SplitName,
    model_name: &str,
) -> Result<(RunInfo, DatasetManifest, EvalReport)> {
    let info = load_run_info(run_dir)?;
    let data = data.unwrap_or(&info.dataset_dir);
    let (model, meta) = load_checkpoint(&run_dir.join(BEST_DIR))?;
    let vocab_path = run_dir.join(VOCAB_FILE);
    if let Some(v) = &meta.vocab {
        if sha256_hex(&fs::read(&vocab_path)?) != v.sha256 {
            return Err(CliError::Data(format!(
                "{} does not match the checkpoint",
                vocab_path.display()
            )));
        }
    }
    let vocab = Vocabulary::load(&vocab_path)?;
    let manifest = DatasetManifest::load(data, split)
        .map_err(|e| CliError::Data(format!("{} {split:?} split: {e}", data.display())))?;
    let prepared = PreparedSplit::load(&manifest, data, &vocab, &model.config.encoder)?;
    if model.variant().uses_regions() && !prepared.has_regions() {
        return Err(TrainError::IncompatibleVariant {
            variant: model.variant(),
            reason: "region boxes are missing for some images".into(),
        }
        .into());
    }
    let preds = predict_split(&model, &prepared, 64)?;
    let records: Vec<PredictionRecord> = prepared
        .items
        .iter()
        .zip(&preds)
        .map(|(it, p)| PredictionRecord {
            qa_id: it.qa_id.clone(),
            predicted: p.label,
            probability_yes: p.probability_yes,
        })
        .collect();
    let report = evaluate(model_name, &records, &manifest)?;
    Ok((info, manifest, report))
}

/// Evaluates a run and writes predictions and metrics to `out`
/// (default `<run_dir>/eval/<split>`).
pub fn eval(
    run_dir: &Path,
    data: Option<&Path>,
    split: SplitName,
    out: Option<&Path>,
) -> Result<(EvalReport, PathBuf)> {
    let info = load_run_info(run_dir)?;
    let (_, _, report) = evaluate_run(run_dir, data, split, info.variant.as_str())?;
    let out = out.map_or_else(|| run_dir.join(EVAL_DIR).join(split.as_str()), Path::to_path_buf);
    fs::create_dir_all(&out)?;
    let records: Vec<PredictionRecord> = report
        .predictions
        .iter()
        .map(|p| PredictionRecord {
            qa_id: p.qa_id.clone(),
            predicted: p.predicted,
            probability_yes: p.probability_yes,
        })
        .collect();
    write_predictions(&out.join(PREDICTIONS_FILE), &records)?;
    fs::write(
        out.join(METRICS_FILE),
        serde_json::to_string_pretty(&report.metrics)? + "\n",
    )?;
    Ok((report, out))
}
