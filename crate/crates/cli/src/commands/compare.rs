use plotvqa::evaluation::{emit_report, error_overlap, evaluate, fmt4, read_predictions, ErrorOverlap, EvalReport};
use plotvqa::plot_synth::{DatasetManifest, SplitName};
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::eval::{evaluate_run, EVAL_DIR, PREDICTIONS_FILE};
use super::text_table;
use super::train::{load_run_info, RunInfo};
use crate::{CliError, Result};

pub const COMPARISON_FILE: &str = "comparison.md";

#[derive(Debug, Clone)]
pub struct CompareOutput {
    pub reports: Vec<EvalReport>,
    pub overlaps: Vec<ErrorOverlap>,
    pub files: Vec<PathBuf>,
    /// Plain-text metrics table for the terminal.
    pub table: String,
}

/// Runs being compared must share the classifier head (width and
/// activation); otherwise differences can't be attributed to fusion.
pub fn check_parity(infos: &[RunInfo]) -> Result<()> {
    let Some(first) = infos.first() else { return Ok(()) };
    let head = &first.model_config.classifier;
    for other in &infos[1..] {
        let c = &other.model_config.classifier;
        if c.hidden_dim != head.hidden_dim || c.activation != head.activation {
            return Err(CliError::ParityViolation(format!(
                "{} uses hidden_dim {} / {:?} but {} uses hidden_dim {} / {:?}",
                first.variant.as_str(),
                head.hidden_dim,
                head.activation,
                other.variant.as_str(),
                c.hidden_dim,
                c.activation
            )));
        }
    }
    Ok(())
}

/// One line per error kind, in "k of n (model)" form.
pub fn overlap_summary(o: &ErrorOverlap) -> String {
    format!("{}.\n{}.\n", o.framing(true), o.framing(false))
}

fn names(run_dirs: &[PathBuf], infos: &[RunInfo]) -> Vec<String> {
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for i in infos {
        *counts.entry(i.variant.as_str()).or_insert(0) += 1;
    }
    run_dirs
        .iter()
        .zip(infos)
        .map(|(dir, i)| {
            let v = i.variant.as_str();
            if counts[v] > 1 {
                let leaf = dir
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                format!("{v}@{leaf}")
            } else {
                v.to_string()
            }
        })
        .collect()
}

fn require_two(run_dirs: &[PathBuf]) -> Result<()> {
    if run_dirs.len() < 2 {
        return Err(CliError::Usage("at least two runs are needed".into()));
    }
    Ok(())
}

/// Evaluates every run on `split` and writes the full comparison report.
pub fn compare(run_dirs: &[PathBuf], data: Option<&Path>, split: SplitName, out: &Path) -> Result<CompareOutput> {
    require_two(run_dirs)?;
    let infos = run_dirs.iter().map(|d| load_run_info(d)).collect::<Result<Vec<_>>>()?;
    check_parity(&infos)?;
    let names = names(run_dirs, &infos);
    let mut reports = Vec::new();
    let mut manifest = None;
    for (dir, name) in run_dirs.iter().zip(&names) {
        let (_, m, r) = evaluate_run(dir, data, split, name)?;
        manifest.get_or_insert(m);
        reports.push(r);
    }
    finish(reports, manifest.as_ref(), out)
}

/// Rebuilds the report from predictions already written by `eval`.
pub fn report(run_dirs: &[PathBuf], split: SplitName, out: &Path) -> Result<CompareOutput> {
    require_two(run_dirs)?;
    let infos = run_dirs.iter().map(|d| load_run_info(d)).collect::<Result<Vec<_>>>()?;
    check_parity(&infos)?;
    let names = names(run_dirs, &infos);
    let mut reports = Vec::new();
    let mut manifest: Option<DatasetManifest> = None;
    for ((dir, info), name) in run_dirs.iter().zip(&infos).zip(&names) {
        let path = dir.join(EVAL_DIR).join(split.as_str()).join(PREDICTIONS_FILE);
        if !path.exists() {
            return Err(CliError::Data(format!(
                "{} not found; run `plotvqa eval --run {}` first",
                path.display(),
                dir.display()
            )));
        }
        let records = read_predictions(&path)?;
        let m = DatasetManifest::load(&info.dataset_dir, split)
            .map_err(|e| CliError::Data(format!("{}: {e}", info.dataset_dir.display())))?;
        reports.push(evaluate(name, &records, &m)?);
        manifest.get_or_insert(m);
    }
    finish(reports, manifest.as_ref(), out)
}

fn finish(reports: Vec<EvalReport>, manifest: Option<&DatasetManifest>, out: &Path) -> Result<CompareOutput> {
    let mut overlaps = Vec::new();
    for i in 0..reports.len() {
        for j in i + 1..reports.len() {
            overlaps.push(error_overlap(&reports[i], &reports[j])?);
        }
    }
    let mut files = emit_report(&reports, &overlaps, manifest, out)?.files;

    let header: Vec<String> = ["model", "n", "accuracy", "precision", "recall", "f1"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.model.clone(),
                m.matrix.total().to_string(),
                fmt4(m.accuracy),
                fmt4(m.precision),
                fmt4(m.recall),
                fmt4(m.f1),
            ]
        })
        .collect();
    let table = text_table(&header, &rows);

    let mut ranked: Vec<&EvalReport> = reports.iter().collect();
    ranked.sort_by(|a, b| {
        b.metrics
            .accuracy
            .total_cmp(&a.metrics.accuracy)
            .then(a.model.cmp(&b.model))
    });
    let mut md = String::from("# Comparison\n\n```\n");
    md.push_str(&table);
    md.push_str("```\n\nAccuracy ordering: ");
    md.push_str(
        &ranked
            .iter()
            .map(|r| format!("{} ({})", r.model, fmt4(r.metrics.accuracy)))
            .collect::<Vec<_>>()
            .join(" > "),
    );
    md.push_str("\n\n## Error overlap\n");
    for o in &overlaps {
        md.push_str(&format!("\n### {} vs {}\n\n", o.model_a, o.model_b));
        md.push_str(&overlap_summary(o));
    }
    let path = out.join(COMPARISON_FILE);
    fs::write(&path, md)?;
    files.push(path);

    Ok(CompareOutput {
        reports,
        overlaps,
        files,
        table,
    })
}
