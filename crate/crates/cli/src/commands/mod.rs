mod compare;
mod eval;
mod generate;
mod ingest;
mod train;

pub use compare::{check_parity, compare, overlap_summary, report, CompareOutput, COMPARISON_FILE};
pub use eval::{eval, evaluate_run, EVAL_DIR, METRICS_FILE, PREDICTIONS_FILE};
pub use generate::{format_summary, generate, summarize, SplitSummary, DATASET_CONFIG_FILE};
pub use ingest::{ingest, IngestArgs};
pub use train::{
    dataset_fingerprint, dropout_ablation, load_run_info, train, RunInfo, RunSummary, TrainArgs, BEST_DIR, CONFIG_FILE,
    GRAD_CHECK_FILE, HISTORY_FILE, LAST_DIR, RUN_FILE, VOCAB_FILE,
};

use std::fs;
use std::path::{Path, PathBuf};

use crate::{CliError, Result};

/// Fails unless `dir` is absent or an empty directory.
pub(crate) fn ensure_fresh(dir: &Path, hint: &str) -> Result<()> {
    if dir.exists() {
        let empty = dir.is_dir() && fs::read_dir(dir)?.next().is_none();
        if !empty {
            return Err(CliError::Usage(format!("{} already exists; {hint}", dir.display())));
        }
    }
    Ok(())
}

/// Hidden sibling used to build a directory before moving it into place.
pub(crate) fn staging_dir(dir: &Path) -> PathBuf {
    let name = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    dir.with_file_name(format!(".{name}.partial"))
}

/// Moves a finished staging directory to `dir`.
pub(crate) fn publish(staging: &Path, dir: &Path) -> Result<()> {
    if dir.exists() {
        fs::remove_dir(dir)?;
    }
    if let Some(parent) = dir.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::rename(staging, dir)?;
    Ok(())
}

/// Left-aligned plain-text table.
pub(crate) fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        parts.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}
