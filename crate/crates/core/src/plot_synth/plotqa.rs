//! Ingestion of PlotQA-style question/answer files.
//!
//! Accepts either a bare JSON array of records or the upstream wrapper
//! object `{"qa_pairs": [...]}`. Each record needs a question string
//! (`question_string` or `question`), an `answer` (string or number) and
//! an image reference (`image_index` or `image`).

use serde_json::Value;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::dataset::{DatasetManifest, QAItem, SplitName};
use super::templates::{Answer, Category, TemplateSet};
use super::SynthError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AnswerFilter {
    /// Keep only records whose answer normalises to yes/no.
    YesNo,
}

#[derive(Debug, Clone)]
pub struct IngestOptions {
    pub answer_filter: AnswerFilter,
    pub split: SplitName,
    /// Template-set id recorded in the manifest.
    pub template_set: String,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            answer_filter: AnswerFilter::YesNo,
            split: SplitName::Test,
            template_set: "plotqa-upstream".to_string(),
        }
    }
}

pub const UNMATCHED_TEMPLATE: &str = "unmatched";

fn field<'a>(record: &'a Value, names: &[&str]) -> Option<&'a Value> {
    names.iter().find_map(|n| record.get(*n))
}

fn image_reference(record: &Value) -> Option<String> {
    match field(record, &["image_index", "image", "image_path", "image_id"])? {
        Value::Number(n) => Some(format!("{n}.png")),
        Value::String(s) if Path::new(s).extension().is_some() => Some(s.clone()),
        Value::String(s) => Some(format!("{s}.png")),
        _ => None,
    }
}

/// Reads a PlotQA-format file into an (unbalanced) manifest.
///
/// The balance invariant is relaxed here: an imbalanced result is logged
/// as a warning. Apply [`build_split`](super::build_split) afterwards to
/// obtain an exactly balanced split.
pub fn ingest_plotqa(
    qa_file: &Path,
    images_dir: &Path,
    options: &IngestOptions,
) -> Result<DatasetManifest, SynthError> {
    let text = fs::read_to_string(qa_file).map_err(|e| SynthError::io_at(qa_file, e))?;
    let root: Value = serde_json::from_str(&text).map_err(|e| SynthError::Parse {
        index: 0,
        message: format!("{}: {e}", qa_file.display()),
    })?;
    let records = match &root {
        Value::Array(a) => a,
        Value::Object(o) => o
            .get("qa_pairs")
            .and_then(Value::as_array)
            .ok_or_else(|| SynthError::Parse {
                index: 0,
                message: "expected a JSON array or an object with a \"qa_pairs\" array".into(),
            })?,
        _ => {
            return Err(SynthError::Parse {
                index: 0,
                message: "expected a JSON array of records".into(),
            })
        }
    };

    let templates = TemplateSet::default();
    let matchers: Vec<_> = templates.templates.iter().map(|t| (t, t.generic_regex())).collect();

    let mut items = Vec::new();
    let mut image_paths = BTreeMap::new();
    let mut missing = Vec::new();
    for (index, record) in records.iter().enumerate() {
        let parse_err = |message: &str| SynthError::Parse {
            index,
            message: message.to_string(),
        };
        let question = field(record, &["question_string", "question"])
            .and_then(Value::as_str)
            .ok_or_else(|| parse_err("missing question string"))?;
        let answer_raw = match field(record, &["answer"]).ok_or_else(|| parse_err("missing answer"))? {
            Value::String(s) => s.clone(),
            Value::Number(n) => n.to_string(),
            Value::Bool(b) => b.to_string(),
            _ => return Err(parse_err("answer must be a string or number")),
        };
        let image = image_reference(record).ok_or_else(|| parse_err("missing image reference"))?;

        let answer = match options.answer_filter {
            AnswerFilter::YesNo => match Answer::normalize(&answer_raw) {
                Some(a) => a,
                None => continue,
            },
        };

        let plot_id = Path::new(&image)
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| image.clone());
        let path: PathBuf = images_dir.join(&image);
        if !path.exists() {
            missing.push(path.display().to_string());
            continue;
        }
        image_paths.insert(plot_id.clone(), path);

        let trimmed = question.trim();
        let (template_id, category) = matchers
            .iter()
            .find(|(_, re)| re.is_match(trimmed))
            .map(|(t, _)| (t.id.to_string(), t.category))
            .unwrap_or_else(|| (UNMATCHED_TEMPLATE.to_string(), Category::Unknown));

        let qa_id = match field(record, &["question_id", "qid", "qa_id"]) {
            Some(Value::Number(n)) => format!("plotqa-{n}"),
            Some(Value::String(s)) => s.clone(),
            _ => format!("plotqa-{index}"),
        };
        items.push(QAItem {
            qa_id,
            plot_id,
            question: trimmed.to_string(),
            template_id,
            category,
            answer,
        });
    }

    if !missing.is_empty() {
        missing.sort();
        missing.dedup();
        return Err(SynthError::MissingImage(missing));
    }

    let manifest = DatasetManifest::new(options.split, options.template_set.clone(), items, image_paths);
    if !manifest.is_balanced() {
        log::warn!(
            "ingested split is imbalanced: {} yes / {} no",
            manifest.counts.n_yes,
            manifest.counts.n_no
        );
    }
    Ok(manifest)
}
