use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use super::EvalError;
use crate::plot_synth::{Answer, Category, DatasetManifest};

/// Binary confusion counts with "yes" as the positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionMatrix {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        Self { tp, fp, fn_, tn }
    }

    pub fn record(&mut self, predicted: Answer, gold: Answer) {
        match (predicted, gold) {
            (Answer::Yes, Answer::Yes) => self.tp += 1,
            (Answer::Yes, Answer::No) => self.fp += 1,
            (Answer::No, Answer::Yes) => self.fn_ += 1,
            (Answer::No, Answer::No) => self.tn += 1,
        }
    }

    pub fn from_pairs(pairs: &[(Answer, Answer)]) -> Self {
        let mut m = Self::default();
        for &(p, g) in pairs {
            m.record(p, g);
        }
        m
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Accuracy plus precision/recall/F1 on the "yes" label.
///
/// A zero denominator yields 0 for the affected metric and sets
/// `degenerate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub matrix: ConfusionMatrix,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

impl Metrics {
    pub fn from_matrix(matrix: ConfusionMatrix) -> Result<Self, EvalError> {
        let n = matrix.total();
        if n == 0 {
            return Err(EvalError::EmptyPredictionList);
        }
        let ratio = |num: usize, den: usize| if den == 0 { None } else { Some(num as f64 / den as f64) };
        let precision = ratio(matrix.tp, matrix.tp + matrix.fp);
        let recall = ratio(matrix.tp, matrix.tp + matrix.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            _ => None,
        };
        Ok(Self {
            matrix,
            accuracy: (matrix.tp + matrix.tn) as f64 / n as f64,
            precision: precision.unwrap_or(0.0),
            recall: recall.unwrap_or(0.0),
            f1: f1.unwrap_or(0.0),
            degenerate: precision.is_none() || recall.is_none() || f1.is_none(),
        })
    }
}

/// Metrics over `(predicted, gold)` pairs.
pub fn compute_metrics(pairs: &[(Answer, Answer)]) -> Result<Metrics, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyPredictionList);
    }
    Metrics::from_matrix(ConfusionMatrix::from_pairs(pairs))
}

/// One line of the prediction interchange format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub qa_id: String,
    pub predicted: Answer,
    pub probability_yes: f64,
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<(), EvalError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| EvalError::write(path, e))?;
    f.write_all(&out).map_err(|e| EvalError::write(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, EvalError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// A scored prediction joined with its gold label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPrediction {
    pub qa_id: String,
    pub predicted: Answer,
    pub gold: Answer,
    pub probability_yes: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryMetrics {
    pub count: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl From<&Metrics> for CategoryMetrics {
    fn from(m: &Metrics) -> Self {
        Self {
            count: m.matrix.total(),
            accuracy: m.accuracy,
            precision: m.precision,
            recall: m.recall,
            f1: m.f1,
        }
    }
}

/// Evaluation of one model on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub split: String,
    pub metrics: Metrics,
    pub per_category: BTreeMap<Category, CategoryMetrics>,
    pub predictions: Vec<ScoredPrediction>,
}

impl EvalReport {
    pub fn qa_ids(&self) -> BTreeSet<&str> {
        self.predictions.iter().map(|p| p.qa_id.as_str()).collect()
    }

    fn errors(&self, predicted: Answer) -> BTreeSet<String> {
        self.predictions
            .iter()
            .filter(|p| p.predicted == predicted && p.gold != predicted)
            .map(|p| p.qa_id.clone())
            .collect()
    }

    pub fn false_positives(&self) -> BTreeSet<String> {
        self.errors(Answer::Yes)
    }

    pub fn false_negatives(&self) -> BTreeSet<String> {
        self.errors(Answer::No)
    }
}

fn index_manifest(manifest: &DatasetManifest) -> HashMap<&str, (Answer, Category)> {
    manifest
        .items
        .iter()
        .map(|i| (i.qa_id.as_str(), (i.answer, i.category)))
        .collect()
}

/// Per-category metrics for `(qa_id, predicted)` pairs; categories without
/// items are omitted.
pub fn breakdown_by_category(
    predictions: &[(String, Answer)],
    manifest: &DatasetManifest,
) -> Result<BTreeMap<Category, CategoryMetrics>, EvalError> {
    let index = index_manifest(manifest);
    let mut matrices: BTreeMap<Category, ConfusionMatrix> = BTreeMap::new();
    for (qa_id, predicted) in predictions {
        let (gold, category) = index
            .get(qa_id.as_str())
            .copied()
            .ok_or_else(|| EvalError::UnknownQaId(qa_id.clone()))?;
        matrices.entry(category).or_default().record(*predicted, gold);
    }
    matrices
        .into_iter()
        .map(|(c, m)| Ok((c, CategoryMetrics::from(&Metrics::from_matrix(m)?))))
        .collect()
}

/// Scores predictions against a manifest.
pub fn evaluate(
    model: &str,
    predictions: &[PredictionRecord],
    manifest: &DatasetManifest,
) -> Result<EvalReport, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::EmptyPredictionList);
    }
    let index = index_manifest(manifest);
    let mut seen = BTreeSet::new();
    let mut scored = Vec::with_capacity(predictions.len());
    for p in predictions {
        let (gold, _) = index
            .get(p.qa_id.as_str())
            .copied()
            .ok_or_else(|| EvalError::UnknownQaId(p.qa_id.clone()))?;
        if !seen.insert(p.qa_id.as_str()) {
            return Err(EvalError::DuplicateQaId(p.qa_id.clone()));
        }
        scored.push(ScoredPrediction {
            qa_id: p.qa_id.clone(),
            predicted: p.predicted,
            gold,
            probability_yes: p.probability_yes,
        });
    }
    let pairs: Vec<(Answer, Answer)> = scored.iter().map(|s| (s.predicted, s.gold)).collect();
    let metrics = compute_metrics(&pairs)?;
    let labelled: Vec<(String, Answer)> = scored.iter().map(|s| (s.qa_id.clone(), s.predicted)).collect();
    let per_category = breakdown_by_category(&labelled, manifest)?;
    Ok(EvalReport {
        model: model.to_string(),
        split: manifest.split_name.as_str().to_string(),
        metrics,
        per_category,
        predictions: scored,
    })
}

/// Shared false positives / false negatives between two models.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorOverlap {
    pub model_a: String,
    pub model_b: String,
    pub fp_a: BTreeSet<String>,
    pub fp_b: BTreeSet<String>,
    pub fn_a: BTreeSet<String>,
    pub fn_b: BTreeSet<String>,
    pub shared_fp: BTreeSet<String>,
    pub shared_fn: BTreeSet<String>,
}

impl ErrorOverlap {
    /// Short form, e.g. `2 of 3 (A)`, for `(fp|fn)` on side A and B.
    pub fn short_framing(&self, false_positive: bool) -> (String, String) {
        let (shared, a, b) = if false_positive {
            (&self.shared_fp, &self.fp_a, &self.fp_b)
        } else {
            (&self.shared_fn, &self.fn_a, &self.fn_b)
        };
        (
            format!("{} of {} ({})", shared.len(), a.len(), self.model_a),
            format!("{} of {} ({})", shared.len(), b.len(), self.model_b),
        )
    }

    /// Sentence form: "k out of the n false positive errors in A and …".
    pub fn framing(&self, false_positive: bool) -> String {
        let (shared, a, b, kind) = if false_positive {
            (&self.shared_fp, &self.fp_a, &self.fp_b, "false positive")
        } else {
            (&self.shared_fn, &self.fn_a, &self.fn_b, "false negative")
        };
        format!(
            "{k} out of the {na} {kind} errors in {ma} and {k} out of the {nb} {kind} errors in {mb} were on the same examples",
            k = shared.len(),
            na = a.len(),
            nb = b.len(),
            ma = self.model_a,
            mb = self.model_b,
        )
    }
}

/// Error overlap between two reports over the same qa_id set.
pub fn error_overlap(a: &EvalReport, b: &EvalReport) -> Result<ErrorOverlap, EvalError> {
    if a.split != b.split || a.qa_ids() != b.qa_ids() {
        let ia = a.qa_ids();
        let ib = b.qa_ids();
        return Err(EvalError::MismatchedEvaluationSets(format!(
            "{} ({} split, {} items) vs {} ({} split, {} items), {} ids differ",
            a.model,
            a.split,
            ia.len(),
            b.model,
            b.split,
            ib.len(),
            ia.symmetric_difference(&ib).count()
        )));
    }
    let (fp_a, fp_b) = (a.false_positives(), b.false_positives());
    let (fn_a, fn_b) = (a.false_negatives(), b.false_negatives());
    Ok(ErrorOverlap {
        model_a: a.model.clone(),
        model_b: b.model.clone(),
        shared_fp: fp_a.intersection(&fp_b).cloned().collect(),
        shared_fn: fn_a.intersection(&fn_b).cloned().collect(),
        fp_a,
        fp_b,
        fn_a,
        fn_b,
    })
}
