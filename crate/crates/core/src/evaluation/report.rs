use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ErrorOverlap, EvalError, EvalReport};
use crate::plot_synth::{render_plot, Answer, Category, DatasetManifest, PlotKind, PlotSpec, Series};

pub const METRIC_COLUMNS: [&str; 4] = ["Accuracy", "Precision", "Recall", "F1 Score"];
const WORST_LIMIT: usize = 50;
const MAX_SERIES_PER_CHART: usize = 4;

pub fn fmt4(v: f64) -> String {
    format!("{v:.4}")
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|e| EvalError::write(path, e))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>, EvalError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(EvalError::Csv)?;
    for r in rows {
        w.write_record(r).map_err(EvalError::Csv)?;
    }
    w.into_inner().map_err(|e| EvalError::Csv(e.into_error().into()))
}

fn markdown_table(header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: &[String]| {
        let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        format!("| {} |\n", padded.join(" | "))
    };
    let mut out = line(header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    out.push_str(&format!("|-{}-|\n", rule.join("-|-")));
    for r in rows {
        out.push_str(&line(r));
    }
    out
}

/// Metric table rows: model, split, n and the four metrics.
pub fn metrics_table(reports: &[EvalReport]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = ["Model", "Split", "N"].iter().map(|s| s.to_string()).collect();
    header.extend(METRIC_COLUMNS.iter().map(|s| s.to_string()));
    let rows = reports
        .iter()
        .map(|r| {
            let m = &r.metrics;
            vec![
                r.model.clone(),
                r.split.clone(),
                m.matrix.total().to_string(),
                fmt4(m.accuracy),
                fmt4(m.precision),
                fmt4(m.recall),
                fmt4(m.f1),
            ]
        })
        .collect();
    (header, rows)
}

fn unique_names(reports: &[EvalReport]) -> Vec<String> {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    reports
        .iter()
        .map(|r| {
            let n = seen.entry(r.model.as_str()).or_insert(0);
            *n += 1;
            if *n == 1 {
                r.model.clone()
            } else {
                format!("{} ({})", r.model, n)
            }
        })
        .collect()
}

fn bar_chart(
    id: &str,
    title: &str,
    x_label: &str,
    categories: Vec<String>,
    series: Vec<(String, Vec<f64>)>,
    path: &Path,
) -> Result<(), EvalError> {
    let spec = PlotSpec {
        plot_id: id.to_string(),
        kind: PlotKind::Bar,
        title: title.to_string(),
        x_label: x_label.to_string(),
        y_label: "Score".to_string(),
        x_categories: categories,
        legend_labels: series.iter().map(|(n, _)| n.clone()).collect(),
        series: series
            .into_iter()
            .map(|(name, values)| Series { name, values })
            .collect(),
        style_seed: 0,
    };
    let rendered = render_plot(&spec, 480, 336)?;
    rendered.image.save(path).map_err(|e| EvalError::Render(e.into()))
}

/// Files written by [`emit_report`].
#[derive(Debug, Clone, Default)]
pub struct ReportFiles {
    pub files: Vec<PathBuf>,
}

/// Writes the metrics table (CSV + markdown), the per-category CSV, the
/// error-overlap summary, bar charts and a worst-examples listing.
/// `manifest`, when given, supplies question text for the listing.
pub fn emit_report(
    reports: &[EvalReport],
    overlaps: &[ErrorOverlap],
    manifest: Option<&DatasetManifest>,
    out_dir: &Path,
) -> Result<ReportFiles, EvalError> {
    fs::create_dir_all(out_dir).map_err(|e| EvalError::write(out_dir, e))?;
    let mut files = ReportFiles::default();
    let mut put = |name: &str, contents: Vec<u8>| -> Result<(), EvalError> {
        let p = out_dir.join(name);
        write_file(&p, contents)?;
        files.files.push(p);
        Ok(())
    };

    let (header, rows) = metrics_table(reports);
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    put("metrics.csv", csv_bytes(&header_refs, &rows)?)?;
    put("metrics.md", markdown_table(&header, &rows).into_bytes())?;

    let mut cat_rows = Vec::new();
    for r in reports {
        for (c, m) in &r.per_category {
            cat_rows.push(vec![
                r.model.clone(),
                c.as_str().to_string(),
                m.count.to_string(),
                fmt4(m.accuracy),
                fmt4(m.precision),
                fmt4(m.recall),
                fmt4(m.f1),
            ]);
        }
    }
    let mut cat_header = vec!["Model", "Category", "N"];
    cat_header.extend(METRIC_COLUMNS);
    put("per_category.csv", csv_bytes(&cat_header, &cat_rows)?)?;

    let overlap_rows: Vec<Vec<String>> = overlaps
        .iter()
        .map(|o| {
            vec![
                o.model_a.clone(),
                o.model_b.clone(),
                o.fp_a.len().to_string(),
                o.fp_b.len().to_string(),
                o.shared_fp.len().to_string(),
                o.fn_a.len().to_string(),
                o.fn_b.len().to_string(),
                o.shared_fn.len().to_string(),
            ]
        })
        .collect();
    put(
        "error_overlap.csv",
        csv_bytes(
            &[
                "Model A",
                "Model B",
                "FP A",
                "FP B",
                "Shared FP",
                "FN A",
                "FN B",
                "Shared FN",
            ],
            &overlap_rows,
        )?,
    )?;
    let mut summary = String::from("# Error overlap\n");
    for o in overlaps {
        let _ = write!(
            summary,
            "\n## {} vs {}\n\n- {}.\n- {}.\n",
            o.model_a,
            o.model_b,
            o.framing(true),
            o.framing(false)
        );
    }
    put("error_overlap.md", summary.into_bytes())?;

    put("worst_examples.md", worst_examples(reports, manifest).into_bytes())?;

    if !reports.is_empty() {
        let names = unique_names(reports);
        for (chunk_no, chunk) in reports.chunks(MAX_SERIES_PER_CHART).enumerate() {
            let series = chunk
                .iter()
                .enumerate()
                .map(|(i, r)| {
                    let m = &r.metrics;
                    (
                        names[chunk_no * MAX_SERIES_PER_CHART + i].clone(),
                        vec![m.accuracy, m.precision, m.recall, m.f1],
                    )
                })
                .collect();
            let suffix = if chunk_no == 0 {
                String::new()
            } else {
                format!("_{}", chunk_no + 1)
            };
            let name = format!("metrics{suffix}.png");
            let p = out_dir.join(&name);
            bar_chart(
                "metrics",
                "Model comparison",
                "Metric",
                vec!["Acc".into(), "Prec".into(), "Rec".into(), "F1".into()],
                series,
                &p,
            )?;
            files.files.push(p);

            let cats: Vec<Category> = {
                let mut all: Vec<Category> = chunk.iter().flat_map(|r| r.per_category.keys().copied()).collect();
                all.sort();
                all.dedup();
                all
            };
            if cats.len() >= 2 {
                let series = chunk
                    .iter()
                    .enumerate()
                    .map(|(i, r)| {
                        let vals = cats
                            .iter()
                            .map(|c| r.per_category.get(c).map_or(0.0, |m| m.accuracy))
                            .collect();
                        (names[chunk_no * MAX_SERIES_PER_CHART + i].clone(), vals)
                    })
                    .collect();
                let p = out_dir.join(format!("category_accuracy{suffix}.png"));
                bar_chart(
                    "category-accuracy",
                    "Accuracy by category",
                    "Category",
                    cats.iter().map(|c| c.as_str().replace('_', " ")).collect(),
                    series,
                    &p,
                )?;
                files.files.push(p);
            }
        }
    }
    Ok(files)
}

/// Items most models got wrong, ranked by wrong-model count and then by
/// mean confidence in the wrong answer.
fn worst_examples(reports: &[EvalReport], manifest: Option<&DatasetManifest>) -> String {
    let mut by_id: BTreeMap<&str, Vec<Option<(Answer, f64)>>> = BTreeMap::new();
    let mut gold: HashMap<&str, Answer> = HashMap::new();
    for (i, r) in reports.iter().enumerate() {
        for p in &r.predictions {
            let e = by_id
                .entry(p.qa_id.as_str())
                .or_insert_with(|| vec![None; reports.len()]);
            e[i] = Some((p.predicted, p.probability_yes));
            gold.insert(p.qa_id.as_str(), p.gold);
        }
    }
    let questions: HashMap<&str, (&str, Category)> = manifest
        .map(|m| {
            m.items
                .iter()
                .map(|i| (i.qa_id.as_str(), (i.question.as_str(), i.category)))
                .collect()
        })
        .unwrap_or_default();

    let mut ranked: Vec<(usize, f64, &str)> = by_id
        .iter()
        .filter_map(|(id, preds)| {
            let g = gold[id];
            let wrong: Vec<f64> = preds
                .iter()
                .flatten()
                .filter(|(p, _)| *p != g)
                .map(|(_, py)| if g == Answer::Yes { 1.0 - py } else { *py })
                .collect();
            (!wrong.is_empty()).then(|| (wrong.len(), wrong.iter().sum::<f64>() / wrong.len() as f64, *id))
        })
        .collect();
    ranked.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.total_cmp(&a.1)).then(a.2.cmp(b.2)));

    let mut header: Vec<String> = ["qa_id", "category", "question", "gold"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(unique_names(reports));
    let rows: Vec<Vec<String>> = ranked
        .iter()
        .take(WORST_LIMIT)
        .map(|(_, _, id)| {
            let (q, c) = questions.get(id).copied().unwrap_or(("", Category::Unknown));
            let mut row = vec![
                id.to_string(),
                if q.is_empty() {
                    "-".into()
                } else {
                    c.as_str().to_string()
                },
                if q.is_empty() {
                    "-".into()
                } else {
                    q.replace('|', "\\|")
                },
                gold[id].as_str().to_string(),
            ];
            row.extend(by_id[id].iter().map(|p| match p {
                Some((a, py)) => format!("{} ({:.2})", a.as_str(), py),
                None => "-".into(),
            }));
            row
        })
        .collect();
    let mut out = String::from("# Worst examples\n\nPredicted label per model, with P(yes) in parentheses.\n\n");
    if rows.is_empty() {
        out.push_str("No errors.\n");
    } else {
        out.push_str(&markdown_table(&header, &rows));
    }
    out
}
