use plotvqa::evaluation::*;
use plotvqa::plot_synth::{Answer, Category, DatasetManifest, QAItem, SplitName};
use proptest::prelude::*;

use Answer::{No, Yes};

fn item(id: &str, category: Category, answer: Answer) -> QAItem {
    QAItem {
        qa_id: id.into(),
        plot_id: format!("p-{id}"),
        question: format!("question {id}?"),
        template_id: "t".into(),
        category,
        answer,
    }
}

fn manifest(items: Vec<QAItem>) -> DatasetManifest {
    DatasetManifest::new(SplitName::Test, "fixture", items, Default::default())
}

fn four() -> DatasetManifest {
    manifest(vec![
        item("q1", Category::Structure, Yes),
        item("q2", Category::Structure, No),
        item("q3", Category::Reasoning, Yes),
        item("q4", Category::Reasoning, No),
    ])
}

fn records(preds: &[(&str, Answer)]) -> Vec<PredictionRecord> {
    preds
        .iter()
        .map(|(id, p)| PredictionRecord {
            qa_id: id.to_string(),
            predicted: *p,
            probability_yes: if *p == Yes { 0.8 } else { 0.2 },
        })
        .collect()
}

#[test]
fn metrics_on_a_small_fixture() {
    let m = compute_metrics(&[(Yes, Yes), (Yes, No), (No, Yes), (Yes, Yes)]).unwrap();
    assert_eq!(m.matrix, ConfusionMatrix::new(2, 1, 1, 0));
    assert!((m.accuracy - 0.5).abs() < 1e-12);
    assert!((m.precision - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.recall - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!(!m.degenerate);

    let perfect = compute_metrics(&[(Yes, Yes), (No, No)]).unwrap();
    assert_eq!(
        (perfect.accuracy, perfect.precision, perfect.recall, perfect.f1),
        (1.0, 1.0, 1.0, 1.0)
    );
}

#[test]
fn no_positives_is_degenerate_not_an_error() {
    let m = compute_metrics(&[(No, No), (No, No)]).unwrap();
    assert_eq!(m.accuracy, 1.0);
    assert_eq!((m.precision, m.recall, m.f1), (0.0, 0.0, 0.0));
    assert!(m.degenerate);
    assert!(matches!(compute_metrics(&[]), Err(EvalError::EmptyPredictionList)));
}

#[test]
fn breakdown_by_category_splits_items() {
    let preds = vec![
        ("q1".to_string(), Yes),
        ("q2".to_string(), Yes),
        ("q3".to_string(), Yes),
        ("q4".to_string(), No),
    ];
    let b = breakdown_by_category(&preds, &four()).unwrap();
    assert_eq!(b.len(), 2);
    assert_eq!(b[&Category::Structure].count, 2);
    assert_eq!(b[&Category::Structure].accuracy, 0.5);
    assert_eq!(b[&Category::Reasoning].accuracy, 1.0);
    assert!(!b.contains_key(&Category::DataRetrieval));

    let unknown = vec![("nope".to_string(), Yes)];
    assert!(matches!(breakdown_by_category(&unknown, &four()), Err(EvalError::UnknownQaId(id)) if id == "nope"));
}

#[test]
fn evaluate_checks_ids() {
    let m = four();
    let dup = records(&[("q1", Yes), ("q1", No)]);
    assert!(matches!(evaluate("a", &dup, &m), Err(EvalError::DuplicateQaId(_))));
    let unknown = records(&[("zz", Yes)]);
    assert!(matches!(evaluate("a", &unknown, &m), Err(EvalError::UnknownQaId(_))));
    assert!(matches!(evaluate("a", &[], &m), Err(EvalError::EmptyPredictionList)));
    let r = evaluate("a", &records(&[("q1", Yes), ("q2", No), ("q3", No), ("q4", No)]), &m).unwrap();
    assert_eq!(r.split, "test");
    assert_eq!(r.metrics.accuracy, 0.75);
}

#[test]
fn error_overlap_counts_shared_mistakes() {
    let m = manifest(
        (0..8)
            .map(|i| item(&format!("q{i}"), Category::Structure, if i < 4 { No } else { Yes }))
            .collect(),
    );
    // A: FP on q0,q1,q2; FN on q4.  B: FP on q1,q2; FN on q4,q5.
    let a = evaluate(
        "A",
        &records(&[
            ("q0", Yes),
            ("q1", Yes),
            ("q2", Yes),
            ("q3", No),
            ("q4", No),
            ("q5", Yes),
            ("q6", Yes),
            ("q7", Yes),
        ]),
        &m,
    )
    .unwrap();
    let b = evaluate(
        "B",
        &records(&[
            ("q0", No),
            ("q1", Yes),
            ("q2", Yes),
            ("q3", No),
            ("q4", No),
            ("q5", No),
            ("q6", Yes),
            ("q7", Yes),
        ]),
        &m,
    )
    .unwrap();
    let o = error_overlap(&a, &b).unwrap();
    assert_eq!(o.shared_fp.len(), 2);
    assert_eq!(o.shared_fn.len(), 1);
    assert_eq!(
        o.short_framing(true),
        ("2 of 3 (A)".to_string(), "2 of 2 (B)".to_string())
    );
    assert_eq!(
        o.framing(true),
        "2 out of the 3 false positive errors in A and 2 out of the 2 false positive errors in B were on the same examples"
    );

    let rev = error_overlap(&b, &a).unwrap();
    assert_eq!(rev.shared_fp, o.shared_fp);
    assert_eq!(rev.shared_fn, o.shared_fn);

    let short = evaluate("C", &records(&[("q0", Yes)]), &m).unwrap();
    assert!(matches!(
        error_overlap(&a, &short),
        Err(EvalError::MismatchedEvaluationSets(_))
    ));
}

#[test]
fn constant_yes_on_balanced_set() {
    let m = manifest(
        (0..200)
            .map(|i| {
                item(
                    &format!("q{i}"),
                    Category::DataRetrieval,
                    if i % 2 == 0 { Yes } else { No },
                )
            })
            .collect(),
    );
    let preds: Vec<PredictionRecord> = m
        .items
        .iter()
        .map(|it| PredictionRecord {
            qa_id: it.qa_id.clone(),
            predicted: Yes,
            probability_yes: 1.0,
        })
        .collect();
    let r = evaluate("always_yes", &preds, &m).unwrap();
    assert_eq!(r.metrics.accuracy, 0.5);
    assert_eq!(r.metrics.precision, 0.5);
    assert_eq!(r.metrics.recall, 1.0);
    assert!((r.metrics.f1 - 2.0 / 3.0).abs() < 1e-12);
}

#[test]
fn predictions_jsonl_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("preds.jsonl");
    let recs = records(&[("q1", Yes), ("q2", No)]);
    write_predictions(&p, &recs).unwrap();
    assert_eq!(read_predictions(&p).unwrap(), recs);
    std::fs::write(&p, "{\"qa_id\": 3}\n").unwrap();
    assert!(matches!(read_predictions(&p), Err(EvalError::Parse { line: 1, .. })));
}

fn two_reports() -> (Vec<EvalReport>, Vec<ErrorOverlap>) {
    let m = four();
    let a = evaluate(
        "baseline_concat",
        &records(&[("q1", Yes), ("q2", Yes), ("q3", No), ("q4", No)]),
        &m,
    )
    .unwrap();
    let b = evaluate(
        "crossmodal",
        &records(&[("q1", Yes), ("q2", Yes), ("q3", Yes), ("q4", No)]),
        &m,
    )
    .unwrap();
    let o = error_overlap(&a, &b).unwrap();
    (vec![a, b], vec![o])
}

#[test]
fn report_layout() {
    let (reports, overlaps) = two_reports();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&reports, &overlaps, Some(&four()), dir.path()).unwrap();
    for name in [
        "metrics.csv",
        "metrics.md",
        "per_category.csv",
        "error_overlap.csv",
        "metrics.png",
    ] {
        assert!(files.files.contains(&dir.path().join(name)), "{name} missing");
    }
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    for col in METRIC_COLUMNS {
        assert!(lines[0].contains(col));
    }
    assert!(lines[1].starts_with("baseline_concat,"));
    assert_eq!(lines[1], "baseline_concat,test,4,0.5000,0.5000,0.5000,0.5000");
    assert_eq!(lines[2], "crossmodal,test,4,0.7500,0.6667,1.0000,0.8000");
    let png = image::open(dir.path().join("metrics.png")).unwrap();
    assert!(png.width() > 0);
}

#[test]
fn report_is_byte_identical_across_runs() {
    let (reports, overlaps) = two_reports();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let f1 = emit_report(&reports, &overlaps, Some(&four()), d1.path()).unwrap();
    emit_report(&reports, &overlaps, Some(&four()), d2.path()).unwrap();
    for p in &f1.files {
        let name = p.file_name().unwrap();
        assert_eq!(
            std::fs::read(p).unwrap(),
            std::fs::read(d2.path().join(name)).unwrap(),
            "{name:?}"
        );
    }
}

fn answer() -> impl Strategy<Value = Answer> {
    prop_oneof![Just(Yes), Just(No)]
}

proptest! {
    #[test]
    fn metrics_match_an_independent_count(pairs in prop::collection::vec((answer(), answer()), 1..200)) {
        let m = compute_metrics(&pairs).unwrap();
        let count = |p: Answer, g: Answer| pairs.iter().filter(|x| **x == (p, g)).count() as f64;
        let (tp, fp, fn_, tn) = (count(Yes, Yes), count(Yes, No), count(No, Yes), count(No, No));
        prop_assert!((m.accuracy - (tp + tn) / pairs.len() as f64).abs() < 1e-12);
        if tp + fp + fn_ > 0.0 {
            prop_assert!((m.f1 - 2.0 * tp / (2.0 * tp + fp + fn_)).abs() < 1e-12);
        }
        prop_assert!(m.f1 <= m.precision.max(m.recall) + 1e-12);
        prop_assert!(m.f1 >= m.precision.min(m.recall) - 1e-12 || m.f1 == 0.0);
        for v in [m.accuracy, m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }

    #[test]
    fn overlap_is_symmetric(
        gold in prop::collection::vec(answer(), 1..40),
        flips_a in prop::collection::vec(any::<bool>(), 40),
        flips_b in prop::collection::vec(any::<bool>(), 40),
    ) {
        let m = manifest(gold.iter().enumerate().map(|(i, g)| item(&format!("q{i}"), Category::Structure, *g)).collect());
        let flip = |g: Answer, f: bool| if f { if g == Yes { No } else { Yes } } else { g };
        let recs = |flips: &[bool]| -> Vec<PredictionRecord> {
            gold.iter().enumerate().map(|(i, g)| PredictionRecord {
                qa_id: format!("q{i}"),
                predicted: flip(*g, flips[i]),
                probability_yes: 0.5,
            }).collect()
        };
        let a = evaluate("A", &recs(&flips_a), &m).unwrap();
        let b = evaluate("B", &recs(&flips_b), &m).unwrap();
        let ab = error_overlap(&a, &b).unwrap();
        let ba = error_overlap(&b, &a).unwrap();
        prop_assert_eq!(&ab.shared_fp, &ba.shared_fp);
        prop_assert_eq!(&ab.shared_fn, &ba.shared_fn);
        prop_assert!(ab.shared_fp.len() <= ab.fp_a.len().min(ab.fp_b.len()));
        let self_overlap = error_overlap(&a, &a).unwrap();
        prop_assert_eq!(&self_overlap.shared_fp, &a.false_positives());
    }
}
