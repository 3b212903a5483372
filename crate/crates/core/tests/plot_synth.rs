use plotvqa::plot_synth::*;
use proptest::prelude::*;
use std::collections::BTreeSet;

fn kind() -> impl Strategy<Value = PlotKind> {
    prop_oneof![Just(PlotKind::Bar), Just(PlotKind::Line), Just(PlotKind::Dotline)]
}

/// Straight from the series values, without going through the template rules.
fn reference_answer(spec: &PlotSpec, template_id: &str, s: &Slots) -> bool {
    let v = |i: Option<usize>| &spec.series[i.unwrap()].values;
    match template_id {
        "structure.element_count_eq_legend" => {
            let drawn = if spec.kind == PlotKind::Bar {
                spec.series.len() * spec.x_categories.len()
            } else {
                spec.series.len()
            };
            drawn == spec.legend_labels.len()
        }
        "structure.legend_count_eq_k" => spec.legend_labels.len() == s.k.unwrap(),
        "structure.category_count_gt_k" => spec.x_categories.len() > s.k.unwrap(),
        "data_retrieval.less_than_at" => v(s.series)[s.cat_a.unwrap()] < v(s.series)[s.cat_b.unwrap()],
        "data_retrieval.greater_than_at" => v(s.series)[s.cat_a.unwrap()] > v(s.series)[s.cat_b.unwrap()],
        "data_retrieval.series_less_than_series" => v(s.series)[s.cat_a.unwrap()] < v(s.series_b)[s.cat_a.unwrap()],
        "reasoning.monotonic_increase" => {
            let xs = v(s.series);
            (1..xs.len()).all(|i| xs[i] > xs[i - 1])
        }
        "reasoning.monotonic_decrease" => {
            let xs = v(s.series);
            (1..xs.len()).all(|i| xs[i] < xs[i - 1])
        }
        "reasoning.always_greater" => (0..spec.x_categories.len()).all(|i| v(s.series)[i] > v(s.series_b)[i]),
        "reasoning.max_at" => {
            let xs = v(s.series);
            let c = s.cat_a.unwrap();
            xs.iter().filter(|x| **x >= xs[c]).count() == 1
        }
        other => panic!("unexpected template {other}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn questions_parse_back_and_agree_with_the_data(seed in any::<u64>(), kind in kind()) {
        let spec = sample_plot_spec(seed, kind);
        let set = TemplateSet::default();
        let q = generate_questions(&spec, &set, seed ^ 7).unwrap();
        prop_assert_eq!(q.items.len() + q.skipped.len(), set.templates.len());
        for item in &q.items {
            let t = set.get(&item.template_id).unwrap();
            prop_assert_eq!(t.category, item.category);
            let slots = t.parse(&spec, &item.question).expect("question parses");
            prop_assert_eq!(oracle_answer(&spec, &item.template_id, &slots).unwrap(), item.answer);
            prop_assert_eq!(
                Answer::from_bool(reference_answer(&spec, &item.template_id, &slots)),
                item.answer,
                "{}", item.question
            );
            prop_assert!(set.match_generic(&item.question).is_some());
        }
    }

    #[test]
    fn boxes_stay_on_the_canvas(seed in any::<u64>(), kind in kind(), w in 200u32..700, h in 150u32..500) {
        let spec = sample_plot_spec(seed, kind);
        let r = render_plot(&spec, w, h).unwrap();
        prop_assert_eq!(r.image.dimensions(), (w, h));
        prop_assert!(!r.boxes.is_empty());
        for b in &r.boxes {
            prop_assert!(b.is_within(w, h), "{b:?}");
        }
        let expected_bars = spec.series.len() * spec.x_categories.len();
        if kind == PlotKind::Bar {
            prop_assert_eq!(r.count(RegionLabel::Bar), expected_bars);
        }
    }

    #[test]
    fn comparisons_are_strict(a in 0.0f64..100.0) {
        let mut spec = sample_plot_spec(3, PlotKind::Line);
        for v in spec.series[0].values.iter_mut() {
            *v = a;
        }
        let slots = Slots { series: Some(0), cat_a: Some(0), cat_b: Some(1), ..Slots::default() };
        for id in ["data_retrieval.less_than_at", "data_retrieval.greater_than_at",
                   "reasoning.monotonic_increase", "reasoning.monotonic_decrease", "reasoning.max_at"] {
            prop_assert_eq!(oracle_answer(&spec, id, &slots).unwrap(), Answer::No, "{}", id);
        }
    }
}

#[test]
fn generated_splits_are_balanced_and_disjoint() {
    let ds = generate_dataset(&DatasetConfig {
        questions: [120, 40, 40],
        images: [40, 12, 12],
        seed: 17,
        ..DatasetConfig::default()
    })
    .unwrap();
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for (i, split) in SplitName::ALL.into_iter().enumerate() {
        let m = ds.split(split);
        assert_eq!(m.len(), [120, 40, 40][i]);
        assert!(m.is_balanced());
        let yes = m.items.iter().filter(|q| q.answer == Answer::Yes).count();
        assert_eq!(yes * 2, m.len());
        let ids: BTreeSet<String> = m.plot_ids().into_iter().map(String::from).collect();
        assert!(seen.is_disjoint(&ids), "{split:?} shares plots");
        seen.extend(ids);
        let qa: BTreeSet<&str> = m.items.iter().map(|q| q.qa_id.as_str()).collect();
        assert_eq!(qa.len(), m.len());
    }
}

#[test]
fn writing_twice_gives_identical_bytes() {
    let cfg = DatasetConfig {
        questions: [20, 10, 10],
        images: [6, 3, 3],
        seed: 5,
        ..DatasetConfig::default()
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate_dataset(&cfg).unwrap().write(a.path()).unwrap();
    generate_dataset(&cfg).unwrap().write(b.path()).unwrap();
    let list = |d: &std::path::Path| {
        let mut files = Vec::new();
        let mut stack = vec![d.to_path_buf()];
        while let Some(p) = stack.pop() {
            for e in std::fs::read_dir(&p).unwrap() {
                let e = e.unwrap().path();
                if e.is_dir() {
                    stack.push(e);
                } else {
                    files.push(e.strip_prefix(d).unwrap().to_path_buf());
                }
            }
        }
        files.sort();
        files
    };
    let files = list(a.path());
    assert_eq!(files, list(b.path()));
    assert!(files.iter().any(|f| f.extension().is_some_and(|e| e == "png")));
    for f in files {
        assert_eq!(
            std::fs::read(a.path().join(&f)).unwrap(),
            std::fs::read(b.path().join(&f)).unwrap(),
            "{f:?}"
        );
    }
    let m = DatasetManifest::load(a.path(), SplitName::Val).unwrap();
    for id in m.plot_ids() {
        assert!(m.image_path(a.path(), id).unwrap().exists());
        assert!(load_boxes(a.path(), id).unwrap().is_some());
    }
}
