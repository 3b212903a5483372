mod common;

use image::{DynamicImage, RgbImage, RgbaImage};
use ndarray::Array2;
use plotvqa::encoders::*;
use plotvqa::fusion::FusionVariant;
use plotvqa::plot_synth::{render_plot, sample_plot_spec, PlotKind, QAItem, RegionBox, RegionLabel, SplitName};
use plotvqa::tensor::{Graph, ParamGroup, ParamStore};
use plotvqa::training::{grad_check, GradCheckOptions};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

#[test]
fn tokenizer_examples() {
    assert_eq!(tokenize("Is the line red?").unwrap(), ["is", "the", "line", "red", "?"]);
    assert_eq!(
        tokenize("2009 less than 2012?").unwrap(),
        ["2009", "less", "than", "2012", "?"]
    );
    assert!(matches!(tokenize(""), Err(EncoderError::EmptyQuestion)));
}

fn manifest_of(questions: &[&str]) -> plotvqa::plot_synth::DatasetManifest {
    let items = questions
        .iter()
        .enumerate()
        .map(|(i, q)| QAItem {
            qa_id: format!("q{i}"),
            plot_id: "p".into(),
            question: q.to_string(),
            template_id: "t".into(),
            category: plotvqa::plot_synth::Category::Structure,
            answer: plotvqa::plot_synth::Answer::Yes,
        })
        .collect();
    plotvqa::plot_synth::DatasetManifest::new(SplitName::Train, "x", items, Default::default())
}

#[test]
fn vocab_examples() {
    let m = manifest_of(&["a b", "a c"]);
    assert_eq!(build_vocab(&m, 1).unwrap().len(), 7);
    assert_eq!(build_vocab(&m, 2).unwrap().len(), 5);
    assert_eq!(build_vocab(&m, 1).unwrap(), build_vocab(&m, 1).unwrap());
    assert!(matches!(
        build_vocab(&manifest_of(&[]), 1),
        Err(EncoderError::EmptyManifest)
    ));
}

#[test]
fn vocab_specials_are_reserved() {
    let v = build_vocab(&manifest_of(&["the cat", "the dog"]), 1).unwrap();
    for (i, t) in SPECIAL_TOKENS.iter().enumerate() {
        assert_eq!(v.id(t), i);
    }
    assert_eq!(v.id("the"), 4, "most frequent token first");
    assert_eq!(v.id("zebra"), UNK_ID);
}

#[test]
fn pretrained_vectors_override_rows() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("vec.txt");
    std::fs::write(&path, "3 2\nred 0.5 -1\nblue 2 3\nunused 9 9\n").unwrap();
    let vocab = build_vocab(&manifest_of(&["red blue green"]), 1).unwrap();
    let mut store = ParamStore::<f32>::new();
    let emb = TextEmbedding::new(&mut store, vocab.len(), 2, &mut ChaCha8Rng::seed_from_u64(0));
    assert_eq!(emb.load_pretrained(&mut store, &vocab, &path).unwrap(), 2);
    let t = store.value(emb.table);
    assert_eq!((t[[vocab.id("red"), 0]], t[[vocab.id("red"), 1]]), (0.5, -1.0));
    assert_eq!((t[[vocab.id("blue"), 0]], t[[vocab.id("blue"), 1]]), (2.0, 3.0));

    std::fs::write(&path, "red 1 2 3\n").unwrap();
    assert!(matches!(
        emb.load_pretrained(&mut store, &vocab, &path),
        Err(EncoderError::DimensionMismatch { .. })
    ));
}

struct TextRig {
    store: ParamStore<f64>,
    emb: TextEmbedding,
    lstm: LstmEncoder,
}

fn text_rig(vocab: usize) -> TextRig {
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let emb = TextEmbedding::new(&mut store, vocab, 6, &mut rng);
    let lstm = LstmEncoder::new(&mut store, 6, 5, &mut rng);
    TextRig { store, emb, lstm }
}

fn encode(rig: &TextRig, seqs: &[&TokenSequence]) -> Result<Array2<f64>, EncoderError> {
    let mut g = Graph::new(&rig.store);
    let v = rig.lstm.encode_batch(&mut g, &rig.emb, seqs)?;
    Ok(g.value(v).clone())
}

#[test]
fn question_encoding_has_hidden_dim() {
    let rig = text_rig(20);
    for len in 1..8 {
        let ids: Vec<usize> = (0..len).map(|i| 4 + i % 16).collect();
        let s = TokenSequence::from_ids(&ids, 32);
        let out = encode(&rig, &[&s]).unwrap();
        assert_eq!(out.dim(), (1, 5));
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn question_encoding_errors() {
    let rig = text_rig(20);
    let all_pad = TokenSequence::from_ids(&[], 8);
    assert!(matches!(encode(&rig, &[&all_pad]), Err(EncoderError::AllPadding)));
    let oov = TokenSequence::from_ids(&[4, 20], 8);
    assert!(matches!(
        encode(&rig, &[&oov]),
        Err(EncoderError::OutOfVocabularyId { id: 20, vocab_size: 20 })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn padding_never_changes_the_encoding(
        ids in prop::collection::vec(4usize..30, 1..12),
        extra_pad in 0usize..20,
        other in prop::collection::vec(4usize..30, 1..16),
    ) {
        let rig = text_rig(30);
        let short = TokenSequence::from_ids(&ids, ids.len());
        let padded = TokenSequence::from_ids(&ids, ids.len() + extra_pad);
        let neighbour = TokenSequence::from_ids(&other, 32);
        let alone = encode(&rig, &[&short]).unwrap();
        let with_pad = encode(&rig, &[&padded]).unwrap();
        let in_batch = encode(&rig, &[&neighbour, &padded]).unwrap();
        prop_assert_eq!(&alone, &with_pad);
        prop_assert_eq!(alone.row(0), in_batch.row(1));
    }
}

struct ImageRig {
    store: ParamStore<f32>,
    enc: ImageEncoder,
    cfg: EncoderConfig,
}

fn image_rig(cfg: EncoderConfig) -> ImageRig {
    let mut store = ParamStore::new();
    let enc = ImageEncoder::new(&mut store, &cfg, &mut ChaCha8Rng::seed_from_u64(3));
    ImageRig { store, enc, cfg }
}

fn whole(rig: &ImageRig, store: &ParamStore<f32>, img: &PreparedImage) -> Array2<f32> {
    let mut g = Graph::new(store);
    let v = rig.enc.encode_images(&mut g, &[img]);
    g.value(v).clone()
}

fn regions(rig: &ImageRig, store: &ParamStore<f32>, r: &PreparedRegions) -> Array2<f32> {
    let mut g = Graph::new(store);
    let v = rig.enc.encode_region_sets(&mut g, &[r]).unwrap();
    g.value(v).clone()
}

fn planar_of(seed: u64, kind: PlotKind) -> (Planar, Vec<RegionBox>) {
    let r = render_plot(&sample_plot_spec(seed, kind), 448, 336).unwrap();
    (Planar::from_rgb(&r.image), r.boxes)
}

#[test]
fn image_encoding_is_finite_with_fixed_dim() {
    let rig = image_rig(EncoderConfig::default());
    for (seed, kind) in [(1, PlotKind::Bar), (2, PlotKind::Line), (3, PlotKind::Dotline)] {
        let (p, b) = planar_of(seed, kind);
        let img = prepare_image(&p, &b, &rig.cfg).unwrap();
        let out = whole(&rig, &rig.store, &img);
        assert_eq!(out.dim(), (1, 128));
        assert!(out.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn black_image_gives_the_bias_pathway() {
    let rig = image_rig(EncoderConfig::default());
    let black = Planar::from_rgb(&RgbImage::new(200, 150));
    let img = prepare_image(&black, &[], &rig.cfg).unwrap();
    let a = whole(&rig, &rig.store, &img);
    assert_eq!(a, whole(&rig, &rig.store, &img));

    // Zero input: first-layer weights cannot contribute, only biases do.
    let mut scrambled = rig.store.clone();
    for name in ["trunk.s0.b0.conv1.w", "trunk.s0.b0.shortcut.w"] {
        let id = scrambled.find(name).unwrap();
        scrambled.value_mut(id).mapv_inplace(|v| v * -3.0 + 0.5);
    }
    assert_eq!(a, whole(&rig, &scrambled, &img));
}

#[test]
fn different_plots_encode_differently() {
    let rig = image_rig(EncoderConfig::default());
    let (p1, b1) = planar_of(10, PlotKind::Bar);
    let (p2, b2) = planar_of(11, PlotKind::Line);
    let e1 = whole(&rig, &rig.store, &prepare_image(&p1, &b1, &rig.cfg).unwrap());
    let e2 = whole(&rig, &rig.store, &prepare_image(&p2, &b2, &rig.cfg).unwrap());
    assert_ne!(e1, e2);
}

#[test]
fn non_rgb_input_is_rejected() {
    let rgba = DynamicImage::ImageRgba8(RgbaImage::new(10, 10));
    assert!(matches!(Planar::from_dynamic(&rgba), Err(EncoderError::NonRGBInput(_))));
    assert!(Planar::from_dynamic(&DynamicImage::ImageRgb8(RgbImage::new(10, 10))).is_ok());
}

#[test]
fn region_rows_align_with_boxes() {
    let rig = image_rig(EncoderConfig::default());
    let (p, boxes) = planar_of(5, PlotKind::Bar);
    let eight: Vec<RegionBox> = boxes.iter().take(8).copied().collect();
    let r = prepare_regions(&p, &eight, 32).unwrap();
    let out = regions(&rig, &rig.store, &r);
    assert_eq!(out.dim(), (8, 128));
    assert_eq!(r.geometry.dim(), (8, 4));
    assert!(r.geometry.iter().all(|v| (0.0..=1.0).contains(v)));

    let dup = prepare_regions(&p, &[boxes[3], boxes[3]], 32).unwrap();
    let out = regions(&rig, &rig.store, &dup);
    assert_eq!(out.row(0), out.row(1));
}

#[test]
fn full_extent_region_matches_whole_image() {
    let cfg = EncoderConfig {
        image_width: 32,
        image_height: 32,
        patch_size: 32,
        ..EncoderConfig::default()
    };
    let rig = image_rig(cfg);
    let (p, _) = planar_of(8, PlotKind::Dotline);
    let full = RegionBox::full(p.width as u32, p.height as u32);
    let img = prepare_image(&p, &[full], &rig.cfg).unwrap();
    let w = whole(&rig, &rig.store, &img);
    let r = regions(&rig, &rig.store, &img.regions);
    let diff = (&w - &r).iter().fold(0.0f32, |m, v| m.max(v.abs()));
    assert!(diff < 1e-6, "max diff {diff}");
}

#[test]
fn whole_image_and_regions_share_the_trunk() {
    let rig = image_rig(EncoderConfig::default());
    let (p, b) = planar_of(9, PlotKind::Bar);
    let img = prepare_image(&p, &b, &rig.cfg).unwrap();
    let w0 = whole(&rig, &rig.store, &img);
    let r0 = regions(&rig, &rig.store, &img.regions);

    let mut store = rig.store.clone();
    let id = store.find("trunk.s1.b0.conv1.w").unwrap();
    assert_eq!(store.get(id).group, ParamGroup::Trunk);
    store.value_mut(id).mapv_inplace(|v| v * 1.5);
    assert_ne!(w0, whole(&rig, &store, &img));
    assert_ne!(r0, regions(&rig, &store, &img.regions));

    let trunk_params = rig.store.iter().filter(|(_, p)| p.group == ParamGroup::Trunk).count();
    assert_eq!(trunk_params, 4 * 2 * 4 + 4 * 2, "one trunk, shared");
}

#[test]
fn empty_boxes_need_the_grid_fallback() {
    let (p, _) = planar_of(4, PlotKind::Line);
    let mut cfg = EncoderConfig::default();
    let img = prepare_image(&p, &[], &cfg).unwrap();
    assert_eq!(img.regions.len(), 36);
    assert!(img.regions.boxes.iter().all(|b| b.label == RegionLabel::GridCell));

    cfg.grid_fallback = false;
    let img = prepare_image(&p, &[], &cfg).unwrap();
    assert!(img.regions.is_empty());
    let rig = image_rig(cfg);
    let mut g = Graph::new(&rig.store);
    assert!(matches!(
        rig.enc.encode_region_sets(&mut g, &[&img.regions]),
        Err(EncoderError::EmptyBoxList)
    ));
    assert!(matches!(prepare_regions(&p, &[], 32), Err(EncoderError::EmptyBoxList)));
}

#[test]
fn truncation_keeps_largest_boxes_in_order() {
    let mk = |x0, x1| RegionBox {
        label: RegionLabel::Bar,
        x0,
        y0: 0,
        x1,
        y1: 10,
        series_index: None,
        category_index: None,
    };
    let boxes = [mk(0, 2), mk(0, 9), mk(0, 5), mk(0, 7), mk(0, 1)];
    let kept = select_regions(&boxes, 3);
    assert_eq!(kept, vec![boxes[1], boxes[2], boxes[3]]);
    assert_eq!(select_regions(&boxes, 10).len(), 5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn region_count_respects_the_cap(seed in 0u64..500, max in 1usize..40) {
        let (p, b) = planar_of(seed, PlotKind::Bar);
        let cfg = EncoderConfig { max_regions: max, ..EncoderConfig::default() };
        let img = prepare_image(&p, &b, &cfg).unwrap();
        prop_assert_eq!(img.regions.len(), b.len().min(max));
        prop_assert_eq!(img.regions.patches.ncols(), img.regions.len() * 32 * 32);
    }
}

#[test]
fn encoder_groups_pass_the_gradient_check() {
    let cfg = tiny_encoder();
    let fx = fixture(3, &cfg);
    let model = tiny_model(FusionVariant::BaselineConcat, fx.vocab.len(), 1);
    let idx = [0, 1, 2];
    let report = grad_check(
        &model,
        &fx.train.examples(&idx),
        &fx.train.labels_of(&idx),
        &GradCheckOptions::default(),
    )
    .unwrap();
    for g in [
        ParamGroup::TextEmbedding,
        ParamGroup::Lstm,
        ParamGroup::Trunk,
        ParamGroup::ImageProjection,
    ] {
        let r = report.per_group[&g];
        assert!(r.checked >= 1);
        assert!(r.max_relative_error < 1e-3, "{g}: {}", r.max_relative_error);
    }
}
