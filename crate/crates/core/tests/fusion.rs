mod common;

use ndarray::{s, Array2};
use plotvqa::encoders::{EncoderConfig, EncoderError, PreparedImage, TokenSequence};
use plotvqa::fusion::*;
use plotvqa::plot_synth::{Answer, PlotKind};
use plotvqa::tensor::{Graph, ParamGroup, ParamStore};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::*;

fn logits_of(model: &FusionModel<f32>, batch: &[Example<'_>]) -> Array2<f32> {
    let mut g = Graph::new(&model.params);
    let v = model.logits(&mut g, batch, &mut Mode::Inference).unwrap();
    g.value(v).clone()
}

fn max_abs_diff(a: &Array2<f32>, b: &Array2<f32>) -> f32 {
    (a - b).iter().fold(0.0f32, |m, v| m.max(v.abs()))
}

#[test]
fn classifier_input_widths() {
    let cfg = |v| ModelConfig::new(v, 100);
    assert_eq!(cfg(FusionVariant::BaselineConcat).classifier_input_dim(), 256);
    assert_eq!(cfg(FusionVariant::Crossmodal).classifier_input_dim(), 128);
    assert_eq!(cfg(FusionVariant::CrossmodalJoint).classifier_input_dim(), 256);
}

#[test]
fn classify_examples() {
    assert_eq!(classify([0.0, 0.0], 0.5).unwrap(), Answer::Yes);
    assert_eq!(classify([0.0, 10.0], 0.5).unwrap(), Answer::Yes);
    assert_eq!(classify([10.0, 0.0], 0.5).unwrap(), Answer::No);
    assert!(matches!(
        classify([f64::NAN, 0.0], 0.5),
        Err(FusionError::NonFiniteLogits(_))
    ));
    assert!(matches!(
        classify([0.0, f64::INFINITY], 0.5),
        Err(FusionError::NonFiniteLogits(_))
    ));
}

proptest! {
    #[test]
    fn prediction_follows_softmax(a in -50.0f64..50.0, b in -50.0f64..50.0) {
        let p = Prediction::from_logits([a, b]).unwrap();
        let expected = 1.0 / (1.0 + (a - b).exp());
        prop_assert!((p.probability_yes - expected).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&p.probability_yes));
        prop_assert_eq!(p.label == Answer::Yes, p.probability_yes >= 0.5);
    }
}

#[test]
fn parameter_counting() {
    let mut store = ParamStore::<f32>::new();
    store.add("w", ParamGroup::Classifier, Array2::zeros((3, 2)));
    store.add("b", ParamGroup::Classifier, Array2::zeros((1, 2)));
    assert_eq!(count_parameters(&store).total, 8);

    let base = FusionModel::<f32>::new(ModelConfig::new(FusionVariant::BaselineConcat, 120)).unwrap();
    let xm = FusionModel::<f32>::new(ModelConfig::new(FusionVariant::Crossmodal, 120)).unwrap();
    assert!(xm.count_parameters().total > base.count_parameters().total);

    for variant in FusionVariant::ALL {
        let mut m = FusionModel::<f32>::new(ModelConfig::new(variant, 120)).unwrap();
        let before = m.count_parameters();
        let trunk = before.by_group[&ParamGroup::Trunk];
        assert!(trunk > 0);
        m.set_trunk_frozen(true);
        let after = m.count_parameters();
        assert_eq!(before.total - after.total, trunk, "{variant}");
        assert!(!after.by_group.contains_key(&ParamGroup::Trunk) || after.by_group[&ParamGroup::Trunk] == 0);
    }
}

#[test]
fn inference_is_deterministic() {
    let cfg = tiny_encoder();
    let img = prepared_plot(2, PlotKind::Bar, &cfg);
    let tokens = TokenSequence::from_ids(&[4, 5, 6, 7], 16);
    for variant in FusionVariant::ALL {
        let mut model = tiny_model(variant, 20, 5);
        model.set_dropout(0.3);
        let ex = [Example {
            tokens: &tokens,
            image: &img,
        }];
        assert_eq!(logits_of(&model, &ex), logits_of(&model, &ex));
        let again = tiny_model(variant, 20, 5);
        assert!(model.params.bit_eq(&again.params), "same seed, same init");
    }
}

#[test]
fn training_mode_dropout_is_seeded() {
    let cfg = tiny_encoder();
    let img = prepared_plot(2, PlotKind::Line, &cfg);
    let tokens = TokenSequence::from_ids(&[4, 5, 6], 16);
    let mut model = tiny_model(FusionVariant::BaselineConcat, 20, 5);
    model.set_dropout(0.5);
    let ex = [Example {
        tokens: &tokens,
        image: &img,
    }];
    let run = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut g = Graph::new(&model.params);
        let v = model.logits(&mut g, &ex, &mut Mode::Train(&mut rng)).unwrap();
        g.value(v).clone()
    };
    assert_eq!(run(1), run(1));
    assert_ne!(run(1), logits_of(&model, &ex));
}

fn permuted(img: &PreparedImage, order: &[usize]) -> PreparedImage {
    PreparedImage {
        whole: img.whole.clone(),
        regions: img.regions.permuted(order),
    }
}

#[test]
fn region_order_does_not_matter() {
    let cfg = tiny_encoder();
    let tokens = TokenSequence::from_ids(&[4, 9, 5, 11, 6], 16);
    for variant in [FusionVariant::Crossmodal, FusionVariant::CrossmodalJoint] {
        let model = tiny_model(variant, 20, 8);
        for (seed, kind) in [(1, PlotKind::Bar), (2, PlotKind::Line), (3, PlotKind::Dotline)] {
            let img = prepared_plot(seed, kind, &cfg);
            let n = img.regions.len();
            assert!(n >= 3);
            let reversed: Vec<usize> = (0..n).rev().collect();
            let rotated: Vec<usize> = (0..n).map(|i| (i + 2) % n).collect();
            let base = logits_of(
                &model,
                &[Example {
                    tokens: &tokens,
                    image: &img,
                }],
            );
            for order in [reversed, rotated] {
                let p = permuted(&img, &order);
                let out = logits_of(
                    &model,
                    &[Example {
                        tokens: &tokens,
                        image: &p,
                    }],
                );
                assert!(max_abs_diff(&base, &out) < 1e-5, "{variant}: {base} vs {out}");
            }
        }
    }
}

#[test]
fn word_order_matters() {
    let cfg = tiny_encoder();
    let img = prepared_plot(4, PlotKind::Bar, &cfg);
    let a = TokenSequence::from_ids(&[4, 9, 5, 11], 16);
    let b = TokenSequence::from_ids(&[4, 5, 9, 11], 16);
    for variant in FusionVariant::ALL {
        let model = tiny_model(variant, 20, 8);
        let la = logits_of(
            &model,
            &[Example {
                tokens: &a,
                image: &img,
            }],
        );
        let lb = logits_of(
            &model,
            &[Example {
                tokens: &b,
                image: &img,
            }],
        );
        assert!(max_abs_diff(&la, &lb) > 0.0, "{variant}");
    }
}

#[test]
fn joint_with_zeroed_image_weights_equals_crossmodal() {
    let cfg = tiny_encoder();
    let img = prepared_plot(6, PlotKind::Dotline, &cfg);
    let tokens = TokenSequence::from_ids(&[4, 5, 6, 7, 8], 16);
    let mut joint = tiny_model(FusionVariant::CrossmodalJoint, 20, 11);
    let mut xm = tiny_model(FusionVariant::Crossmodal, 20, 11);
    let d = joint.config.crossmodal.model_dim;

    let w1 = joint.params.find("classifier.l1.w").unwrap();
    joint.params.value_mut(w1).slice_mut(s![d.., ..]).fill(0.0);
    let ids: Vec<_> = xm.params.ids().collect();
    for id in ids {
        let name = xm.params.get(id).name.clone();
        let src = joint.params.value(joint.params.find(&name).unwrap());
        let rows = xm.params.value(id).nrows();
        let v = src.slice(s![..rows, ..]).to_owned();
        *xm.params.value_mut(id) = v;
    }

    let ex = [Example {
        tokens: &tokens,
        image: &img,
    }];
    let diff = max_abs_diff(&logits_of(&joint, &ex), &logits_of(&xm, &ex));
    assert!(diff < 1e-6, "diff {diff}");
}

#[test]
fn sequence_layout_and_limits() {
    assert_eq!(CrossModalEncoder::sequence_length(10, 8), 19);
    let cfg = tiny_encoder();
    let model = tiny_model(FusionVariant::Crossmodal, 40, 2);
    let img = (0..)
        .map(|seed| prepared_plot(seed, PlotKind::Bar, &cfg))
        .find(|i| i.regions.len() >= 8)
        .unwrap();
    let xm = model.crossmodal().unwrap();

    let tokens = TokenSequence::from_ids(&(4..14).collect::<Vec<_>>(), 32);
    let eight = img.regions.permuted(&(0..8).collect::<Vec<_>>());
    let mut g = Graph::new(&model.params);
    let regions = model.image_encoder().encode_region_sets(&mut g, &[&eight]).unwrap();
    let seq = xm
        .embed(&mut g, model.embedding(), &tokens, regions, &eight.geometry)
        .unwrap();
    assert_eq!(g.shape(seq), (19, model.config.crossmodal.model_dim));

    let long = TokenSequence::from_ids(&[4; 40], 40);
    assert!(matches!(
        xm.embed(&mut g, model.embedding(), &long, regions, &eight.geometry),
        Err(FusionError::SequenceTooLong { length: 40, max: 32 })
    ));
}

#[test]
fn errors_surface() {
    let enc = EncoderConfig {
        grid_fallback: false,
        ..tiny_encoder()
    };
    let mut cfg = tiny_model_config(FusionVariant::Crossmodal, 20, 0);
    cfg.encoder = enc.clone();
    let model = FusionModel::<f32>::new(cfg).unwrap();
    let p = plotvqa::encoders::Planar::from_rgb(&image::RgbImage::new(40, 30));
    let bare = plotvqa::encoders::prepare_image(&p, &[], &enc).unwrap();
    let tokens = TokenSequence::from_ids(&[4, 5], 8);
    let mut g = Graph::new(&model.params);
    let r = model.logits(
        &mut g,
        &[Example {
            tokens: &tokens,
            image: &bare,
        }],
        &mut Mode::Inference,
    );
    assert!(matches!(r, Err(FusionError::Encoder(EncoderError::EmptyBoxList))));
    assert!(matches!(
        model.logits(&mut g, &[], &mut Mode::Inference),
        Err(FusionError::EmptyBatch)
    ));

    let base = tiny_model(FusionVariant::BaselineConcat, 20, 0);
    let mut g = Graph::new(&base.params);
    let q = g.input(Array2::zeros((1, 3)));
    let i = g.input(Array2::zeros((1, base.config.encoder.image_dim)));
    assert!(matches!(
        base.forward_baseline(&mut g, q, i, &mut Mode::Inference),
        Err(FusionError::DimensionMismatch { .. })
    ));
    let x = g.input(Array2::zeros((1, 4)));
    assert!(matches!(
        base.crossmodal_cls(&mut g, &tokens, x, &Array2::zeros((1, 4))),
        Err(FusionError::IncompatibleVariant { .. })
    ));
}

#[test]
fn batching_matches_single_examples() {
    let cfg = tiny_encoder();
    let imgs: Vec<_> = (0..3).map(|s| prepared_plot(s, PlotKind::Bar, &cfg)).collect();
    let toks: Vec<_> = [vec![4, 5], vec![6, 7, 8, 9], vec![10]]
        .iter()
        .map(|ids| TokenSequence::from_ids(ids, 12))
        .collect();
    for variant in FusionVariant::ALL {
        let model = tiny_model(variant, 20, 3);
        let batch: Vec<Example> = vec![
            Example {
                tokens: &toks[0],
                image: &imgs[0],
            },
            Example {
                tokens: &toks[1],
                image: &imgs[1],
            },
            Example {
                tokens: &toks[2],
                image: &imgs[0],
            },
            Example {
                tokens: &toks[0],
                image: &imgs[2],
            },
        ];
        let together = logits_of(&model, &batch);
        for (i, ex) in batch.iter().enumerate() {
            let alone = logits_of(&model, std::slice::from_ref(ex));
            let d = (&together.slice(s![i..i + 1, ..]) - &alone)
                .iter()
                .fold(0.0f32, |m, v| m.max(v.abs()));
            assert!(d < 1e-5, "{variant} row {i}: {d}");
        }
    }
}

#[test]
fn untrained_models_sit_near_chance() {
    let cfg = tiny_encoder();
    let fx = fixture(21, &cfg);
    for variant in FusionVariant::ALL {
        let mut accs = Vec::new();
        for seed in 0..3 {
            let model = tiny_model(variant, fx.vocab.len(), seed);
            let (acc, _) = plotvqa::training::score_split(&model, &fx.train, 32).unwrap();
            accs.push(acc);
        }
        let mean = accs.iter().sum::<f64>() / accs.len() as f64;
        assert!((0.3..=0.7).contains(&mean), "{variant}: {accs:?}");
    }
}
