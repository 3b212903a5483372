mod common;

use ndarray::array;
use plotvqa::fusion::FusionVariant;
use plotvqa::tensor::ParamGroup;
use plotvqa::training::*;
use std::collections::BTreeMap;

use common::*;

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 16,
        learning_rate: 3e-3,
        dropout_rate: 0.2,
        seed: 4,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_examples() {
    let ln2 = std::f64::consts::LN_2;
    assert!((loss(&array![[0.0, 0.0]], &[1]).unwrap() - ln2).abs() < 1e-12);
    assert!((loss(&array![[0.0, 0.0]], &[0]).unwrap() - ln2).abs() < 1e-12);
    let confident = loss(&array![[0.0, 1000.0]], &[1]).unwrap();
    assert!(confident.is_finite() && confident.abs() < 1e-12);
    let wrong = loss(&array![[0.0, 1000.0]], &[0]).unwrap();
    assert!((wrong - 1000.0).abs() < 1e-9);
    let mean = loss(&array![[0.0, 0.0], [0.0, 1000.0]], &[1, 1]).unwrap();
    assert!((mean - ln2 / 2.0).abs() < 1e-12);
    assert!(matches!(
        loss(&array![[0.0, 0.0]], &[1, 0]),
        Err(TrainError::ShapeMismatch { logits: 1, labels: 2 })
    ));
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let zero_lr = TrainConfig {
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    assert!(zero_lr.validate().is_ok());
    for bad in [
        TrainConfig {
            learning_rate: -1e-3,
            ..TrainConfig::default()
        },
        TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        },
        TrainConfig {
            dropout_rate: 1.0,
            ..TrainConfig::default()
        },
    ] {
        assert!(matches!(bad.validate(), Err(TrainError::InvalidConfig(_))));
    }
}

#[test]
fn same_seed_same_run() {
    let fx = fixture(1, &tiny_encoder());
    let run = || {
        let model = tiny_model(FusionVariant::BaselineConcat, fx.vocab.len(), 2);
        train(model, &fx.train, &fx.val, &quick_config(2)).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.model.params.bit_eq(&b.model.params));
    for (x, y) in a.history.records.iter().zip(&b.history.records) {
        assert_eq!(x.train_loss.to_bits(), y.train_loss.to_bits());
        assert_eq!(x.val_accuracy, y.val_accuracy);
    }
}

#[test]
fn zero_learning_rate_leaves_parameters_untouched() {
    let fx = fixture(2, &tiny_encoder());
    for variant in FusionVariant::ALL {
        let model = tiny_model(variant, fx.vocab.len(), 3);
        let before = model.params.clone();
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..quick_config(1)
        };
        let out = train(model, &fx.train, &fx.val, &cfg).unwrap();
        assert!(out.model.params.bit_eq(&before), "{variant}");
    }
}

#[test]
fn ties_keep_the_earlier_epoch() {
    let fx = fixture(2, &tiny_encoder());
    let model = tiny_model(FusionVariant::BaselineConcat, fx.vocab.len(), 3);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        ..quick_config(3)
    };
    let out = train(model, &fx.train, &fx.val, &cfg).unwrap();
    assert_eq!(out.history.records.len(), 3);
    assert_eq!(out.best.epoch, 1);
}

#[test]
fn loss_goes_down() {
    let fx = fixture(3, &tiny_encoder());
    let model = tiny_model(FusionVariant::BaselineConcat, fx.vocab.len(), 1);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        dropout_rate: 0.0,
        ..quick_config(12)
    };
    let out = train(model, &fx.train, &fx.val, &cfg).unwrap();
    let r = &out.history.records;
    assert!(r.last().unwrap().train_loss < r[0].train_loss, "{r:?}");
}

#[test]
fn frozen_trunk_stays_fixed() {
    let fx = fixture(5, &tiny_encoder());
    let model = tiny_model(FusionVariant::CrossmodalJoint, fx.vocab.len(), 1);
    let before = model.params.clone();
    let cfg = TrainConfig {
        freeze_trunk: true,
        ..quick_config(1)
    };
    let out = train(model, &fx.train, &fx.val, &cfg).unwrap();
    let mut moved = BTreeMap::new();
    for (id, p) in out.model.params.iter() {
        moved.insert(
            p.group,
            moved.get(&p.group).copied().unwrap_or(false) || p.value != *before.value(id),
        );
    }
    assert!(!moved[&ParamGroup::Trunk]);
    assert!(moved[&ParamGroup::Classifier] && moved[&ParamGroup::CrossModal]);
}

#[test]
fn diverged_loss_is_reported() {
    let fx = fixture(6, &tiny_encoder());
    let mut model = tiny_model(FusionVariant::BaselineConcat, fx.vocab.len(), 1);
    let id = model.params.find("classifier.l2.b").unwrap();
    model.params.value_mut(id).fill(f32::NAN);
    assert!(matches!(
        train(model, &fx.train, &fx.val, &quick_config(1)),
        Err(TrainError::DivergedLoss { epoch: 1, batch: 0, .. })
    ));
}

#[test]
fn region_variants_need_regions() {
    let enc = plotvqa::encoders::EncoderConfig {
        region_source: plotvqa::encoders::RegionSource::Grid,
        grid_fallback: false,
        ..tiny_encoder()
    };
    let fx = fixture(6, &enc);
    assert!(fx.train.has_regions(), "grid source always yields regions");

    let dir = tempfile::tempdir().unwrap();
    fx.dataset.write(dir.path()).unwrap();
    for id in fx.dataset.split(plotvqa::plot_synth::SplitName::Train).plot_ids() {
        std::fs::remove_file(dir.path().join(plotvqa::plot_synth::boxes_rel_path(id))).unwrap();
    }
    let gt = plotvqa::encoders::EncoderConfig {
        grid_fallback: false,
        ..tiny_encoder()
    };
    let manifest =
        plotvqa::plot_synth::DatasetManifest::load(dir.path(), plotvqa::plot_synth::SplitName::Train).unwrap();
    let train_split = PreparedSplit::load(&manifest, dir.path(), &fx.vocab, &gt).unwrap();
    assert!(!train_split.has_regions());
    let mut cfg = tiny_model_config(FusionVariant::Crossmodal, fx.vocab.len(), 0);
    cfg.encoder = gt;
    let model = plotvqa::fusion::FusionModel::new(cfg).unwrap();
    assert!(matches!(
        train(model, &train_split, &fx.val, &quick_config(1)),
        Err(TrainError::IncompatibleVariant { .. })
    ));
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let fx = fixture(7, &tiny_encoder());
    let dir = tempfile::tempdir().unwrap();
    for variant in FusionVariant::ALL {
        let mut model = tiny_model(variant, fx.vocab.len(), 9);
        model.set_trunk_frozen(true);
        let path = dir.path().join(variant.as_str());
        let info = CheckpointInfo {
            epoch: 3,
            metrics: BTreeMap::from([("val_accuracy".to_string(), 0.5)]),
            vocab: None,
        };
        let meta = save_checkpoint(&path, &model, &info).unwrap();
        assert_eq!(meta.frozen_groups, vec![ParamGroup::Trunk]);
        let (loaded, meta2) = load_checkpoint(&path).unwrap();
        assert_eq!(meta, meta2);
        assert!(loaded.params.bit_eq(&model.params));
        assert_eq!(loaded.count_parameters(), model.count_parameters());
        let a = predict_split(&model, &fx.val, 16).unwrap();
        let b = predict_split(&loaded, &fx.val, 16).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.logits[0].to_bits(), y.logits[0].to_bits());
            assert_eq!(x.logits[1].to_bits(), y.logits[1].to_bits());
        }
    }
}

#[test]
fn damaged_or_mismatched_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let base = tiny_model(FusionVariant::BaselineConcat, 30, 1);
    let path = dir.path().join("ckpt");
    save_checkpoint(&path, &base, &CheckpointInfo::default()).unwrap();

    let mut xm = tiny_model(FusionVariant::Crossmodal, 30, 1);
    assert!(matches!(
        load_checkpoint_into(&mut xm, &path),
        Err(TrainError::VariantMismatch {
            expected: FusionVariant::Crossmodal,
            found: FusionVariant::BaselineConcat
        })
    ));

    let bin = path.join("tensors.bin");
    let bytes = std::fs::read(&bin).unwrap();
    std::fs::write(&bin, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(TrainError::CorruptCheckpoint { .. })
    ));

    let mut flipped = bytes.clone();
    flipped[10] ^= 0xff;
    std::fs::write(&bin, &flipped).unwrap();
    assert!(matches!(
        load_checkpoint(&path),
        Err(TrainError::CorruptCheckpoint { .. })
    ));
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let fx = fixture(8, &tiny_encoder());
    let variant = FusionVariant::CrossmodalJoint;
    let straight = train(
        tiny_model(variant, fx.vocab.len(), 5),
        &fx.train,
        &fx.val,
        &quick_config(2),
    )
    .unwrap();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("last");
    let mut first = Trainer::new(tiny_model(variant, fx.vocab.len(), 5), quick_config(1)).unwrap();
    first.run(&fx.train, &fx.val, |_, _| Ok(())).unwrap();
    let info = CheckpointInfo {
        epoch: 1,
        ..Default::default()
    };
    save_training_checkpoint(&path, &first.model, &info, &first.optimizer).unwrap();
    let history = first.history.clone();
    let best = first.best.clone();
    drop(first);

    let (model, _) = load_checkpoint(&path).unwrap();
    let opt = load_optimizer(&path, &model.params).unwrap();
    let mut second = Trainer::resume(model, opt, quick_config(2), history, best).unwrap();
    second.run(&fx.train, &fx.val, |_, _| Ok(())).unwrap();
    let resumed = second.finish().unwrap();

    assert!(resumed.model.params.bit_eq(&straight.model.params));
    assert_eq!(resumed.history.records.len(), 2);
    assert_eq!(
        resumed.history.records[1].train_loss.to_bits(),
        straight.history.records[1].train_loss.to_bits()
    );
}

#[test]
fn history_csv_round_trip() {
    let history = TrainHistory {
        records: vec![
            EpochRecord {
                epoch: 1,
                train_loss: 0.693,
                train_accuracy: 0.5,
                val_accuracy: 0.5,
                val_f1: 0.0,
                seconds: 1.25,
            },
            EpochRecord {
                epoch: 2,
                train_loss: 0.41,
                train_accuracy: 0.8125,
                val_accuracy: 0.75,
                val_f1: 0.7,
                seconds: 1.5,
            },
        ],
    };
    let csv = history.to_csv();
    assert!(csv.starts_with("epoch,train_loss,train_acc,val_acc,val_f1,seconds\n"));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("history.csv");
    history.write_csv(&p).unwrap();
    assert_eq!(TrainHistory::read_csv(&p).unwrap(), history);
}

#[test]
fn gradients_match_finite_differences() {
    let fx = fixture(9, &tiny_encoder());
    let idx = [0, 5, 9];
    let batch = fx.train.examples(&idx);
    let labels = fx.train.labels_of(&idx);
    for variant in FusionVariant::ALL {
        let model = tiny_model(variant, fx.vocab.len(), 2);
        for objective in [GradObjective::Loss, GradObjective::YesLogit] {
            let opts = GradCheckOptions {
                objective,
                ..GradCheckOptions::default()
            };
            let r = grad_check(&model, &batch, &labels, &opts).unwrap();
            assert!(r.max_relative_error < 1e-3, "{variant} {objective:?}: {r:?}");
            // Every group present in the variant is sampled.
            assert_eq!(r.per_group.len(), 5, "{variant}: {:?}", r.per_group.keys());
            assert!(r.per_group.values().all(|g| g.checked >= 1));
        }

        let corrupt = GradCheckOptions {
            corrupt: true,
            ..GradCheckOptions::default()
        };
        let r = grad_check(&model, &batch, &labels, &corrupt).unwrap();
        assert!(r.max_relative_error > 1e-1, "{variant}: corrupted control passed");
    }
}

#[test]
fn relative_error_formula() {
    assert_eq!(relative_error(1.0, 1.0), 0.0);
    assert!((relative_error(1.0, 0.5) - 0.5).abs() < 1e-12);
    assert_eq!(relative_error(0.0, 0.0), 0.0);
}
