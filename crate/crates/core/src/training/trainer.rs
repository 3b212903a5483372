use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

use super::optim::Optimizer;
use super::{EpochRecord, TrainConfig, TrainError, TrainHistory};
use crate::evaluation::compute_metrics;
use crate::fusion::{FusionModel, Mode, Prediction};
use crate::plot_synth::{mix_seed, Answer};
use crate::tensor::{Graph, ParamStore};

use super::data::PreparedSplit;

const SHUFFLE_STREAM: u64 = 0x5348_5546;
const DROPOUT_STREAM: u64 = 0x4452_4f50;

/// Parameters of the best epoch seen so far.
#[derive(Debug, Clone)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_accuracy: f64,
    pub val_f1: f64,
    pub params: ParamStore<f32>,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub model: FusionModel<f32>,
    pub best: BestSnapshot,
    pub history: TrainHistory,
}

impl TrainOutcome {
    /// The model with the best epoch's parameters.
    pub fn best_model(&self) -> FusionModel<f32> {
        let mut m = self.model.clone();
        m.params = self.best.params.clone();
        m
    }
}

/// Inference-mode predictions over a whole split, in item order.
///
/// Items are batched grouped by plot so each image is encoded once per
/// batch rather than once per question.
pub fn predict_split(
    model: &FusionModel<f32>,
    split: &PreparedSplit,
    batch_size: usize,
) -> Result<Vec<Prediction>, TrainError> {
    let mut idx: Vec<usize> = (0..split.len()).collect();
    idx.sort_by_key(|&i| split.image_index[i]);
    let mut out: Vec<Option<Prediction>> = vec![None; split.len()];
    for chunk in idx.chunks(batch_size.max(1)) {
        for (&i, p) in chunk.iter().zip(model.predict(&split.examples(chunk))?) {
            out[i] = Some(p);
        }
    }
    Ok(out.into_iter().map(|p| p.expect("every item predicted")).collect())
}

/// Accuracy and F1 of `model` on `split`.
pub fn score_split(
    model: &FusionModel<f32>,
    split: &PreparedSplit,
    batch_size: usize,
) -> Result<(f64, f64), TrainError> {
    let preds = predict_split(model, split, batch_size)?;
    let pairs: Vec<(Answer, Answer)> = preds
        .iter()
        .zip(&split.items)
        .map(|(p, it)| (p.label, it.answer))
        .collect();
    let m = compute_metrics(&pairs)?;
    Ok((m.accuracy, m.f1))
}

/// Owns the model during training. Each epoch's shuffle and dropout
/// streams derive from `(seed, epoch)`, so a resumed run continues
/// exactly as an uninterrupted one would.
#[derive(Debug)]
pub struct Trainer {
    pub model: FusionModel<f32>,
    pub optimizer: Optimizer,
    pub config: TrainConfig,
    pub history: TrainHistory,
    pub best: Option<BestSnapshot>,
}

impl Trainer {
    pub fn new(mut model: FusionModel<f32>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        model.set_dropout(config.dropout_rate);
        model.set_trunk_frozen(config.freeze_trunk);
        let optimizer = Optimizer::new(config.optimizer, config.learning_rate, &model.params);
        Ok(Self {
            model,
            optimizer,
            config,
            history: TrainHistory::default(),
            best: None,
        })
    }

    /// Continues from saved state.
    pub fn resume(
        mut model: FusionModel<f32>,
        mut optimizer: Optimizer,
        config: TrainConfig,
        history: TrainHistory,
        best: Option<BestSnapshot>,
    ) -> Result<Self, TrainError> {
        config.validate()?;
        model.set_dropout(config.dropout_rate);
        model.set_trunk_frozen(config.freeze_trunk);
        optimizer.learning_rate = config.learning_rate as f32;
        Ok(Self {
            model,
            optimizer,
            config,
            history,
            best,
        })
    }

    pub fn epochs_completed(&self) -> usize {
        self.history.records.len()
    }

    pub fn check_compatible(&self, splits: &[&PreparedSplit]) -> Result<(), TrainError> {
        let variant = self.model.variant();
        if variant.uses_regions() && splits.iter().any(|s| !s.has_regions()) {
            return Err(TrainError::IncompatibleVariant {
                variant,
                reason: "region boxes are missing for some images (enable grid_fallback or use baseline_concat)".into(),
            });
        }
        Ok(())
    }

    /// One pass over `train`; returns mean loss and running accuracy.
    pub fn train_epoch(&mut self, train: &PreparedSplit) -> Result<(f64, f64), TrainError> {
        if train.is_empty() {
            return Err(TrainError::Data("training split is empty".into()));
        }
        let epoch = self.epochs_completed() as u64;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(mix_seed(
            self.config.seed ^ SHUFFLE_STREAM,
            epoch,
        )));
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(mix_seed(self.config.seed ^ DROPOUT_STREAM, epoch));

        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let examples = train.examples(chunk);
            let labels = train.labels_of(chunk);
            let mut grads = {
                let mut g = Graph::new(&self.model.params);
                let logits = self
                    .model
                    .logits(&mut g, &examples, &mut Mode::Train(&mut dropout_rng))?;
                let loss = g.cross_entropy(logits, &labels);
                let lv = g.value(loss)[[0, 0]] as f64;
                if !lv.is_finite() {
                    return Err(TrainError::DivergedLoss {
                        epoch: epoch as usize + 1,
                        batch: b,
                        loss: lv,
                    });
                }
                loss_sum += lv * chunk.len() as f64;
                correct += g
                    .value(logits)
                    .rows()
                    .into_iter()
                    .zip(&labels)
                    .filter(|(r, &y)| usize::from(r[1] >= r[0]) == y)
                    .count();
                g.backward(loss)
            };
            if let Some(max) = self.config.max_grad_norm {
                Optimizer::clip(&mut grads, max);
            }
            self.optimizer.apply(&mut self.model.params, &grads);
        }
        Ok((loss_sum / train.len() as f64, correct as f64 / train.len() as f64))
    }

    /// Trains one epoch, validates, records history and tracks the best
    /// epoch (strictly higher validation accuracy wins; ties keep the
    /// earlier epoch).
    pub fn run_epoch(&mut self, train: &PreparedSplit, val: &PreparedSplit) -> Result<EpochRecord, TrainError> {
        let start = Instant::now();
        let (train_loss, train_accuracy) = self.train_epoch(train)?;
        let (val_accuracy, val_f1) = score_split(&self.model, val, self.config.batch_size.max(32))?;
        let record = EpochRecord {
            epoch: self.epochs_completed() + 1,
            train_loss,
            train_accuracy,
            val_accuracy,
            val_f1,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.history.records.push(record.clone());
        if self.best.as_ref().is_none_or(|b| val_accuracy > b.val_accuracy) {
            self.best = Some(BestSnapshot {
                epoch: record.epoch,
                val_accuracy,
                val_f1,
                params: self.model.params.clone(),
            });
        }
        Ok(record)
    }

    /// Whether the epoch budget, patience or training-accuracy target ends
    /// the run.
    pub fn should_stop(&self) -> bool {
        let done = self.epochs_completed();
        if done >= self.config.epochs {
            return true;
        }
        if let (Some(target), Some(last)) = (self.config.target_train_accuracy, self.history.records.last()) {
            if last.train_accuracy >= target {
                return true;
            }
        }
        if let (Some(patience), Some(best)) = (self.config.early_stop_patience, &self.best) {
            if done - best.epoch >= patience {
                return true;
            }
        }
        false
    }

    /// Runs epochs until [`should_stop`](Self::should_stop); `on_epoch` is
    /// called after each one (e.g. to write checkpoints).
    pub fn run(
        &mut self,
        train: &PreparedSplit,
        val: &PreparedSplit,
        mut on_epoch: impl FnMut(&Trainer, &EpochRecord) -> Result<(), TrainError>,
    ) -> Result<(), TrainError> {
        self.check_compatible(&[train, val])?;
        if val.is_empty() {
            return Err(TrainError::Data("validation split is empty".into()));
        }
        while !self.should_stop() {
            let record = self.run_epoch(train, val)?;
            log::info!(
                "epoch {:>3}  loss {:.4}  train_acc {:.4}  val_acc {:.4}  val_f1 {:.4}  ({:.1}s)",
                record.epoch,
                record.train_loss,
                record.train_accuracy,
                record.val_accuracy,
                record.val_f1,
                record.seconds
            );
            on_epoch(self, &record)?;
        }
        Ok(())
    }

    pub fn finish(self) -> Result<TrainOutcome, TrainError> {
        let best = self.best.ok_or_else(|| TrainError::Data("no epoch completed".into()))?;
        Ok(TrainOutcome {
            model: self.model,
            best,
            history: self.history,
        })
    }
}

/// Trains `model` and returns the final model, best snapshot and history.
pub fn train(
    model: FusionModel<f32>,
    train_split: &PreparedSplit,
    val_split: &PreparedSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    let mut trainer = Trainer::new(model, config.clone())?;
    trainer.run(train_split, val_split, |_, _| Ok(()))?;
    trainer.finish()
}
