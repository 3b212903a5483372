use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::crossmodal::CrossModalEncoder;
use super::{FusionError, FusionVariant, ModelConfig, ShallowClassifierConfig};
use crate::encoders::{ImageEncoder, LstmEncoder, PreparedImage, TextEmbedding, TokenSequence};
use crate::plot_synth::Answer;
use crate::tensor::{Graph, Init, ParamGroup, ParamId, ParamStore, Scalar, Var};

/// Whether dropout is active.
pub enum Mode<'r> {
    Inference,
    Train(&'r mut ChaCha8Rng),
}

/// Two-layer perceptron: linear → GELU → dropout → linear → 2 logits.
#[derive(Debug, Clone, PartialEq)]
pub struct ShallowClassifier {
    pub input_dim: usize,
    pub config: ShallowClassifierConfig,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

impl ShallowClassifier {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        input_dim: usize,
        config: &ShallowClassifierConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let h = config.hidden_dim;
        let w1 = store.add(
            "classifier.l1.w",
            ParamGroup::Classifier,
            Init::FanIn(input_dim).build(input_dim, h, rng),
        );
        let b1 = store.add("classifier.l1.b", ParamGroup::Classifier, Array2::zeros((1, h)));
        let w2 = store.add(
            "classifier.l2.w",
            ParamGroup::Classifier,
            Init::FanIn(h).build(h, 2, rng),
        );
        let b2 = store.add("classifier.l2.b", ParamGroup::Classifier, Array2::zeros((1, 2)));
        Self {
            input_dim,
            config: config.clone(),
            w1,
            b1,
            w2,
            b2,
        }
    }

    /// `x` is `[batch, input_dim]`; returns logits `[batch, 2]` (no, yes).
    pub fn forward<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var, mode: &mut Mode<'_>) -> Result<Var, FusionError> {
        let (rows, cols) = g.shape(x);
        if cols != self.input_dim {
            return Err(FusionError::DimensionMismatch {
                what: "classifier input".into(),
                expected: self.input_dim,
                actual: cols,
            });
        }
        let (w1, b1) = (g.param(self.w1), g.param(self.b1));
        let hid = g.linear(x, w1, b1);
        let mut hid = g.gelu(hid);
        let p = self.config.dropout_rate;
        if let Mode::Train(rng) = mode {
            if p > 0.0 {
                let keep = T::of(1.0 / (1.0 - p));
                let mask = Array2::from_shape_simple_fn((rows, self.config.hidden_dim), || {
                    if rng.random::<f64>() < p {
                        T::zero()
                    } else {
                        keep
                    }
                });
                hid = g.mask(hid, mask);
            }
        }
        let (w2, b2) = (g.param(self.w2), g.param(self.b2));
        Ok(g.linear(hid, w2, b2))
    }
}

/// Model output for one example.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// `(no, yes)`.
    pub logits: [f64; 2],
    pub probability_yes: f64,
    pub label: Answer,
}

fn probability_yes(logits: [f64; 2]) -> f64 {
    1.0 / (1.0 + (logits[0] - logits[1]).exp())
}

/// Yes iff `softmax(logits)[yes] >= threshold`; a probability exactly at
/// the threshold resolves to yes.
pub fn classify(logits: [f64; 2], threshold: f64) -> Result<Answer, FusionError> {
    if !logits.iter().all(|v| v.is_finite()) {
        return Err(FusionError::NonFiniteLogits(logits));
    }
    Ok(if probability_yes(logits) >= threshold {
        Answer::Yes
    } else {
        Answer::No
    })
}

impl Prediction {
    pub fn from_logits(logits: [f64; 2]) -> Result<Self, FusionError> {
        let label = classify(logits, 0.5)?;
        Ok(Self {
            logits,
            probability_yes: probability_yes(logits),
            label,
        })
    }
}

/// One model input: a tokenized question and its prepared plot image.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a> {
    pub tokens: &'a TokenSequence,
    pub image: &'a PreparedImage,
}

/// Trainable-parameter counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParameterCount {
    pub total: usize,
    pub by_group: BTreeMap<ParamGroup, usize>,
}

/// Counts trainable scalars in a store, in total and per group.
pub fn count_parameters<T: Scalar>(store: &ParamStore<T>) -> ParameterCount {
    let by_group = store.count_by_group();
    ParameterCount {
        total: by_group.values().sum(),
        by_group,
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Architecture {
    embedding: TextEmbedding,
    lstm: Option<LstmEncoder>,
    image: ImageEncoder,
    crossmodal: Option<CrossModalEncoder>,
    classifier: ShallowClassifier,
}

/// A fusion model: configuration, parameters and module wiring.
#[derive(Debug, Clone)]
pub struct FusionModel<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    arch: Architecture,
}

impl<T: Scalar> FusionModel<T> {
    /// Builds and initializes a model from `config.init_seed`.
    pub fn new(config: ModelConfig) -> Result<Self, FusionError> {
        config.validate().map_err(FusionError::InvalidConfig)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut params = ParamStore::new();
        let enc = &config.encoder;
        let embedding = TextEmbedding::new(&mut params, config.vocab_size, enc.embed_dim, &mut rng);
        let lstm = (config.variant == FusionVariant::BaselineConcat)
            .then(|| LstmEncoder::new(&mut params, enc.embed_dim, enc.hidden_dim, &mut rng));
        let image = ImageEncoder::new(&mut params, enc, &mut rng);
        let crossmodal = config
            .variant
            .uses_regions()
            .then(|| CrossModalEncoder::new(&mut params, &config.crossmodal, enc.embed_dim, enc.image_dim, &mut rng));
        let classifier =
            ShallowClassifier::new(&mut params, config.classifier_input_dim(), &config.classifier, &mut rng);
        Ok(Self {
            config,
            params,
            arch: Architecture {
                embedding,
                lstm,
                image,
                crossmodal,
                classifier,
            },
        })
    }

    pub fn variant(&self) -> FusionVariant {
        self.config.variant
    }

    pub fn embedding(&self) -> &TextEmbedding {
        &self.arch.embedding
    }

    pub fn lstm(&self) -> Option<&LstmEncoder> {
        self.arch.lstm.as_ref()
    }

    pub fn image_encoder(&self) -> &ImageEncoder {
        &self.arch.image
    }

    pub fn crossmodal(&self) -> Option<&CrossModalEncoder> {
        self.arch.crossmodal.as_ref()
    }

    pub fn classifier(&self) -> &ShallowClassifier {
        &self.arch.classifier
    }

    /// Sets the classifier dropout rate (used by training configs).
    pub fn set_dropout(&mut self, rate: f64) {
        self.config.classifier.dropout_rate = rate;
        self.arch.classifier.config.dropout_rate = rate;
    }

    pub fn set_trunk_frozen(&mut self, frozen: bool) {
        self.params.set_group_trainable(ParamGroup::Trunk, !frozen);
    }

    pub fn count_parameters(&self) -> ParameterCount {
        count_parameters(&self.params)
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            params: self.params.cast(),
            arch: self.arch.clone(),
        }
    }

    /// Baseline head: classifier over `concat(q, img)`.
    pub fn forward_baseline(
        &self,
        g: &mut Graph<'_, T>,
        q: Var,
        img: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var, FusionError> {
        let enc = &self.config.encoder;
        check_width(g, q, enc.hidden_dim, "question encoding")?;
        check_width(g, img, enc.image_dim, "image encoding")?;
        let x = g.concat_cols(&[q, img]);
        self.arch.classifier.forward(g, x, mode)
    }

    /// Crossmodal CLS vector `[1, model_dim]` for one example.
    pub fn crossmodal_cls(
        &self,
        g: &mut Graph<'_, T>,
        tokens: &TokenSequence,
        regions: Var,
        geometry: &Array2<f32>,
    ) -> Result<Var, FusionError> {
        let xm = self.arch.crossmodal.as_ref().ok_or(FusionError::IncompatibleVariant {
            variant: self.config.variant,
            operation: "crossmodal encoding",
        })?;
        xm.forward(g, &self.arch.embedding, tokens, regions, geometry)
    }

    /// Crossmodal head: classifier over the CLS vectors `[batch, model_dim]`.
    pub fn forward_crossmodal(&self, g: &mut Graph<'_, T>, cls: Var, mode: &mut Mode<'_>) -> Result<Var, FusionError> {
        check_width(g, cls, self.config.crossmodal.model_dim, "CLS vector")?;
        self.arch.classifier.forward(g, cls, mode)
    }

    /// Joint head: classifier over `concat(cls, img)`.
    pub fn forward_joint(
        &self,
        g: &mut Graph<'_, T>,
        cls: Var,
        img: Var,
        mode: &mut Mode<'_>,
    ) -> Result<Var, FusionError> {
        check_width(g, cls, self.config.crossmodal.model_dim, "CLS vector")?;
        check_width(g, img, self.config.encoder.image_dim, "image encoding")?;
        let x = g.concat_cols(&[cls, img]);
        self.arch.classifier.forward(g, x, mode)
    }

    /// Logits `[batch, 2]` for a batch. Images shared between examples
    /// (same `PreparedImage` reference) are encoded once.
    pub fn logits(&self, g: &mut Graph<'_, T>, batch: &[Example<'_>], mode: &mut Mode<'_>) -> Result<Var, FusionError> {
        if batch.is_empty() {
            return Err(FusionError::EmptyBatch);
        }
        let mut unique: Vec<&PreparedImage> = Vec::new();
        let slot: Vec<usize> = batch
            .iter()
            .map(|ex| match unique.iter().position(|u| std::ptr::eq(*u, ex.image)) {
                Some(i) => i,
                None => {
                    unique.push(ex.image);
                    unique.len() - 1
                }
            })
            .collect();

        let whole = self.config.variant.uses_whole_image().then(|| {
            let enc = self.arch.image.encode_images(g, &unique);
            if unique.len() == batch.len() && slot.iter().enumerate().all(|(i, s)| i == *s) {
                enc
            } else {
                g.gather(enc, &slot)
            }
        });

        match self.config.variant {
            FusionVariant::BaselineConcat => {
                let lstm = self.arch.lstm.as_ref().expect("baseline has an LSTM");
                let seqs: Vec<&TokenSequence> = batch.iter().map(|e| e.tokens).collect();
                let q = lstm.encode_batch(g, &self.arch.embedding, &seqs)?;
                self.forward_baseline(g, q, whole.expect("baseline uses the whole image"), mode)
            }
            FusionVariant::Crossmodal | FusionVariant::CrossmodalJoint => {
                let sets: Vec<_> = unique.iter().map(|u| &u.regions).collect();
                let all = self.arch.image.encode_region_sets(g, &sets)?;
                let mut offsets = Vec::with_capacity(sets.len());
                let mut at = 0;
                for s in &sets {
                    offsets.push(at);
                    at += s.len();
                }
                let mut cls_rows = Vec::with_capacity(batch.len());
                for (ex, &u) in batch.iter().zip(&slot) {
                    let regions = if sets.len() == 1 {
                        all
                    } else {
                        g.slice_rows(all, offsets[u], sets[u].len())
                    };
                    cls_rows.push(self.crossmodal_cls(g, ex.tokens, regions, &sets[u].geometry)?);
                }
                let cls = if cls_rows.len() == 1 {
                    cls_rows[0]
                } else {
                    g.concat_rows(&cls_rows)
                };
                match whole {
                    Some(img) => self.forward_joint(g, cls, img, mode),
                    None => self.forward_crossmodal(g, cls, mode),
                }
            }
        }
    }

    /// Inference-mode predictions for a batch.
    pub fn predict(&self, batch: &[Example<'_>]) -> Result<Vec<Prediction>, FusionError> {
        let mut g = Graph::new(&self.params);
        let logits = self.logits(&mut g, batch, &mut Mode::Inference)?;
        g.value(logits)
            .rows()
            .into_iter()
            .map(|r| Prediction::from_logits([r[0].as_f64(), r[1].as_f64()]))
            .collect()
    }
}

fn check_width<T: Scalar>(g: &Graph<'_, T>, v: Var, expected: usize, what: &str) -> Result<(), FusionError> {
    let actual = g.shape(v).1;
    if actual == expected {
        Ok(())
    } else {
        Err(FusionError::DimensionMismatch {
            what: what.into(),
            expected,
            actual,
        })
    }
}
