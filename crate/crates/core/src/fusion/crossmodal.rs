use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::{CrossModalityConfig, FusionError};
use crate::encoders::{TextEmbedding, TokenSequence, CLS_ID};
use crate::tensor::{Graph, Init, ParamGroup, ParamId, ParamStore, Scalar, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Linear {
    w: ParamId,
    b: Option<ParamId>,
}

impl Linear {
    fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        (fan_in, fan_out): (usize, usize),
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let init = Init::FanIn(fan_in);
        let w = store.add(
            format!("{name}.w"),
            ParamGroup::CrossModal,
            init.build(fan_in, fan_out, rng),
        );
        let b = bias.then(|| store.add(format!("{name}.b"), ParamGroup::CrossModal, Array2::zeros((1, fan_out))));
        Self { w, b }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let w = g.param(self.w);
        match self.b {
            Some(b) => {
                let b = g.param(b);
                g.linear(x, w, b)
            }
            None => g.matmul(x, w),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerNorm {
    gamma: ParamId,
    beta: ParamId,
}

impl LayerNorm {
    fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), ParamGroup::CrossModal, Array2::ones((1, dim))),
            beta: store.add(format!("{name}.beta"), ParamGroup::CrossModal, Array2::zeros((1, dim))),
        }
    }

    fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Var {
        let gamma = g.param(self.gamma);
        let beta = g.param(self.beta);
        g.layer_norm(x, gamma, beta, LN_EPS)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct EncoderLayer {
    qkv: Linear,
    out: Linear,
    ln1: LayerNorm,
    ff1: Linear,
    ff2: Linear,
    ln2: LayerNorm,
}

/// VisualBERT-style single-stream encoder over `[CLS] + text + regions`.
///
/// Text tokens get a learned positional embedding and a text segment
/// embedding; region tokens get a projection of their feature vector, a
/// projection of their normalized box and a visual segment embedding, but
/// no position, so the output is invariant to region order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CrossModalEncoder {
    pub config: CrossModalityConfig,
    text_proj: Linear,
    positions: ParamId,
    text_segment: ParamId,
    visual_segment: ParamId,
    region_proj: Linear,
    geometry_proj: Linear,
    embed_ln: LayerNorm,
    layers: Vec<EncoderLayer>,
}

impl CrossModalEncoder {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        config: &CrossModalityConfig,
        embed_dim: usize,
        region_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let d = config.model_dim;
        let emb = Init::Normal(0.02);
        let text_proj = Linear::new(store, "crossmodal.text_proj", (embed_dim, d), true, rng);
        let positions = store.add(
            "crossmodal.positions",
            ParamGroup::CrossModal,
            emb.build(config.max_text_positions + 1, d, rng),
        );
        let text_segment = store.add("crossmodal.segment.text", ParamGroup::CrossModal, emb.build(1, d, rng));
        let visual_segment = store.add(
            "crossmodal.segment.visual",
            ParamGroup::CrossModal,
            emb.build(1, d, rng),
        );
        let region_proj = Linear::new(store, "crossmodal.region_proj", (region_dim, d), true, rng);
        let geometry_proj = Linear::new(store, "crossmodal.geometry_proj", (4, d), false, rng);
        let embed_ln = LayerNorm::new(store, "crossmodal.embed_ln", d);
        let layers = (0..config.num_layers)
            .map(|l| {
                let p = format!("crossmodal.layer{l}");
                EncoderLayer {
                    qkv: Linear::new(store, &format!("{p}.qkv"), (d, 3 * d), true, rng),
                    out: Linear::new(store, &format!("{p}.attn_out"), (d, d), true, rng),
                    ln1: LayerNorm::new(store, &format!("{p}.ln1"), d),
                    ff1: Linear::new(store, &format!("{p}.ff1"), (d, config.feedforward_dim), true, rng),
                    ff2: Linear::new(store, &format!("{p}.ff2"), (config.feedforward_dim, d), true, rng),
                    ln2: LayerNorm::new(store, &format!("{p}.ln2"), d),
                }
            })
            .collect();
        Self {
            config: config.clone(),
            text_proj,
            positions,
            text_segment,
            visual_segment,
            region_proj,
            geometry_proj,
            embed_ln,
            layers,
        }
    }

    /// Length of the joint sequence for `text_len` tokens and `regions` boxes.
    pub fn sequence_length(text_len: usize, regions: usize) -> usize {
        1 + text_len + regions
    }

    /// Builds the embedded input sequence `[1 + n_text + n_regions, d]`.
    pub fn embed<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        embedding: &TextEmbedding,
        tokens: &TokenSequence,
        regions: Var,
        geometry: &Array2<f32>,
    ) -> Result<Var, FusionError> {
        let n_text = tokens.length;
        if n_text == 0 {
            return Err(crate::encoders::EncoderError::AllPadding.into());
        }
        if n_text > self.config.max_text_positions {
            return Err(FusionError::SequenceTooLong {
                length: n_text,
                max: self.config.max_text_positions,
            });
        }
        let (n_regions, region_dim) = g.shape(regions);
        if n_regions == 0 {
            return Err(crate::encoders::EncoderError::EmptyBoxList.into());
        }
        if geometry.dim() != (n_regions, 4) {
            return Err(FusionError::DimensionMismatch {
                what: "region geometry rows".into(),
                expected: n_regions,
                actual: geometry.nrows(),
            });
        }
        let w_rows = g.store().value(self.region_proj.w).nrows();
        if region_dim != w_rows {
            return Err(FusionError::DimensionMismatch {
                what: "region feature".into(),
                expected: w_rows,
                actual: region_dim,
            });
        }

        let mut ids = Vec::with_capacity(n_text + 1);
        ids.push(CLS_ID);
        ids.extend_from_slice(tokens.active());
        let emb = embedding.lookup(g, &ids)?;
        let text = self.text_proj.apply(g, emb);
        let pos_table = g.param(self.positions);
        let pos = g.slice_rows(pos_table, 0, n_text + 1);
        let text = g.add(text, pos);
        let seg_t = g.param(self.text_segment);
        let text = g.add_row(text, seg_t);

        let vis = self.region_proj.apply(g, regions);
        let geo_in = g.input(geometry.mapv(T::of_f32));
        let geo = self.geometry_proj.apply(g, geo_in);
        let vis = g.add(vis, geo);
        let seg_v = g.param(self.visual_segment);
        let vis = g.add_row(vis, seg_v);

        let seq = g.concat_rows(&[text, vis]);
        Ok(self.embed_ln.apply(g, seq))
    }

    /// Runs the layer stack on an embedded sequence and returns the CLS row.
    pub fn encode<T: Scalar>(&self, g: &mut Graph<'_, T>, seq: Var) -> Var {
        let d = self.config.model_dim;
        let heads = self.config.num_heads;
        let dh = d / heads;
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let mut x = seq;
        for layer in &self.layers {
            let qkv = layer.qkv.apply(g, x);
            let mut outs = Vec::with_capacity(heads);
            for h in 0..heads {
                let q = g.slice_cols(qkv, h * dh, dh);
                let k = g.slice_cols(qkv, d + h * dh, dh);
                let v = g.slice_cols(qkv, 2 * d + h * dh, dh);
                let scores = g.matmul_nt(q, k);
                let scores = g.scale(scores, scale);
                let attn = g.softmax(scores);
                outs.push(g.matmul(attn, v));
            }
            let ctx = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
            let attn_out = layer.out.apply(g, ctx);
            let res = g.add(x, attn_out);
            let x1 = layer.ln1.apply(g, res);
            let ff = layer.ff1.apply(g, x1);
            let ff = g.gelu(ff);
            let ff = layer.ff2.apply(g, ff);
            let res = g.add(x1, ff);
            x = layer.ln2.apply(g, res);
        }
        g.slice_rows(x, 0, 1)
    }

    /// Embeds and encodes one example; returns the CLS vector `[1, d]`.
    pub fn forward<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        embedding: &TextEmbedding,
        tokens: &TokenSequence,
        regions: Var,
        geometry: &Array2<f32>,
    ) -> Result<Var, FusionError> {
        let seq = self.embed(g, embedding, tokens, regions, geometry)?;
        Ok(self.encode(g, seq))
    }
}
