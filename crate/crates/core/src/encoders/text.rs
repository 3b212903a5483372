use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use std::fs;
use std::path::Path;

use super::vocab::{TokenSequence, Vocabulary};
use super::EncoderError;
use crate::tensor::{Graph, Init, ParamGroup, ParamId, ParamStore, Scalar, Var};

/// Trainable token embedding table `[vocab_size, dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TextEmbedding {
    pub table: ParamId,
    pub vocab_size: usize,
    pub dim: usize,
}

impl TextEmbedding {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, vocab_size: usize, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let table = store.add(
            "embedding.table",
            ParamGroup::TextEmbedding,
            Init::Normal(0.1).build(vocab_size, dim, rng),
        );
        Self { table, vocab_size, dim }
    }

    pub fn check_ids(&self, ids: &[usize]) -> Result<(), EncoderError> {
        match ids.iter().find(|&&id| id >= self.vocab_size) {
            Some(&id) => Err(EncoderError::OutOfVocabularyId {
                id,
                vocab_size: self.vocab_size,
            }),
            None => Ok(()),
        }
    }

    /// Looks up rows for `ids`.
    pub fn lookup<T: Scalar>(&self, g: &mut Graph<'_, T>, ids: &[usize]) -> Result<Var, EncoderError> {
        self.check_ids(ids)?;
        let table = g.param(self.table);
        Ok(g.gather(table, ids))
    }

    /// Overwrites rows with vectors from a word2vec-text file (optional
    /// `count dim` header line, then `token v1 … vD` per line). Returns the
    /// number of vocabulary rows replaced.
    pub fn load_pretrained<T: Scalar>(
        &self,
        store: &mut ParamStore<T>,
        vocab: &Vocabulary,
        path: &Path,
    ) -> Result<usize, EncoderError> {
        let text = fs::read_to_string(path)?;
        let table = store.value_mut(self.table);
        let mut loaded = 0;
        for (line_no, line) in text.lines().enumerate() {
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else { continue };
            let values: Vec<&str> = parts.collect();
            if line_no == 0 && values.len() == 1 && token.parse::<usize>().is_ok() {
                continue;
            }
            if values.len() != self.dim {
                return Err(EncoderError::DimensionMismatch {
                    what: format!("pretrained vector on line {}", line_no + 1),
                    expected: self.dim,
                    actual: values.len(),
                });
            }
            if !vocab.contains(token) {
                continue;
            }
            let row = vocab.id(token);
            if row >= self.vocab_size {
                continue;
            }
            for (j, v) in values.iter().enumerate() {
                let x: f64 = v.parse().map_err(|_| EncoderError::InvalidPretrained {
                    line: line_no + 1,
                    value: v.to_string(),
                })?;
                table[[row, j]] = T::of(x);
            }
            loaded += 1;
        }
        Ok(loaded)
    }
}

/// Single-layer unidirectional LSTM; gate order in the fused matrices is
/// input, forget, cell, output.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmEncoder {
    pub w_ih: ParamId,
    pub w_hh: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden: usize,
}

impl LstmEncoder {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, input_dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        let init = Init::FanIn(hidden);
        let w_ih = store.add("lstm.w_ih", ParamGroup::Lstm, init.build(input_dim, 4 * hidden, rng));
        let w_hh = store.add("lstm.w_hh", ParamGroup::Lstm, init.build(hidden, 4 * hidden, rng));
        let mut b: Array2<T> = init.build(1, 4 * hidden, rng);
        b.slice_mut(ndarray::s![.., hidden..2 * hidden]).fill(T::one());
        let bias = store.add("lstm.bias", ParamGroup::Lstm, b);
        Self {
            w_ih,
            w_hh,
            bias,
            input_dim,
            hidden,
        }
    }

    /// Encodes a batch of questions to `[batch, hidden]`: the hidden state
    /// at each sequence's last non-pad step. Finished rows carry their state
    /// forward through a 0/1 mask, so trailing padding has no effect.
    pub fn encode_batch<T: Scalar>(
        &self,
        g: &mut Graph<'_, T>,
        embedding: &TextEmbedding,
        seqs: &[&TokenSequence],
    ) -> Result<Var, EncoderError> {
        if seqs.is_empty() {
            return Err(EncoderError::EmptyBatch);
        }
        if embedding.dim != self.input_dim {
            return Err(EncoderError::DimensionMismatch {
                what: "lstm input".into(),
                expected: self.input_dim,
                actual: embedding.dim,
            });
        }
        for s in seqs {
            if s.length == 0 {
                return Err(EncoderError::AllPadding);
            }
            embedding.check_ids(s.active())?;
        }
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.length).max().unwrap_or(0);
        let h = self.hidden;

        // Time-major gather so the input projection is one matmul.
        let mut ids = Vec::with_capacity(steps * batch);
        for t in 0..steps {
            for s in seqs {
                ids.push(if t < s.length { s.ids[t] } else { s.ids[s.length - 1] });
            }
        }
        let x = embedding.lookup(g, &ids)?;
        let w_ih = g.param(self.w_ih);
        let w_hh = g.param(self.w_hh);
        let bias = g.param(self.bias);
        let xw = g.matmul(x, w_ih);
        let xw = g.add_row(xw, bias);

        let mut h_t = g.input(Array2::zeros((batch, h)));
        let mut c_t = g.input(Array2::zeros((batch, h)));
        for t in 0..steps {
            let xt = g.slice_rows(xw, t * batch, batch);
            let hw = g.matmul(h_t, w_hh);
            let z = g.add(xt, hw);
            let zi = g.slice_cols(z, 0, h);
            let zf = g.slice_cols(z, h, h);
            let zg = g.slice_cols(z, 2 * h, h);
            let zo = g.slice_cols(z, 3 * h, h);
            let i = g.sigmoid(zi);
            let f = g.sigmoid(zf);
            let cand = g.tanh(zg);
            let o = g.sigmoid(zo);
            let fc = g.mul(f, c_t);
            let ig = g.mul(i, cand);
            let c_new = g.add(fc, ig);
            let tc = g.tanh(c_new);
            let h_new = g.mul(o, tc);

            if seqs.iter().all(|s| t < s.length) {
                h_t = h_new;
                c_t = c_new;
            } else {
                let live = Array2::from_shape_fn(
                    (batch, h),
                    |(r, _)| {
                        if t < seqs[r].length {
                            T::one()
                        } else {
                            T::zero()
                        }
                    },
                );
                let done = live.mapv(|v| T::one() - v);
                let hn = g.mask(h_new, live.clone());
                let ho = g.mask(h_t, done.clone());
                h_t = g.add(hn, ho);
                let cn = g.mask(c_new, live);
                let co = g.mask(c_t, done);
                c_t = g.add(cn, co);
            }
        }
        Ok(h_t)
    }
}
