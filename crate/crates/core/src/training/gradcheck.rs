use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use super::TrainError;
use crate::fusion::{Example, FusionModel, Mode};
use crate::tensor::{Gradients, Graph, ParamGroup, ParamId};

/// Scalar whose gradient is checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradObjective {
    /// Mean cross-entropy against the labels.
    Loss,
    /// Sum over the batch of the "yes" logit.
    YesLogit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    pub sample_fraction: f64,
    pub seed: u64,
    /// Upper bound on checked scalars per parameter group.
    pub max_per_group: Option<usize>,
    pub objective: GradObjective,
    /// Negative control: perturbs the first sampled analytic partial.
    pub corrupt: bool,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            sample_fraction: 0.01,
            seed: 0,
            max_per_group: None,
            objective: GradObjective::Loss,
            corrupt: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub trainable: usize,
    pub checked: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    pub per_group: BTreeMap<ParamGroup, GroupCheck>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

fn objective(
    model: &FusionModel<f64>,
    batch: &[Example<'_>],
    labels: &[usize],
    kind: GradObjective,
    want_grads: bool,
) -> Result<(f64, Option<Gradients<f64>>), TrainError> {
    let mut g = Graph::new(&model.params);
    let logits = model.logits(&mut g, batch, &mut Mode::Inference)?;
    let (value, grads) = match kind {
        GradObjective::Loss => {
            let loss = g.cross_entropy(logits, labels);
            (g.value(loss)[[0, 0]], want_grads.then(|| g.backward(loss)))
        }
        GradObjective::YesLogit => {
            let v = g.value(logits).column(1).sum();
            let rows = g.shape(logits).0;
            let seed = ndarray::Array2::from_shape_fn((rows, 2), |(_, c)| if c == 1 { 1.0 } else { 0.0 });
            (v, want_grads.then(|| g.backward_from(logits, seed)))
        }
    };
    Ok((value, grads))
}

/// Compares analytic gradients with central differences (in double
/// precision, inference mode) on a seeded sample of trainable scalars
/// from every parameter group; at least one scalar per non-empty group.
pub fn grad_check(
    model: &FusionModel<f32>,
    batch: &[Example<'_>],
    labels: &[usize],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, TrainError> {
    if labels.len() != batch.len() {
        return Err(TrainError::ShapeMismatch {
            logits: batch.len(),
            labels: labels.len(),
        });
    }
    let mut m = model.cast::<f64>();
    let (_, grads) = objective(&m, batch, labels, opts.objective, true)?;
    let grads = grads.expect("requested");
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut per_group = BTreeMap::new();
    let mut worst = 0.0f64;
    let mut checked = 0;
    let mut corrupt_pending = opts.corrupt;

    for group in ParamGroup::ALL {
        let members: Vec<(ParamId, usize)> = m
            .params
            .iter()
            .filter(|(_, p)| p.group == group && p.trainable)
            .map(|(id, p)| (id, p.value.len()))
            .collect();
        let total: usize = members.iter().map(|(_, n)| n).sum();
        if total == 0 {
            continue;
        }
        let mut k = ((total as f64 * opts.sample_fraction).ceil() as usize).clamp(1, total);
        if let Some(cap) = opts.max_per_group {
            k = k.min(cap.max(1));
        }
        let mut picks = sample(&mut rng, total, k).into_vec();
        picks.sort_unstable();

        let mut group_worst = 0.0f64;
        for flat in picks {
            let mut rem = flat;
            let (id, off) = members
                .iter()
                .find_map(|&(id, n)| {
                    if rem < n {
                        Some((id, rem))
                    } else {
                        rem -= n;
                        None
                    }
                })
                .expect("index within group");
            let orig = m.params.value(id).as_slice().expect("standard layout")[off];
            let set = |m: &mut FusionModel<f64>, v: f64| {
                m.params.value_mut(id).as_slice_mut().expect("standard layout")[off] = v;
            };
            set(&mut m, orig + opts.epsilon);
            let (plus, _) = objective(&m, batch, labels, opts.objective, false)?;
            set(&mut m, orig - opts.epsilon);
            let (minus, _) = objective(&m, batch, labels, opts.objective, false)?;
            set(&mut m, orig);
            let numeric = (plus - minus) / (2.0 * opts.epsilon);
            let mut analytic = grads
                .get(id)
                .map_or(0.0, |g| g.as_slice().expect("standard layout")[off]);
            if corrupt_pending {
                analytic += 1.0 + analytic.abs();
                corrupt_pending = false;
            }
            group_worst = group_worst.max(relative_error(analytic, numeric));
            checked += 1;
        }
        worst = worst.max(group_worst);
        per_group.insert(
            group,
            GroupCheck {
                trainable: total,
                checked: k,
                max_relative_error: group_worst,
            },
        );
    }
    Ok(GradCheckReport {
        max_relative_error: worst,
        checked,
        per_group,
    })
}
