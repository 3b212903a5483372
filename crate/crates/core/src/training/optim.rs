use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::tensor::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    SgdMomentum,
    Adam,
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;
const MOMENTUM: f32 = 0.9;

/// Adam or SGD with momentum. State is kept per parameter (first moment /
/// velocity in `m`, second moment in `v`).
#[derive(Debug, Clone)]
pub struct Optimizer {
    pub kind: OptimizerKind,
    pub learning_rate: f32,
    pub step: u64,
    pub m: Vec<Array2<f32>>,
    pub v: Vec<Array2<f32>>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, learning_rate: f64, params: &ParamStore<f32>) -> Self {
        let mut opt = Self {
            kind,
            learning_rate: learning_rate as f32,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        };
        for (_, p) in params.iter() {
            opt.m.push(Array2::zeros(p.value.dim()));
            opt.v.push(if kind == OptimizerKind::Adam {
                Array2::zeros(p.value.dim())
            } else {
                Array2::zeros((0, 0))
            });
        }
        opt
    }

    /// Scales gradients so their global L2 norm is at most `max_norm`;
    /// returns the norm before clipping.
    pub fn clip(grads: &mut Gradients<f32>, max_norm: f64) -> f64 {
        let norm = grads
            .iter()
            .map(|(_, g)| g.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        if norm > max_norm && norm.is_finite() {
            let k = (max_norm / norm) as f32;
            let ids: Vec<_> = grads.iter().map(|(id, _)| id).collect();
            for id in ids {
                if let Some(g) = grads.get_mut(id) {
                    g.mapv_inplace(|x| x * k);
                }
            }
        }
        norm
    }

    pub fn apply(&mut self, params: &mut ParamStore<f32>, grads: &Gradients<f32>) {
        self.step += 1;
        let lr = self.learning_rate;
        let t = self.step as i32;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for (id, g) in grads.iter() {
            if !params.get(id).trainable {
                continue;
            }
            let p = params.value_mut(id);
            let m = &mut self.m[id.0];
            match self.kind {
                OptimizerKind::Adam => {
                    let v = &mut self.v[id.0];
                    Zip::from(p).and(m).and(v).and(g).for_each(|p, m, v, &g| {
                        *m = BETA1 * *m + (1.0 - BETA1) * g;
                        *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p -= lr * mh / (vh.sqrt() + ADAM_EPS);
                    });
                }
                OptimizerKind::SgdMomentum => {
                    Zip::from(p).and(m).and(g).for_each(|p, m, &g| {
                        *m = MOMENTUM * *m + g;
                        *p -= lr * *m;
                    });
                }
            }
        }
    }
}
