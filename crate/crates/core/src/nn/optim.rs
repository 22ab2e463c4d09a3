use serde::{Deserialize, Serialize};

use super::params::{Mat, ParamStore};
use super::tape::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum OptimizerConfig {
    /// Fixed-step gradient descent.
    Sgd { lr: f64 },
    /// Adam with decoupled weight decay.
    AdamW { lr: f64, weight_decay: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::AdamW {
            lr: 3e-3,
            weight_decay: 0.0,
        }
    }
}

pub struct Optimizer {
    cfg: OptimizerConfig,
    first: Vec<Mat>,
    second: Vec<Mat>,
    step: i32,
    /// Clip the global gradient norm to this value when set.
    pub clip_norm: Option<f64>,
}

impl Optimizer {
    pub fn new(cfg: OptimizerConfig, store: &ParamStore) -> Self {
        let zeros = || store.iter().map(|(_, v)| Mat::zeros(v.raw_dim())).collect();
        Self {
            cfg,
            first: zeros(),
            second: zeros(),
            step: 0,
            clip_norm: Some(1.0),
        }
    }

    /// Applies one update with the learning rate scaled by `lr_scale`.
    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients, lr_scale: f64) {
        self.step += 1;
        let norm = grads
            .params
            .iter()
            .flatten()
            .map(|g| g.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            .sqrt();
        let clip = match self.clip_norm {
            Some(max) if norm > max => max / norm,
            _ => 1.0,
        };
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let Some(g) = &grads.params[id.index()] else { continue };
            let param = store.value_mut(id);
            match self.cfg {
                OptimizerConfig::Sgd { lr } => param.scaled_add(-lr * lr_scale * clip, g),
                OptimizerConfig::AdamW { lr, weight_decay } => {
                    let (b1, b2, eps) = (0.9, 0.999, 1e-8);
                    let m = &mut self.first[id.index()];
                    let v = &mut self.second[id.index()];
                    m.zip_mut_with(g, |m, &g| *m = b1 * *m + (1.0 - b1) * g * clip);
                    v.zip_mut_with(g, |v, &g| *v = b2 * *v + (1.0 - b2) * (g * clip) * (g * clip));
                    let c1 = 1.0 - b1.powi(self.step);
                    let c2 = 1.0 - b2.powi(self.step);
                    let lr = lr * lr_scale;
                    ndarray::Zip::from(param).and(&*m).and(&*v).for_each(|p, &m, &v| {
                        *p -= lr * ((m / c1) / ((v / c2).sqrt() + eps) + weight_decay * *p);
                    });
                }
            }
        }
    }
}
