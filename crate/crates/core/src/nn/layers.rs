//! Parameterized building blocks recorded onto a [`Tape`].

use rand::Rng;

use super::params::{xavier, Mat, ParamId, ParamStore};
use super::tape::{Tape, Var};

#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: store.add(format!("{name}.weight"), xavier(rng, fan_in, fan_out)),
            bias: store.add(format!("{name}.bias"), Mat::zeros((1, fan_out))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let w = tape.param(store, self.weight);
        let b = tape.param(store, self.bias);
        let y = tape.matmul(x, w);
        tape.add_row(y, b)
    }

    pub fn zero(&self, store: &mut ParamStore) {
        store.value_mut(self.weight).fill(0.0);
        store.value_mut(self.bias).fill(0.0);
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Mat::ones((1, dim))),
            beta: store.add(format!("{name}.beta"), Mat::zeros((1, dim))),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head scaled dot-product attention with separate query and key/value inputs.
#[derive(Debug, Clone, Copy)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
    pub dim: usize,
}

impl Attention {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, heads: usize) -> Self {
        Self {
            query: Linear::new(store, rng, &format!("{name}.q"), dim, dim),
            key: Linear::new(store, rng, &format!("{name}.k"), dim, dim),
            value: Linear::new(store, rng, &format!("{name}.v"), dim, dim),
            output: Linear::new(store, rng, &format!("{name}.out"), dim, dim),
            heads,
            dim,
        }
    }

    /// `mask`, when given, is added to the `rows(q) × rows(kv)` scores of every head.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, q_in: Var, kv_in: Var, mask: Option<&Mat>) -> Var {
        let q = self.query.forward(tape, store, q_in);
        let k = self.key.forward(tape, store, kv_in);
        let v = self.value.forward(tape, store, kv_in);
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice_cols(q, h * head_dim, head_dim);
            let kh = tape.slice_cols(k, h * head_dim, head_dim);
            let vh = tape.slice_cols(v, h * head_dim, head_dim);
            let scores = tape.matmul_nt(qh, kh);
            let mut scores = tape.scale(scores, scale);
            if let Some(m) = mask {
                scores = tape.add_const(scores, m);
            }
            let weights = tape.softmax_rows(scores);
            outs.push(tape.matmul(weights, vh));
        }
        let joined = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        self.output.forward(tape, store, joined)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FeedForward {
    pub expand: Linear,
    pub contract: Linear,
}

impl FeedForward {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, name: &str, dim: usize, hidden: usize) -> Self {
        Self {
            expand: Linear::new(store, rng, &format!("{name}.fc1"), dim, hidden),
            contract: Linear::new(store, rng, &format!("{name}.fc2"), hidden, dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Var {
        let h = self.expand.forward(tape, store, x);
        let h = tape.gelu(h);
        self.contract.forward(tape, store, h)
    }
}
