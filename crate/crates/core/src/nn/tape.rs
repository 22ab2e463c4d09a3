//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Parameters enter as
//! leaves through [`Tape::param`], and [`Tape::backward`] returns their
//! gradients in store order.

use std::collections::HashMap;

use ndarray::{concatenate, s, Array2, Axis};

use super::params::{ParamId, ParamStore};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    /// Broadcasts a `1 × n` row over every row of the left operand.
    AddRow(Var, Var),
    /// Adds a constant matrix that receives no gradient.
    AddConst(Var),
    Scale(Var, f64),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Mat,
        inv_std: Vec<f64>,
    },
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    GroupMax(Var, Vec<Vec<usize>>),
    GroupMean(Var, Vec<Vec<usize>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Mat,
    },
    BceWithLogits {
        logits: Var,
        targets: Mat,
    },
    Dice {
        logits: Var,
        targets: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of one backward pass, aligned with the parameter store.
pub struct Gradients {
    pub params: Vec<Option<Mat>>,
}

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044_715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + 0.044_715 * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044_715 * x * x)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax; rows may contain `-inf` entries as long as one is finite.
pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf for a parameter; repeated calls return the same variable.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param(id));
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulNt(a, b))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).t().to_owned();
        self.push(v, Op::Transpose(a))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn add_const(&mut self, a: Var, c: &Mat) -> Var {
        let v = self.value(a) + c;
        self.push(v, Op::AddConst(a))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let n = xv.ncols() as f64;
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / n;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + LN_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) * is);
            inv_std.push(is);
        }
        let out = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let v = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(v, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn gather_rows(&mut self, a: Var, idx: &[usize]) -> Var {
        let v = self.value(a).select(Axis(0), idx);
        self.push(v, Op::GatherRows(a, idx.to_vec()))
    }

    /// Row `g` of the result is the column-wise max over rows `groups[g]`.
    pub fn group_max(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let av = self.value(a);
        let mut out = Mat::from_elem((groups.len(), av.ncols()), f64::NEG_INFINITY);
        for (g, rows) in groups.iter().enumerate() {
            for &r in rows {
                for c in 0..av.ncols() {
                    out[[g, c]] = out[[g, c]].max(av[[r, c]]);
                }
            }
        }
        self.push(out, Op::GroupMax(a, groups.to_vec()))
    }

    pub fn group_mean(&mut self, a: Var, groups: &[Vec<usize>]) -> Var {
        let av = self.value(a);
        let mut out = Mat::zeros((groups.len(), av.ncols()));
        for (g, rows) in groups.iter().enumerate() {
            let inv = 1.0 / rows.len() as f64;
            for &r in rows {
                let mut dst = out.row_mut(g);
                dst.scaled_add(inv, &av.row(r));
            }
        }
        self.push(out, Op::GroupMean(a, groups.to_vec()))
    }

    /// Mean cross-entropy of each row's logits against its target class.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits));
        let loss = if targets.is_empty() {
            0.0
        } else {
            -targets
                .iter()
                .enumerate()
                .map(|(r, &t)| probs[[r, t]].max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / targets.len() as f64
        };
        self.push(
            Mat::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Mean binary cross-entropy over every entry.
    pub fn bce_with_logits(&mut self, logits: Var, targets: Mat) -> Var {
        let x = self.value(logits);
        let n = x.len().max(1) as f64;
        let loss = x
            .iter()
            .zip(targets.iter())
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Mat::from_elem((1, 1), loss), Op::BceWithLogits { logits, targets })
    }

    /// Mean over rows of `1 - 2 Σ p·g / (Σ p + Σ g)` with `p = sigmoid(logits)`.
    pub fn dice(&mut self, logits: Var, targets: Mat) -> Var {
        let x = self.value(logits);
        let rows = x.nrows().max(1) as f64;
        let mut total = 0.0;
        for (xr, gr) in x.rows().into_iter().zip(targets.rows()) {
            let (mut inter, mut sum) = (0.0, 0.0);
            for (&xv, &g) in xr.iter().zip(gr.iter()) {
                let p = sigmoid(xv);
                inter += p * g;
                sum += p + g;
            }
            if sum > 0.0 {
                total += 1.0 - 2.0 * inter / sum;
            }
        }
        self.push(Mat::from_elem((1, 1), total / rows), Op::Dice { logits, targets })
    }

    /// Gradient of the scalar `loss` with respect to every parameter leaf.
    pub fn backward(&self, loss: Var, param_count: usize) -> Gradients {
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::ones(self.nodes[loss.0].value.raw_dim()));
        let mut out: Vec<Option<Mat>> = (0..param_count).map(|_| None).collect();

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out[id.index()] = Some(g),
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulNt(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Transpose(a) => acc(&mut grads, *a, g.t().to_owned()),
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::AddConst(a) => acc(&mut grads, *a, g),
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Gelu(a) => {
                    let ga = &g * &self.value(*a).mapv(gelu_grad);
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yr, |v, &yv| *v -= yv * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gamma_v = self.value(*gamma);
                    let ggamma = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gbeta = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let dxhat = &g * gamma_v;
                    let n = xhat.ncols() as f64;
                    let mut gx = Mat::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        let k = inv_std[r] / n;
                        for c in 0..xhat.ncols() {
                            gx[[r, c]] = k * (n * dr[c] - sum_d - xr[c] * sum_dx);
                        }
                    }
                    acc(&mut grads, *gamma, ggamma);
                    acc(&mut grads, *beta, gbeta);
                    acc(&mut grads, *x, gx);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut col = 0;
                    for p in parts {
                        let w = self.value(*p).ncols();
                        acc(&mut grads, *p, g.slice(s![.., col..col + w]).to_owned());
                        col += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut row = 0;
                    for p in parts {
                        let h = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![row..row + h, ..]).to_owned());
                        row += h;
                    }
                }
                Op::GatherRows(a, idx) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (r, &src) in idx.iter().enumerate() {
                        let mut dst = ga.row_mut(src);
                        dst += &g.row(r);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GroupMax(a, groups) => {
                    let av = self.value(*a);
                    let mut ga = Mat::zeros(av.raw_dim());
                    for (gi, rows) in groups.iter().enumerate() {
                        for c in 0..av.ncols() {
                            // First row attaining the max receives the gradient.
                            let target = node.value[[gi, c]];
                            if let Some(&r) = rows.iter().find(|&&r| av[[r, c]] == target) {
                                ga[[r, c]] += g[[gi, c]];
                            }
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::GroupMean(a, groups) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    for (gi, rows) in groups.iter().enumerate() {
                        let inv = 1.0 / rows.len() as f64;
                        for &r in rows {
                            let mut dst = ga.row_mut(r);
                            dst.scaled_add(inv, &g.row(gi));
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / targets.len().max(1) as f64;
                    let mut ga = probs.clone();
                    for (r, &t) in targets.iter().enumerate() {
                        ga[[r, t]] -= 1.0;
                    }
                    if targets.is_empty() {
                        ga.fill(0.0);
                    }
                    acc(&mut grads, *logits, ga * scale);
                }
                Op::BceWithLogits { logits, targets } => {
                    let x = self.value(*logits);
                    let scale = g[[0, 0]] / x.len().max(1) as f64;
                    let mut ga = x.mapv(sigmoid);
                    ga -= targets;
                    acc(&mut grads, *logits, ga * scale);
                }
                Op::Dice { logits, targets } => {
                    let x = self.value(*logits);
                    let scale = g[[0, 0]] / x.nrows().max(1) as f64;
                    let mut ga = Mat::zeros(x.raw_dim());
                    for r in 0..x.nrows() {
                        let p: Vec<f64> = x.row(r).iter().map(|&v| sigmoid(v)).collect();
                        let gt = targets.row(r);
                        let inter: f64 = p.iter().zip(gt.iter()).map(|(a, b)| a * b).sum();
                        let sum: f64 = p.iter().sum::<f64>() + gt.sum();
                        if sum <= 0.0 {
                            continue;
                        }
                        for c in 0..x.ncols() {
                            let dp = -2.0 * (gt[c] * sum - inter) / (sum * sum);
                            ga[[r, c]] = scale * dp * p[c] * (1.0 - p[c]);
                        }
                    }
                    acc(&mut grads, *logits, ga);
                }
            }
        }
        Gradients { params: out }
    }
}
