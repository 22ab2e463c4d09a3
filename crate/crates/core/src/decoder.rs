//! Query decoder: query selection, six-layer transformer decoding, the
//! instance and semantic branches, and the composite training loss.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ClassId;
use crate::matching::hungarian;
use crate::nn::tape::{sigmoid, softmax_rows};
use crate::nn::{Attention, FeedForward, LayerNorm, Linear, Mat, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoderConfig {
    pub layers: usize,
    pub heads: usize,
    pub alpha_select_train: f64,
    pub alpha_select_infer: f64,
    pub mask_threshold: f64,
    pub seed: u64,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            layers: 6,
            heads: 4,
            alpha_select_train: 0.5,
            alpha_select_infer: 1.0,
            mask_threshold: 0.5,
            seed: 0,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        for (name, a) in [("alpha_select_train", self.alpha_select_train), ("alpha_select_infer", self.alpha_select_infer)] {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1], got {a}")));
            }
        }
        if self.layers == 0 {
            return Err(Error::Config("decoder needs at least one layer".into()));
        }
        if self.heads == 0 || !dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("dim {dim} not divisible by {} heads", self.heads)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
    pub sem: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            cls: 2.5,
            bce: 5.0,
            dice: 5.0,
            sem: 5.0,
        }
    }
}

/// Indices of the primitives that seed the queries: `max(1, round(alpha * n))`
/// of them, drawn without replacement and returned ascending. `alpha = 1`
/// selects everything in order.
pub fn query_select(n: usize, alpha: f64, rng: &mut impl Rng) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let m = ((alpha * n as f64).round() as usize).clamp(1, n);
    if m == n {
        return (0..n).collect();
    }
    let mut idx = rand::seq::index::sample(rng, n, m).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy)]
struct DecoderLayer {
    norm_self: LayerNorm,
    self_attn: Attention,
    norm_cross: LayerNorm,
    cross_attn: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct QueryDecoder {
    memory_norm: LayerNorm,
    layers: Vec<DecoderLayer>,
}

impl QueryDecoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dim: usize, cfg: &DecoderConfig) -> Self {
        let layers = (0..cfg.layers)
            .map(|i| DecoderLayer {
                norm_self: LayerNorm::new(store, &format!("decoder.layer{i}.norm_self"), dim),
                self_attn: Attention::new(store, rng, &format!("decoder.layer{i}.self_attn"), dim, cfg.heads),
                norm_cross: LayerNorm::new(store, &format!("decoder.layer{i}.norm_cross"), dim),
                cross_attn: Attention::new(store, rng, &format!("decoder.layer{i}.cross_attn"), dim, cfg.heads),
                norm_ffn: LayerNorm::new(store, &format!("decoder.layer{i}.norm_ffn"), dim),
                ffn: FeedForward::new(store, rng, &format!("decoder.layer{i}.ffn"), dim, 2 * dim),
            })
            .collect();
        Self {
            memory_norm: LayerNorm::new(store, "decoder.memory_norm", dim),
            layers,
        }
    }

    /// Zeroes every residual branch's output projection.
    pub fn zero_outputs(&self, store: &mut ParamStore) {
        for l in &self.layers {
            l.self_attn.output.zero(store);
            l.cross_attn.output.zero(store);
            l.ffn.contract.zero(store);
        }
    }

    /// Refines `queries` (`M × D`) against `memory` (`N × D`). `cross_mask`, if
    /// given, is an additive `M × N` mask on the cross-attention scores.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: Var, memory: Var, cross_mask: Option<&Mat>) -> Var {
        let memory = self.memory_norm.forward(tape, store, memory);
        let mut q = queries;
        for l in &self.layers {
            let h = l.norm_self.forward(tape, store, q);
            let a = l.self_attn.forward(tape, store, h, h, None);
            q = tape.add(q, a);
            let h = l.norm_cross.forward(tape, store, q);
            let a = l.cross_attn.forward(tape, store, h, memory, cross_mask);
            q = tape.add(q, a);
            let h = l.norm_ffn.forward(tape, store, q);
            let f = l.ffn.forward(tape, store, h);
            q = tape.add(q, f);
        }
        q
    }
}

/// Instance branch (class logits plus mask embedding) and semantic branch.
#[derive(Debug, Clone, Copy)]
pub struct Heads {
    pub class: Linear,
    pub mask_embed: Linear,
    pub semantic: Linear,
}

impl Heads {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dim: usize, class_count: usize) -> Self {
        let heads = Self {
            class: Linear::new(store, rng, "head.class", dim, class_count + 1),
            mask_embed: Linear::new(store, rng, "head.mask_embed", dim, dim),
            semantic: Linear::new(store, rng, "head.semantic", dim, class_count + 1),
        };
        *store.value_mut(heads.mask_embed.weight) /= (dim as f64).sqrt();
        heads
    }

    /// `(class logits M×(K+1), mask logits M×N, semantic logits M×(K+1))`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, queries: Var, prims: Var) -> (Var, Var, Var) {
        let class = self.class.forward(tape, store, queries);
        let embed = self.mask_embed.forward(tape, store, queries);
        let masks = tape.matmul_nt(embed, prims);
        let semantic = self.semantic.forward(tape, store, queries);
        (class, masks, semantic)
    }
}

/// Mask logits as the inner product of every query with every primitive feature.
pub fn mask_logits(queries: &Mat, prims: &Mat) -> Mat {
    queries.dot(&prims.t())
}

#[derive(Debug, Clone, PartialEq)]
pub struct InstanceProposal {
    pub label: ClassId,
    pub score: f64,
    pub mask: Vec<bool>,
    /// Per-primitive mask logits, when produced by the model.
    pub logits: Option<Vec<f64>>,
}

impl InstanceProposal {
    pub fn members(&self) -> impl Iterator<Item = usize> + '_ {
        self.mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i)
    }

    pub fn size(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

/// Per-primitive semantic label and confidence. Primitives the semantic
/// branch did not reach carry the background label with score 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPrediction {
    pub labels: Vec<ClassId>,
    pub scores: Vec<f64>,
}

fn argmax_row(probs: &Mat, r: usize) -> (usize, f64) {
    probs
        .row(r)
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &p)| if p > best.1 { (i, p) } else { best })
}

/// Turns raw instance-branch outputs into proposals, dropping background ones.
pub fn instance_proposals(class_logits: &Mat, mask_logits: &Mat, threshold: f64) -> Vec<InstanceProposal> {
    let background = class_logits.ncols();
    let probs = softmax_rows(class_logits);
    (0..class_logits.nrows())
        .filter_map(|q| {
            let (idx, score) = argmax_row(&probs, q);
            let label = idx as ClassId + 1;
            if label as usize == background {
                return None;
            }
            let logits: Vec<f64> = mask_logits.row(q).to_vec();
            let mask = logits.iter().map(|&l| sigmoid(l) > threshold).collect();
            Some(InstanceProposal {
                label,
                score,
                mask,
                logits: Some(logits),
            })
        })
        .collect()
}

/// Routes each query's semantic prediction to the primitive that seeded it.
pub fn semantic_prediction(sem_logits: &Mat, selected: &[usize], n: usize) -> Result<SemanticPrediction> {
    if sem_logits.nrows() != selected.len() {
        return Err(Error::LengthMismatch {
            left: sem_logits.nrows(),
            right: selected.len(),
        });
    }
    let background = sem_logits.ncols() as ClassId;
    let probs = softmax_rows(sem_logits);
    let mut out = SemanticPrediction {
        labels: vec![background; n],
        scores: vec![0.0; n],
    };
    for (q, &p) in selected.iter().enumerate() {
        if p >= n {
            return Err(Error::Shape {
                op: "semantic_prediction",
                detail: format!("selected index {p} >= {n}"),
            });
        }
        let (idx, score) = argmax_row(&probs, q);
        out.labels[p] = idx as ClassId + 1;
        out.scores[p] = score;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GtInstance {
    pub label: ClassId,
    pub members: Vec<usize>,
}

/// Training targets for one drawing, indexed by primitive position.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    /// Per-primitive class; `K + 1` for unlabeled primitives.
    pub labels: Vec<ClassId>,
    pub instances: Vec<GtInstance>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub cls: f64,
    pub bce: f64,
    pub dice: f64,
    pub sem: f64,
}

fn mask_target(inst: &GtInstance, n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n];
    for &m in &inst.members {
        t[m] = 1.0;
    }
    t
}

/// Matching cost between every proposal (row) and ground-truth instance (column).
pub fn matching_cost(class_logits: &Mat, mask_logits: &Mat, gt: &GroundTruth, w: &LossWeights) -> Mat {
    let probs = softmax_rows(class_logits);
    let n = mask_logits.ncols();
    let targets: Vec<Vec<f64>> = gt.instances.iter().map(|i| mask_target(i, n)).collect();
    Mat::from_shape_fn((class_logits.nrows(), gt.instances.len()), |(q, g)| {
        let cls = -probs[[q, gt.instances[g].label as usize - 1]].max(f64::MIN_POSITIVE).ln();
        let (mut bce, mut inter, mut sum) = (0.0, 0.0, 0.0);
        for (&x, &y) in mask_logits.row(q).iter().zip(&targets[g]) {
            bce += x.max(0.0) - x * y + (-x.abs()).exp().ln_1p();
            let p = sigmoid(x);
            inter += p * y;
            sum += p + y;
        }
        let dice = if sum > 0.0 { 1.0 - 2.0 * inter / sum } else { 0.0 };
        w.cls * cls + w.bce * bce / n.max(1) as f64 + w.dice * dice
    })
}

/// Composite loss `λ_cls L_cls + λ_bce L_bce + λ_dice L_dice + λ_sem L_sem`.
///
/// Proposals are matched one-to-one to ground-truth instances by minimum
/// matching cost; unmatched proposals are supervised toward background.
/// `selected[q]` is the primitive that seeded query `q`.
pub fn losses(
    tape: &mut Tape,
    class_logits: Var,
    mask_logits: Var,
    sem_logits: Var,
    selected: &[usize],
    gt: &GroundTruth,
    w: &LossWeights,
) -> (Var, LossBreakdown) {
    let (m, k1) = tape.value(class_logits).dim();
    let n = tape.value(mask_logits).ncols();
    let background = k1 - 1;
    let cost = matching_cost(tape.value(class_logits), tape.value(mask_logits), gt, w);
    let pairs = hungarian(&cost);

    let mut cls_targets = vec![background; m];
    for &(q, g) in &pairs {
        cls_targets[q] = gt.instances[g].label as usize - 1;
    }
    let l_cls = tape.cross_entropy(class_logits, &cls_targets);

    let (l_bce, l_dice) = if pairs.is_empty() {
        let zero = tape.constant(Mat::zeros((1, 1)));
        (zero, zero)
    } else {
        let rows: Vec<usize> = pairs.iter().map(|&(q, _)| q).collect();
        let targets = Mat::from_shape_fn((pairs.len(), n), |(r, c)| {
            if gt.instances[pairs[r].1].members.contains(&c) {
                1.0
            } else {
                0.0
            }
        });
        let matched = tape.gather_rows(mask_logits, &rows);
        (tape.bce_with_logits(matched, targets.clone()), tape.dice(matched, targets))
    };

    let sem_targets: Vec<usize> = selected.iter().map(|&p| gt.labels[p] as usize - 1).collect();
    let l_sem = tape.cross_entropy(sem_logits, &sem_targets);

    let terms = [(l_cls, w.cls), (l_bce, w.bce), (l_dice, w.dice), (l_sem, w.sem)];
    let mut total = tape.scale(terms[0].0, terms[0].1);
    for &(v, weight) in &terms[1..] {
        let scaled = tape.scale(v, weight);
        total = tape.add(total, scaled);
    }
    let breakdown = LossBreakdown {
        total: tape.scalar(total),
        cls: tape.scalar(l_cls),
        bce: tape.scalar(l_bce),
        dice: tape.scalar(l_dice),
        sem: tape.scalar(l_sem),
    };
    (total, breakdown)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn query_selection_counts() {
        assert_eq!(query_select(7, 1.0, &mut rng(0)), (0..7).collect::<Vec<_>>());
        let half = query_select(10, 0.5, &mut rng(0));
        assert_eq!(half.len(), 5);
        let mut dedup = half.clone();
        dedup.dedup();
        assert_eq!(dedup, half);
        assert_eq!(query_select(10, 0.5, &mut rng(9)), query_select(10, 0.5, &mut rng(9)));
        assert_eq!(query_select(3, 0.01, &mut rng(0)).len(), 1);
    }

    fn decoder(dim: usize, seed: u64) -> (ParamStore, QueryDecoder) {
        let mut store = ParamStore::default();
        let cfg = DecoderConfig {
            heads: 2,
            ..DecoderConfig::default()
        };
        let dec = QueryDecoder::new(&mut store, &mut rng(seed), dim, &cfg);
        (store, dec)
    }

    #[test]
    fn single_query_single_primitive() {
        let (store, dec) = decoder(8, 1);
        let mut tape = Tape::new();
        let q = tape.constant(Mat::from_elem((1, 8), 0.3));
        let mem = tape.constant(Mat::from_shape_fn((1, 8), |(_, c)| c as f64 * 0.1));
        let out = dec.forward(&mut tape, &store, q, mem, None);
        assert_eq!(tape.value(out).dim(), (1, 8));
        assert!(tape.value(out).iter().all(|v| v.is_finite()));
    }

    #[test]
    fn zeroed_outputs_make_identity() {
        let (mut store, dec) = decoder(8, 2);
        dec.zero_outputs(&mut store);
        let queries = Mat::from_shape_fn((3, 8), |(r, c)| (r as f64 - c as f64) * 0.2);
        let mut tape = Tape::new();
        let q = tape.constant(queries.clone());
        let mem = tape.constant(Mat::from_shape_fn((5, 8), |(r, c)| (r * c) as f64 * 0.05));
        let out = dec.forward(&mut tape, &store, q, mem, None);
        assert_eq!(tape.value(out), &queries);
    }

    #[test]
    fn masked_cross_attention_reads_one_key() {
        // Queries may see only primitive 2; changing other primitives must not matter.
        let (store, dec) = decoder(8, 3);
        let mut mask = Mat::from_elem((2, 4), f64::NEG_INFINITY);
        mask.column_mut(2).fill(0.0);
        let queries = Mat::from_shape_fn((2, 8), |(r, c)| ((r + 2 * c) % 5) as f64 * 0.1);
        let run = |memory: Mat| {
            let mut tape = Tape::new();
            let q = tape.constant(queries.clone());
            let m = tape.constant(memory);
            let out = dec.forward(&mut tape, &store, q, m, Some(&mask));
            tape.value(out).clone()
        };
        let memory = Mat::from_shape_fn((4, 8), |(r, c)| ((r * 3 + c) % 7) as f64 * 0.2 - 0.5);
        let base = run(memory.clone());
        let mut other = memory.clone();
        for r in [0, 1, 3] {
            other.row_mut(r).mapv_inplace(|v| -3.0 * v + 1.0);
        }
        let same = run(other);
        for (a, b) in base.iter().zip(same.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
        let mut key_changed = memory;
        // LayerNorm cancels uniform shifts, so perturb unevenly.
        key_changed[[2, 0]] += 0.7;
        key_changed[[2, 5]] -= 0.4;
        assert_ne!(run(key_changed), base);
    }

    #[test]
    fn orthogonal_query_gives_no_membership() {
        let q = array![[1.0, 0.0]];
        let f = array![[0.0, 2.0], [0.0, -1.0]];
        let logits = mask_logits(&q, &f);
        assert_eq!(logits, array![[0.0, 0.0]]);
        let props = instance_proposals(&array![[5.0, 0.0, 0.0, 0.0]], &logits, 0.5);
        assert_eq!(props[0].mask, vec![false, false]);
    }

    #[test]
    fn aligned_large_feature_joins_mask() {
        let f = array![[0.0, 1.0], [4.0, 3.0]];
        let q = array![[8.0, 6.0]];
        let logits = mask_logits(&q, &f);
        assert!(sigmoid(logits[[0, 1]]) > 0.99);
        let props = instance_proposals(&array![[0.0, 3.0, 0.0]], &logits, 0.5);
        assert_eq!(props[0].label, 2);
        assert!(props[0].mask[1]);
    }

    #[test]
    fn background_proposals_are_dropped() {
        let props = instance_proposals(&array![[0.0, 0.0, 0.0, 10.0]], &array![[1.0]], 0.5);
        assert!(props.is_empty());
    }

    #[test]
    fn semantic_routing() {
        let uniform = semantic_prediction(&Mat::zeros((1, 4)), &[0], 1).unwrap();
        assert!((uniform.scores[0] - 0.25).abs() < 1e-15);
        let sharp = semantic_prediction(&array![[0.0, 60.0, 0.0, 0.0]], &[0], 1).unwrap();
        assert_eq!(sharp.labels[0], 2);
        assert!(sharp.scores[0] > 1.0 - 1e-12);

        let logits = array![[3.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 3.0]];
        let a = semantic_prediction(&logits, &[0, 2, 4], 5).unwrap();
        let b = semantic_prediction(&array![[0.0, 0.0, 3.0], [3.0, 0.0, 0.0], [0.0, 3.0, 0.0]], &[4, 0, 2], 5).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.labels[1], 3);
        assert_eq!(a.scores[1], 0.0);
    }

    fn toy_gt() -> GroundTruth {
        GroundTruth {
            labels: vec![1, 1, 2, 2, 3],
            instances: vec![
                GtInstance {
                    label: 1,
                    members: vec![0, 1],
                },
                GtInstance {
                    label: 2,
                    members: vec![2, 3],
                },
            ],
        }
    }

    #[test]
    fn loss_is_invariant_to_gt_order() {
        let mut r = rng(4);
        let class = Mat::from_shape_fn((4, 4), |_| r.gen_range(-2.0..2.0));
        let masks = Mat::from_shape_fn((4, 5), |_| r.gen_range(-3.0..3.0));
        let sem = Mat::from_shape_fn((4, 4), |_| r.gen_range(-2.0..2.0));
        let eval = |gt: &GroundTruth| {
            let mut t = Tape::new();
            let (c, m, s) = (t.constant(class.clone()), t.constant(masks.clone()), t.constant(sem.clone()));
            losses(&mut t, c, m, s, &[0, 1, 2, 4], gt, &LossWeights::default()).1
        };
        let gt = toy_gt();
        let mut swapped = gt.clone();
        swapped.instances.reverse();
        let (a, b) = (eval(&gt), eval(&swapped));
        assert!((a.total - b.total).abs() < 1e-9);
        assert!(a.total >= 0.0 && a.cls >= 0.0 && a.bce >= 0.0 && a.dice >= 0.0 && a.sem >= 0.0);
    }

    #[test]
    fn no_instances_means_no_mask_loss() {
        let gt = GroundTruth {
            labels: vec![3, 3],
            instances: vec![],
        };
        let mut t = Tape::new();
        let c = t.constant(Mat::zeros((2, 4)));
        let m = t.constant(Mat::zeros((2, 2)));
        let s = t.constant(Mat::zeros((2, 4)));
        let (_, b) = losses(&mut t, c, m, s, &[0, 1], &gt, &LossWeights::default());
        assert_eq!((b.bce, b.dice), (0.0, 0.0));
        assert!((b.cls - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn near_perfect_predictions_have_small_mask_losses() {
        let gt = toy_gt();
        let mut masks = Mat::from_elem((2, 5), -40.0);
        masks[[0, 0]] = 40.0;
        masks[[0, 1]] = 40.0;
        masks[[1, 2]] = 40.0;
        masks[[1, 3]] = 40.0;
        let mut class = Mat::from_elem((2, 4), -40.0);
        class[[0, 0]] = 40.0;
        class[[1, 1]] = 40.0;
        let mut t = Tape::new();
        let (c, m) = (t.constant(class), t.constant(masks));
        let s = t.constant(Mat::zeros((2, 4)));
        let (_, b) = losses(&mut t, c, m, s, &[0, 2], &gt, &LossWeights::default());
        assert!(b.bce < 1e-12 && b.dice < 1e-12 && b.cls < 1e-12);
    }
}
