//! Line encoder: Morton-serialized windowed self-attention over line tokens,
//! line pooling to primitives, and layer feature enhancement.

use std::collections::BTreeMap;
use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{LineToken, COORD_DIM, FEAT_DIM};
use crate::geometry::LayerId;
use crate::nn::{Attention, FeedForward, LayerNorm, Linear, Mat, ParamStore, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    /// Tokens per attention window along the serialized order.
    pub window: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            embed_dim: 64,
            depth: 4,
            heads: 4,
            window: 64,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        Ok(())
    }
}

const MORTON_BITS: u32 = 16;

fn quantize(v: f64) -> u64 {
    let cells = (1u64 << MORTON_BITS) as f64;
    ((v + 0.5) * cells).floor().clamp(0.0, cells - 1.0) as u64
}

fn spread3(mut v: u64) -> u64 {
    // Insert two zero bits between each of the low 16 bits.
    v &= 0xffff;
    v = (v | (v << 32)) & 0x001f_0000_0000_ffff;
    v = (v | (v << 16)) & 0x001f_0000_ff00_00ff;
    v = (v | (v << 8)) & 0x100f_00f0_0f00_f00f;
    v = (v | (v << 4)) & 0x10c3_0c30_c30c_30c3;
    v = (v | (v << 2)) & 0x1249_2492_4924_9249;
    v
}

/// Z-order key of a normalized `(x, y, z)` position.
pub fn morton_key(coord: &[f64; COORD_DIM]) -> u64 {
    spread3(quantize(coord[0])) | (spread3(quantize(coord[1])) << 1) | (spread3(quantize(coord[2])) << 2)
}

/// Token indices in serialization order. Ties on the key fall back to the
/// full coordinates and features so the order does not depend on input order.
pub fn serialization_order(tokens: &[LineToken]) -> Vec<usize> {
    let keys: Vec<u64> = tokens.iter().map(|t| morton_key(&t.coord)).collect();
    let mut order: Vec<usize> = (0..tokens.len()).collect();
    order.sort_by(|&a, &b| {
        keys[a].cmp(&keys[b]).then_with(|| {
            let (ta, tb) = (&tokens[a], &tokens[b]);
            ta.coord
                .iter()
                .chain(&ta.feat)
                .zip(tb.coord.iter().chain(&tb.feat))
                .map(|(x, y)| x.total_cmp(y))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    order
}

/// Sinusoidal encoding of the 3-d position: dimension pairs cycle through the
/// axes with geometrically spaced frequencies from `π` to `64π`.
pub fn positional_encoding(tokens: &[LineToken], dim: usize) -> Mat {
    let pairs = dim / 2;
    let freqs_per_axis = pairs.div_ceil(COORD_DIM).max(1);
    let omega = |f: usize| {
        let frac = if freqs_per_axis > 1 {
            f as f64 / (freqs_per_axis - 1) as f64
        } else {
            0.0
        };
        std::f64::consts::PI * 64f64.powf(frac)
    };
    Mat::from_shape_fn((tokens.len(), dim), |(r, c)| {
        let pair = c / 2;
        if pair >= pairs {
            return 0.0;
        }
        let axis = pair % COORD_DIM;
        let angle = omega(pair / COORD_DIM) * tokens[r].coord[axis];
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

pub fn token_features(tokens: &[LineToken]) -> Mat {
    Mat::from_shape_fn((tokens.len(), FEAT_DIM), |(r, c)| tokens[r].feat[c])
}

#[derive(Debug, Clone, Copy)]
struct Block {
    norm_attn: LayerNorm,
    attn: Attention,
    norm_ffn: LayerNorm,
    ffn: FeedForward,
}

#[derive(Debug, Clone)]
pub struct LineEncoder {
    pub cfg: EncoderConfig,
    input: Linear,
    blocks: Vec<Block>,
    final_norm: LayerNorm,
}

impl LineEncoder {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, cfg: EncoderConfig) -> Self {
        let d = cfg.embed_dim;
        let input = Linear::new(store, rng, "encoder.input", FEAT_DIM, d);
        let blocks = (0..cfg.depth)
            .map(|i| Block {
                norm_attn: LayerNorm::new(store, &format!("encoder.block{i}.norm1"), d),
                attn: Attention::new(store, rng, &format!("encoder.block{i}.attn"), d, cfg.heads),
                norm_ffn: LayerNorm::new(store, &format!("encoder.block{i}.norm2"), d),
                ffn: FeedForward::new(store, rng, &format!("encoder.block{i}.ffn"), d, 2 * d),
            })
            .collect();
        let final_norm = LayerNorm::new(store, "encoder.norm", d);
        Self {
            cfg,
            input,
            blocks,
            final_norm,
        }
    }

    /// Per-line embeddings (`N × D`) in input order.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, tokens: &[LineToken]) -> Var {
        let order = serialization_order(tokens);
        let mut inverse = vec![0; order.len()];
        for (pos, &i) in order.iter().enumerate() {
            inverse[i] = pos;
        }
        let sorted: Vec<LineToken> = order.iter().map(|&i| tokens[i]).collect();

        let feats = tape.constant(token_features(&sorted));
        let x = self.input.forward(tape, store, feats);
        let mut x = tape.add_const(x, &positional_encoding(&sorted, self.cfg.embed_dim));

        let n = sorted.len();
        let windows: Vec<Vec<usize>> = (0..n)
            .step_by(self.cfg.window)
            .map(|s| (s..(s + self.cfg.window).min(n)).collect())
            .collect();
        for block in &self.blocks {
            let h = block.norm_attn.forward(tape, store, x);
            let parts: Vec<Var> = windows
                .iter()
                .map(|w| {
                    let hw = if windows.len() == 1 { h } else { tape.gather_rows(h, w) };
                    block.attn.forward(tape, store, hw, hw, None)
                })
                .collect();
            let attended = if parts.len() == 1 { parts[0] } else { tape.concat_rows(&parts) };
            x = tape.add(x, attended);
            let h = block.norm_ffn.forward(tape, store, x);
            let f = block.ffn.forward(tape, store, h);
            x = tape.add(x, f);
        }
        let x = self.final_norm.forward(tape, store, x);
        tape.gather_rows(x, &inverse)
    }
}

/// Standalone forward pass with freshly seeded weights.
pub fn encode_lines(tokens: &[LineToken], cfg: &EncoderConfig) -> Result<Mat> {
    cfg.validate()?;
    if tokens.is_empty() {
        return Err(Error::Shape {
            op: "encode_lines",
            detail: "no tokens".into(),
        });
    }
    let mut store = ParamStore::default();
    let mut rng = crate::seeded_rng(cfg.seed);
    let enc = LineEncoder::new(&mut store, &mut rng, *cfg);
    let mut tape = Tape::new();
    let out = enc.forward(&mut tape, &store, tokens);
    Ok(tape.value(out).clone())
}

fn range_groups(ranges: &[Range<usize>], rows: usize) -> Result<Vec<Vec<usize>>> {
    ranges
        .iter()
        .enumerate()
        .map(|(j, r)| {
            if r.is_empty() {
                Err(Error::EmptyPrimitive(j as u64))
            } else if r.end > rows {
                Err(Error::Shape {
                    op: "line_pooling",
                    detail: format!("range {r:?} exceeds {rows} rows"),
                })
            } else {
                Ok(r.clone().collect())
            }
        })
        .collect()
}

/// `F_j = max_i f_i + mean_i f_i` over each primitive's rows, on the tape.
pub fn pool_lines(tape: &mut Tape, lines: Var, ranges: &[Range<usize>]) -> Result<Var> {
    let groups = range_groups(ranges, tape.value(lines).nrows())?;
    let mx = tape.group_max(lines, &groups);
    let avg = tape.group_mean(lines, &groups);
    Ok(tape.add(mx, avg))
}

/// Line pooling on plain matrices.
pub fn line_pooling(lines: &Mat, ranges: &[Range<usize>]) -> Result<Mat> {
    let mut tape = Tape::new();
    let v = tape.constant(lines.clone());
    let pooled = pool_lines(&mut tape, v, ranges)?;
    Ok(tape.value(pooled).clone())
}

/// Per-layer context (average, max and attention pooling) fused back into
/// every member primitive through a residual.
#[derive(Debug, Clone, Copy)]
pub struct LayerFeatureEnhancement {
    score: Linear,
    pub fuse: Linear,
}

impl LayerFeatureEnhancement {
    pub fn new(store: &mut ParamStore, rng: &mut impl Rng, dim: usize) -> Self {
        Self {
            score: Linear::new(store, rng, "lfe.score", dim, 1),
            fuse: Linear::new(store, rng, "lfe.fuse", 3 * dim, dim),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, prims: Var, layers: &[LayerId]) -> Var {
        let mut by_layer: BTreeMap<LayerId, Vec<usize>> = BTreeMap::new();
        for (i, &l) in layers.iter().enumerate() {
            by_layer.entry(l).or_default().push(i);
        }
        let groups: Vec<Vec<usize>> = by_layer.into_values().collect();
        let mut owner = vec![0; layers.len()];
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                owner[m] = g;
            }
        }
        let avg = tape.group_mean(prims, &groups);
        let mx = tape.group_max(prims, &groups);
        let attn_rows: Vec<Var> = groups
            .iter()
            .map(|members| {
                let rows = tape.gather_rows(prims, members);
                let s = self.score.forward(tape, store, rows);
                let s = tape.transpose(s);
                let w = tape.softmax_rows(s);
                tape.matmul(w, rows)
            })
            .collect();
        let attn = tape.concat_rows(&attn_rows);
        let pooled = tape.concat_cols(&[avg, mx, attn]);
        let context = self.fuse.forward(tape, store, pooled);
        let broadcast = tape.gather_rows(context, &owner);
        tape.add(prims, broadcast)
    }
}
