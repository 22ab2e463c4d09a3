//! Toy-scale training loop: one drawing per step, random query selection,
//! optional flip / rotation / scale augmentation.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{query_select, LossBreakdown, LossWeights};
use crate::error::{Error, Result};
use crate::geometry::{Drawing, Point2, Shape};
use crate::model::{PreparedDrawing, SpotterModel};
use crate::nn::{Optimizer, OptimizerConfig, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Mirror horizontally with probability 1/2.
    pub flip: bool,
    /// Rotate by a multiple of 90 degrees.
    pub rotate: bool,
    /// Uniform scale range about the drawing center, e.g. `[0.8, 1.2]`.
    pub scale: Option<[f64; 2]>,
}

impl AugmentConfig {
    pub fn is_identity(&self) -> bool {
        !self.flip && !self.rotate && self.scale.is_none()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub optimizer: OptimizerConfig,
    pub schedule: Schedule,
    pub clip_norm: Option<f64>,
    pub loss_weights: LossWeights,
    pub augment: AugmentConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 60,
            optimizer: OptimizerConfig::default(),
            schedule: Schedule::default(),
            clip_norm: Some(1.0),
            loss_weights: LossWeights::default(),
            augment: AugmentConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let w = self.loss_weights;
        if [w.cls, w.bce, w.dice, w.sem].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Config("loss weights must be finite and >= 0".into()));
        }
        if let Some([lo, hi]) = self.augment.scale {
            if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
                return Err(Error::Config(format!("invalid scale range [{lo}, {hi}]")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean: LossBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainReport {
    pub steps: usize,
    pub epochs: Vec<EpochStats>,
}

fn transform_point(p: Point2, c: Point2, flip: bool, quarter: u32, s: f64) -> Point2 {
    let mut v = p - c;
    if flip {
        v.x = -v.x;
    }
    for _ in 0..quarter {
        v = Point2::new(-v.y, v.x);
    }
    c + v * s
}

/// Applies a random similarity transform about the drawing center. The
/// canvas is square-agnostic: coordinates may leave it after rotation, which
/// only shifts the normalized features.
pub fn augment(drawing: &Drawing, cfg: &AugmentConfig, rng: &mut impl Rng) -> Drawing {
    let flip = cfg.flip && rng.gen_bool(0.5);
    let quarter = if cfg.rotate { rng.gen_range(0..4u32) } else { 0 };
    let s = cfg.scale.map_or(1.0, |[lo, hi]| if lo < hi { rng.gen_range(lo..hi) } else { lo });
    let c = Point2::new(drawing.origin.x + drawing.width / 2.0, drawing.origin.y + drawing.height / 2.0);
    let tp = |p: Point2| transform_point(p, c, flip, quarter, s);
    // Angles: mirror then rotate.
    let ta = |a: f64| (if flip { PI - a } else { a }) + quarter as f64 * PI / 2.0;
    let mut out = drawing.clone();
    for prim in &mut out.primitives {
        prim.shape = match &prim.shape {
            Shape::Line { start, end } => Shape::Line {
                start: tp(*start),
                end: tp(*end),
            },
            Shape::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => Shape::Arc {
                center: tp(*center),
                radius: radius * s,
                start_angle: ta(*start_angle),
                end_angle: ta(*end_angle),
            },
            Shape::Circle { center, radius } => Shape::Circle {
                center: tp(*center),
                radius: radius * s,
            },
            Shape::Ellipse { center, rx, ry, rotation } => Shape::Ellipse {
                center: tp(*center),
                rx: rx * s,
                ry: ry * s,
                rotation: ta(*rotation),
            },
            Shape::CubicPath { segments } => Shape::CubicPath {
                segments: segments.iter().map(|seg| seg.map(tp)).collect(),
            },
        };
    }
    out
}

/// Trains `model` in place. Drawings are visited in a seeded random order
/// each epoch; `progress` is called after every epoch.
pub fn train(
    model: &mut SpotterModel,
    drawings: &[Drawing],
    cfg: &TrainConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainReport> {
    cfg.validate()?;
    let mut prepared: Vec<PreparedDrawing> = drawings.iter().map(|d| model.prepare(d)).collect::<Result<_>>()?;
    let mut optimizer = Optimizer::new(cfg.optimizer, &model.store);
    optimizer.clip_norm = cfg.clip_norm;
    let mut rng = crate::seeded_rng(cfg.seed);
    let total_steps = (cfg.epochs * drawings.len()).max(1);
    let mut step = 0;
    let mut report = TrainReport {
        steps: 0,
        epochs: Vec::with_capacity(cfg.epochs),
    };
    let alpha = model.config.decoder.alpha_select_train;
    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..drawings.len()).collect();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut counted = 0;
        for i in order {
            if !cfg.augment.is_identity() {
                prepared[i] = model.prepare(&augment(&drawings[i], &cfg.augment, &mut rng))?;
            }
            let p = &prepared[i];
            if p.is_empty() {
                continue;
            }
            let selected = query_select(p.len(), alpha, &mut rng);
            let mut tape = Tape::new();
            let (loss, parts) = model.loss(&mut tape, p, &selected, &cfg.loss_weights)?;
            let grads = tape.backward(loss, model.store.len());
            let scale = match cfg.schedule {
                Schedule::Constant => 1.0,
                Schedule::Cosine => 0.5 * (1.0 + (PI * step as f64 / total_steps as f64).cos()),
            };
            optimizer.step(&mut model.store, &grads, scale);
            step += 1;
            counted += 1;
            sum.total += parts.total;
            sum.cls += parts.cls;
            sum.bce += parts.bce;
            sum.dice += parts.dice;
            sum.sem += parts.sem;
        }
        let k = counted.max(1) as f64;
        let stats = EpochStats {
            epoch,
            mean: LossBreakdown {
                total: sum.total / k,
                cls: sum.cls / k,
                bce: sum.bce / k,
                dice: sum.dice / k,
                sem: sum.sem / k,
            },
        };
        progress(&stats);
        report.epochs.push(stats);
    }
    report.steps = step;
    Ok(report)
}
