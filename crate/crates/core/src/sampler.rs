//! Uniform line sampling: every primitive becomes a chain of chords whose
//! adjacent sample points are at most `alpha_sample * min(width, height)` apart.

use std::ops::Range;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{eval, Drawing, LayerId, Point2, Primitive, PrimitiveId, Shape};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub alpha_sample: f64,
    pub k_init_line: usize,
    pub k_init_other: usize,
    /// Upper bound on `K` for pathological primitives.
    pub k_max: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        Self {
            alpha_sample: 0.01,
            k_init_line: 2,
            k_init_other: 9,
            k_max: 4096,
        }
    }
}

impl SamplingConfig {
    pub fn with_alpha(alpha_sample: f64) -> Self {
        Self {
            alpha_sample,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha_sample > 0.0 && self.alpha_sample <= 1.0) {
            return Err(Error::Config(format!(
                "alpha_sample must lie in (0, 1], got {}",
                self.alpha_sample
            )));
        }
        if self.k_init_line < 2 || self.k_init_other < 2 {
            return Err(Error::Config("initial K must be at least 2".into()));
        }
        if self.k_max < self.k_init_line.max(self.k_init_other) {
            return Err(Error::Config("k_max below the initial K".into()));
        }
        Ok(())
    }

    pub fn initial_k(&self, shape: &Shape) -> usize {
        match shape {
            Shape::Line { .. } => self.k_init_line,
            _ => self.k_init_other,
        }
    }
}

/// Atomic token: one chord of a sampled primitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSegment {
    pub start: Point2,
    pub end: Point2,
    pub primitive_id: PrimitiveId,
    pub layer: LayerId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub points: Vec<Point2>,
    /// `true` when `k_max` stopped the search before the constraint held.
    pub capped: bool,
}

impl Samples {
    pub fn k(&self) -> usize {
        self.points.len()
    }
}

/// Samples `γ(t_i)` at `t_i = (i - 1) / (K - 1)` for the smallest `K` (starting
/// from the kind's initial value) whose adjacent chords all satisfy the
/// distance bound.
pub fn sample_points(primitive: &Primitive, drawing: &Drawing, cfg: &SamplingConfig) -> Samples {
    let bound = cfg.alpha_sample * drawing.min_extent();
    let mut k = cfg.initial_k(&primitive.shape);
    loop {
        let points = uniform_samples(&primitive.shape, k);
        if max_step(&points) <= bound {
            return Samples { points, capped: false };
        }
        if k >= cfg.k_max {
            warn!(
                "primitive {}: K capped at {} before the spacing bound {bound} was met",
                primitive.id, cfg.k_max
            );
            return Samples { points, capped: true };
        }
        k += 1;
    }
}

pub fn uniform_samples(shape: &Shape, k: usize) -> Vec<Point2> {
    debug_assert!(k >= 2);
    let last = (k - 1) as f64;
    (0..k).map(|i| eval(shape, i as f64 / last)).collect()
}

/// Largest Euclidean distance between adjacent points.
pub fn max_step(points: &[Point2]) -> f64 {
    points
        .windows(2)
        .map(|w| w[0].distance(w[1]))
        .fold(0.0, f64::max)
}

/// Connects adjacent samples into `K - 1` segments tagged with the primitive.
pub fn to_segments(points: &[Point2], primitive: &Primitive) -> Result<Vec<LineSegment>> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints(points.len()));
    }
    Ok(points
        .windows(2)
        .map(|w| LineSegment {
            start: w[0],
            end: w[1],
            primitive_id: primitive.id,
            layer: primitive.layer,
        })
        .collect())
}

#[derive(Debug, Clone, Default)]
pub struct Tokenization {
    pub segments: Vec<LineSegment>,
    /// `ranges[j]` indexes the segments of `drawing.primitives[j]`.
    pub ranges: Vec<Range<usize>>,
    pub capped: Vec<PrimitiveId>,
}

impl Tokenization {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

pub fn tokenize_drawing(drawing: &Drawing, cfg: &SamplingConfig) -> Tokenization {
    let per_primitive: Vec<(Vec<LineSegment>, bool)> = drawing
        .primitives
        .par_iter()
        .map(|p| {
            let samples = sample_points(p, drawing, cfg);
            let segs = to_segments(&samples.points, p).expect("K >= 2 by construction");
            (segs, samples.capped)
        })
        .collect();
    let mut out = Tokenization::default();
    for ((segs, capped), p) in per_primitive.into_iter().zip(&drawing.primitives) {
        let start = out.segments.len();
        out.segments.extend(segs);
        out.ranges.push(start..out.segments.len());
        if capped {
            out.capped.push(p.id);
        }
    }
    out
}

/// Point-based token for the line-vs-point comparison: one token per distinct
/// sample point, carrying position only.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointToken {
    pub position: Point2,
    pub primitive_id: PrimitiveId,
    pub layer: LayerId,
}

/// Same sampling as [`tokenize_drawing`], emitted as points. Closed primitives
/// drop their repeated closing point.
pub fn point_tokens(drawing: &Drawing, cfg: &SamplingConfig) -> Vec<PointToken> {
    let per_primitive: Vec<Vec<PointToken>> = drawing
        .primitives
        .par_iter()
        .map(|p| {
            let mut points = sample_points(p, drawing, cfg).points;
            if p.shape.is_closed() {
                points.pop();
            }
            points
                .into_iter()
                .map(|position| PointToken {
                    position,
                    primitive_id: p.id,
                    layer: p.layer,
                })
                .collect()
        })
        .collect();
    per_primitive.into_iter().flatten().collect()
}
