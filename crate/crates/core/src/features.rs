//! Per-line position vectors (3-d) and feature vectors (7-d), all computed in
//! the normalized `[-0.5, 0.5]` frame of the drawing.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Drawing, LayerId, Point2, PrimitiveId};
use crate::sampler::{LineSegment, Tokenization};

pub const COORD_DIM: usize = 3;
pub const FEAT_DIM: usize = 7;

/// What the third position coordinate encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorMode {
    /// Normalized layer id.
    #[default]
    WithLayerPrior,
    /// Normalized primitive id; the layer is ignored.
    WithoutPrior,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineToken {
    /// `(c_x, c_y, z)`.
    pub coord: [f64; COORD_DIM],
    /// `(l, d_x, d_y, c_x, c_y, c_x^p, c_y^p)`.
    pub feat: [f64; FEAT_DIM],
    pub primitive_id: PrimitiveId,
    pub layer: LayerId,
}

impl LineToken {
    pub fn length(&self) -> f64 {
        self.feat[0]
    }

    pub fn direction(&self) -> (f64, f64) {
        (self.feat[1], self.feat[2])
    }

    pub fn midpoint(&self) -> Point2 {
        Point2::new(self.feat[3], self.feat[4])
    }

    /// Endpoints rebuilt from the center/direction/length parametrization.
    pub fn endpoints(&self) -> (Point2, Point2) {
        let (dx, dy) = self.direction();
        let half = self.length() / 2.0;
        let c = self.midpoint();
        // d points from the end toward the start.
        (
            Point2::new(c.x + half * dx, c.y + half * dy),
            Point2::new(c.x - half * dx, c.y - half * dy),
        )
    }
}

pub fn normalize_point(p: Point2, drawing: &Drawing) -> Point2 {
    Point2::new(
        (p.x - drawing.origin.x) / drawing.width - 0.5,
        (p.y - drawing.origin.y) / drawing.height - 0.5,
    )
}

/// Min-max scaling to `[-0.5, 0.5]`; a degenerate range maps to `0`.
pub fn normalize_id(value: i64, min: i64, max: i64) -> Result<f64> {
    if value < min || value > max {
        return Err(Error::IdOutOfRange { value, min, max });
    }
    if min == max {
        return Ok(0.0);
    }
    Ok((value - min) as f64 / (max - min) as f64 - 0.5)
}

/// Mean of the segment midpoints.
pub fn primitive_centroid(segments: &[LineSegment]) -> Result<Point2> {
    let Some(first) = segments.first() else {
        return Err(Error::EmptyPrimitive(0));
    };
    let n = segments.len() as f64;
    let (sx, sy) = segments.iter().fold((0.0, 0.0), |(sx, sy), s| {
        let m = s.start.midpoint(s.end);
        (sx + m.x, sy + m.y)
    });
    debug_assert!(first.start.is_finite());
    Ok(Point2::new(sx / n, sy / n))
}

/// Normalization context for one drawing: extents plus the observed id range
/// for the configured prior mode.
#[derive(Debug, Clone, Copy)]
pub struct FeatureFrame<'a> {
    drawing: &'a Drawing,
    mode: PriorMode,
    id_min: i64,
    id_max: i64,
}

impl<'a> FeatureFrame<'a> {
    pub fn new(drawing: &'a Drawing, mode: PriorMode) -> Self {
        let ids = drawing.primitives.iter().map(|p| match mode {
            PriorMode::WithLayerPrior => p.layer,
            PriorMode::WithoutPrior => p.id as i64,
        });
        let (id_min, id_max) = ids.fold((i64::MAX, i64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)));
        let (id_min, id_max) = if id_min > id_max { (0, 0) } else { (id_min, id_max) };
        Self {
            drawing,
            mode,
            id_min,
            id_max,
        }
    }

    pub fn normalize_segment(&self, s: &LineSegment) -> LineSegment {
        LineSegment {
            start: normalize_point(s.start, self.drawing),
            end: normalize_point(s.end, self.drawing),
            ..*s
        }
    }

    pub fn z_slot(&self, primitive_id: PrimitiveId, layer: LayerId) -> Result<f64> {
        let raw = match self.mode {
            PriorMode::WithLayerPrior => layer,
            PriorMode::WithoutPrior => primitive_id as i64,
        };
        normalize_id(raw, self.id_min, self.id_max)
    }

    /// Builds the token for an already-normalized segment.
    pub fn line_token(&self, segment: &LineSegment, centroid: Point2) -> Result<LineToken> {
        let (p1, p2) = (segment.start, segment.end);
        let l = p1.distance(p2);
        let (dx, dy) = if l > 0.0 {
            ((p1.x - p2.x) / l, (p1.y - p2.y) / l)
        } else {
            (0.0, 0.0)
        };
        let c = p1.midpoint(p2);
        let z = self.z_slot(segment.primitive_id, segment.layer)?;
        Ok(LineToken {
            coord: [c.x, c.y, z],
            feat: [l, dx, dy, c.x, c.y, centroid.x, centroid.y],
            primitive_id: segment.primitive_id,
            layer: segment.layer,
        })
    }
}

/// Tokens for a whole tokenized drawing, in segment order.
pub fn featurize(drawing: &Drawing, tokens: &Tokenization, mode: PriorMode) -> Result<Vec<LineToken>> {
    let frame = FeatureFrame::new(drawing, mode);
    let mut out = Vec::with_capacity(tokens.len());
    for range in &tokens.ranges {
        let normalized: Vec<LineSegment> = tokens.segments[range.clone()]
            .iter()
            .map(|s| frame.normalize_segment(s))
            .collect();
        let centroid = primitive_centroid(&normalized)?;
        for s in &normalized {
            out.push(frame.line_token(s, centroid)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{ClassTable, Layer, Primitive, Shape};
    use crate::sampler::{to_segments, uniform_samples};

    fn drawing() -> Drawing {
        Drawing {
            origin: Point2::new(10.0, -5.0),
            width: 40.0,
            height: 20.0,
            classes: ClassTable::default(),
            layers: vec![Layer { id: 3, name: "a".into() }, Layer { id: 7, name: "b".into() }],
            primitives: vec![
                Primitive::new(
                    4,
                    3,
                    Shape::Line {
                        start: Point2::new(10.0, -5.0),
                        end: Point2::new(50.0, 15.0),
                    },
                ),
                Primitive::new(
                    9,
                    7,
                    Shape::Circle {
                        center: Point2::new(30.0, 5.0),
                        radius: 4.0,
                    },
                ),
            ],
        }
    }

    fn seg(a: (f64, f64), b: (f64, f64)) -> LineSegment {
        LineSegment {
            start: Point2::new(a.0, a.1),
            end: Point2::new(b.0, b.1),
            primitive_id: 4,
            layer: 3,
        }
    }

    #[test]
    fn normalization_corners() {
        let d = drawing();
        assert_eq!(normalize_point(d.origin, &d), Point2::new(-0.5, -0.5));
        assert_eq!(normalize_point(Point2::new(50.0, 15.0), &d), Point2::new(0.5, 0.5));
        assert_eq!(normalize_point(Point2::new(30.0, 5.0), &d), Point2::new(0.0, 0.0));
    }

    #[test]
    fn id_normalization() {
        assert_eq!(normalize_id(3, 3, 7).unwrap(), -0.5);
        assert_eq!(normalize_id(7, 3, 7).unwrap(), 0.5);
        assert_eq!(normalize_id(5, 3, 7).unwrap(), 0.0);
        assert_eq!(normalize_id(2, 2, 2).unwrap(), 0.0);
        assert!(matches!(normalize_id(8, 3, 7), Err(Error::IdOutOfRange { .. })));
    }

    #[test]
    fn horizontal_segment_token() {
        let d = drawing();
        let frame = FeatureFrame::new(&d, PriorMode::WithLayerPrior);
        let s = seg((0.0, 0.0), (0.5, 0.0));
        let t = frame.line_token(&s, Point2::new(0.1, 0.2)).unwrap();
        assert_eq!(t.feat, [0.5, -1.0, 0.0, 0.25, 0.0, 0.1, 0.2]);
        assert_eq!(t.coord, [0.25, 0.0, -0.5]);
    }

    #[test]
    fn zero_length_segment() {
        let d = drawing();
        let frame = FeatureFrame::new(&d, PriorMode::WithLayerPrior);
        let t = frame.line_token(&seg((0.1, 0.1), (0.1, 0.1)), Point2::default()).unwrap();
        assert_eq!(t.length(), 0.0);
        assert_eq!(t.direction(), (0.0, 0.0));
    }

    #[test]
    fn parametric_points_lie_on_line() {
        use rand::{Rng, SeedableRng};
        let d = drawing();
        let frame = FeatureFrame::new(&d, PriorMode::WithLayerPrior);
        let s = seg((-0.3, 0.2), (0.4, -0.1));
        let t = frame.line_token(&s, Point2::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let (a, b) = (s.start, s.end);
        for _ in 0..100 {
            let u = rng.gen_range(-t.length() / 2.0..=t.length() / 2.0);
            let p = Point2::new(t.feat[3] + u * t.feat[1], t.feat[4] + u * t.feat[2]);
            // Distance from p to the line through a, b.
            let cross = (b.x - a.x) * (p.y - a.y) - (b.y - a.y) * (p.x - a.x);
            assert!(cross.abs() / a.distance(b) < 1e-9);
        }
    }

    #[test]
    fn centroid_cases() {
        let one = [seg((0.0, 0.0), (0.2, 0.4))];
        assert_eq!(primitive_centroid(&one).unwrap(), Point2::new(0.1, 0.2));
        assert!(primitive_centroid(&[]).is_err());
        let square = [
            seg((-1.0, -1.0), (1.0, -1.0)),
            seg((1.0, -1.0), (1.0, 1.0)),
            seg((1.0, 1.0), (-1.0, 1.0)),
            seg((-1.0, 1.0), (-1.0, -1.0)),
        ];
        assert!(primitive_centroid(&square).unwrap().norm() < 1e-9);
    }

    #[test]
    fn circle_chord_centroid_is_center() {
        let c = Point2::new(3.0, -2.0);
        let p = Primitive::new(
            1,
            0,
            Shape::Circle {
                center: c,
                radius: 2.5,
            },
        );
        let segs = to_segments(&uniform_samples(&p.shape, 9), &p).unwrap();
        assert!(primitive_centroid(&segs).unwrap().distance(c) < 1e-9);
    }

    #[test]
    fn prior_modes_differ_only_in_z() {
        let d = drawing();
        let tok = crate::sampler::tokenize_drawing(&d, &crate::sampler::SamplingConfig::with_alpha(0.1));
        let with = featurize(&d, &tok, PriorMode::WithLayerPrior).unwrap();
        let without = featurize(&d, &tok, PriorMode::WithoutPrior).unwrap();
        for (a, b) in with.iter().zip(&without) {
            assert_eq!(a.feat, b.feat);
            assert_eq!(a.coord[..2], b.coord[..2]);
        }
        // Line primitive: layer 3 is the min layer, id 4 is the min id.
        assert_eq!(with[0].coord[2], -0.5);
        assert_eq!(without[0].coord[2], -0.5);
        assert_eq!(with.last().unwrap().coord[2], 0.5);
    }

    #[test]
    fn featurized_tokens_stay_in_unit_box() {
        let d = drawing();
        let tok = crate::sampler::tokenize_drawing(&d, &crate::sampler::SamplingConfig::with_alpha(0.05));
        for t in featurize(&d, &tok, PriorMode::WithLayerPrior).unwrap() {
            assert!(t.coord.iter().all(|v| (-0.5..=0.5).contains(v)));
            if t.length() > 0.0 {
                let (dx, dy) = t.direction();
                assert!((dx.hypot(dy) - 1.0).abs() < 1e-12);
            }
        }
    }
}
