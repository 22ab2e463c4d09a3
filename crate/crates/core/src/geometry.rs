//! Vector primitives, their parametric paths `[0, 1] -> R^2`, and exact lengths.
//!
//! Every primitive kind maps onto a path `γ(t)`. Open primitives (line, arc,
//! cubic path) run from their first to their last geometric point; closed
//! primitives (circle, ellipse) start and end at the parameter-0 point.

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type PrimitiveId = u64;
pub type LayerId = i64;
/// Class index in `1..=K`; `K + 1` is reserved for background.
pub type ClassId = u32;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Point2) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn midpoint(self, other: Point2) -> Point2 {
        Point2::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

/// Control points of one cubic Bézier piece.
pub type CubicSegment = [Point2; 4];

#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    Line {
        start: Point2,
        end: Point2,
    },
    /// Sweeps from `start_angle` to `end_angle` (radians) in the stored direction.
    Arc {
        center: Point2,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
    Circle {
        center: Point2,
        radius: f64,
    },
    Ellipse {
        center: Point2,
        rx: f64,
        ry: f64,
        rotation: f64,
    },
    /// Pieces share the parameter interval evenly, piece `i` covering `[i/n, (i+1)/n]`.
    CubicPath {
        segments: Vec<CubicSegment>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ShapeKind {
    Line,
    Arc,
    Circle,
    Ellipse,
    CubicPath,
}

impl ShapeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ShapeKind::Line => "line",
            ShapeKind::Arc => "arc",
            ShapeKind::Circle => "circle",
            ShapeKind::Ellipse => "ellipse",
            ShapeKind::CubicPath => "cubic-path",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "line" => ShapeKind::Line,
            "arc" => ShapeKind::Arc,
            "circle" => ShapeKind::Circle,
            "ellipse" => ShapeKind::Ellipse,
            "cubic-path" | "cubic" => ShapeKind::CubicPath,
            _ => return None,
        })
    }
}

impl Shape {
    pub fn kind(&self) -> ShapeKind {
        match self {
            Shape::Line { .. } => ShapeKind::Line,
            Shape::Arc { .. } => ShapeKind::Arc,
            Shape::Circle { .. } => ShapeKind::Circle,
            Shape::Ellipse { .. } => ShapeKind::Ellipse,
            Shape::CubicPath { .. } => ShapeKind::CubicPath,
        }
    }

    pub fn is_closed(&self) -> bool {
        matches!(self, Shape::Circle { .. } | Shape::Ellipse { .. })
    }

    /// Checks the kind-specific parameter invariants; the message names the offending field.
    pub fn check(&self) -> std::result::Result<(), (&'static str, String)> {
        fn finite(name: &'static str, v: f64) -> std::result::Result<(), (&'static str, String)> {
            if v.is_finite() {
                Ok(())
            } else {
                Err((name, format!("{name} must be finite")))
            }
        }
        fn point(name: &'static str, p: Point2) -> std::result::Result<(), (&'static str, String)> {
            if p.is_finite() {
                Ok(())
            } else {
                Err((name, format!("{name} must be finite")))
            }
        }
        fn positive(name: &'static str, v: f64) -> std::result::Result<(), (&'static str, String)> {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err((name, format!("{name} must be finite and > 0, got {v}")))
            }
        }
        match self {
            Shape::Line { start, end } => {
                point("start", *start)?;
                point("end", *end)
            }
            Shape::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                point("center", *center)?;
                positive("radius", *radius)?;
                finite("start_angle", *start_angle)?;
                finite("end_angle", *end_angle)
            }
            Shape::Circle { center, radius } => {
                point("center", *center)?;
                positive("radius", *radius)
            }
            Shape::Ellipse {
                center,
                rx,
                ry,
                rotation,
            } => {
                point("center", *center)?;
                positive("rx", *rx)?;
                positive("ry", *ry)?;
                finite("rotation", *rotation)
            }
            Shape::CubicPath { segments } => {
                if segments.is_empty() {
                    return Err(("segments", "cubic path needs at least one segment".into()));
                }
                if segments.iter().flatten().all(|p| p.is_finite()) {
                    Ok(())
                } else {
                    Err(("segments", "control points must be finite".into()))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Primitive {
    pub id: PrimitiveId,
    pub layer: LayerId,
    pub shape: Shape,
    pub gt_label: Option<ClassId>,
    pub gt_instance: Option<i64>,
}

impl Primitive {
    pub fn new(id: PrimitiveId, layer: LayerId, shape: Shape) -> Self {
        Self {
            id,
            layer,
            shape,
            gt_label: None,
            gt_instance: None,
        }
    }

    pub fn with_gt(mut self, label: ClassId, instance: i64) -> Self {
        self.gt_label = Some(label);
        self.gt_instance = Some(instance);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassInfo {
    pub id: ClassId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ClassTable {
    pub things: Vec<ClassInfo>,
    pub stuffs: Vec<ClassInfo>,
}

impl ClassTable {
    /// `K`, the number of foreground classes.
    pub fn count(&self) -> usize {
        self.things.len() + self.stuffs.len()
    }

    pub fn background(&self) -> ClassId {
        self.count() as ClassId + 1
    }

    pub fn is_thing(&self, label: ClassId) -> bool {
        self.things.iter().any(|c| c.id == label)
    }

    pub fn is_stuff(&self, label: ClassId) -> bool {
        self.stuffs.iter().any(|c| c.id == label)
    }

    pub fn name(&self, label: ClassId) -> Option<&str> {
        self.things
            .iter()
            .chain(&self.stuffs)
            .find(|c| c.id == label)
            .map(|c| c.name.as_str())
    }

    pub fn check(&self) -> Result<()> {
        let k = self.count();
        let mut seen = vec![false; k + 1];
        for (side, list) in [("things", &self.things), ("stuffs", &self.stuffs)] {
            for (i, c) in list.iter().enumerate() {
                let idx = c.id as usize;
                if idx == 0 || idx > k {
                    return Err(Error::schema(
                        format!("/classes/{side}/{i}/id"),
                        format!("class id {} outside 1..={k}", c.id),
                    ));
                }
                if seen[idx] {
                    return Err(Error::schema(
                        format!("/classes/{side}/{i}/id"),
                        format!("duplicate class id {}", c.id),
                    ));
                }
                seen[idx] = true;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layer {
    pub id: LayerId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Drawing {
    pub origin: Point2,
    pub width: f64,
    pub height: f64,
    pub classes: ClassTable,
    pub layers: Vec<Layer>,
    pub primitives: Vec<Primitive>,
}

impl Drawing {
    pub fn min_extent(&self) -> f64 {
        self.width.min(self.height)
    }

    pub fn class_count(&self) -> usize {
        self.classes.count()
    }

    pub fn primitive(&self, id: PrimitiveId) -> Option<&Primitive> {
        self.primitives.iter().find(|p| p.id == id)
    }

    /// Raw-unit length of every primitive, in primitive order.
    pub fn lengths(&self) -> Vec<f64> {
        self.primitives.iter().map(primitive_length).collect()
    }

    /// Checks the drawing invariants, reporting the first violation with a JSON pointer.
    pub fn validate(&self) -> Result<()> {
        if !self.origin.is_finite() {
            return Err(Error::schema("/origin", "origin must be finite"));
        }
        for (name, v) in [("width", self.width), ("height", self.height)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::schema(format!("/{name}"), format!("{name} must be > 0, got {v}")));
            }
        }
        self.classes.check()?;
        let mut layer_ids = HashSet::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if !layer_ids.insert(layer.id) {
                return Err(Error::schema(
                    format!("/layers/{i}/id"),
                    format!("duplicate layer id {}", layer.id),
                ));
            }
        }
        let k = self.classes.count() as ClassId;
        let mut ids = HashSet::new();
        for (i, p) in self.primitives.iter().enumerate() {
            if !ids.insert(p.id) {
                return Err(Error::schema(
                    format!("/primitives/{i}/id"),
                    format!("duplicate primitive id {}", p.id),
                ));
            }
            if !layer_ids.contains(&p.layer) {
                return Err(Error::schema(
                    format!("/primitives/{i}/layer"),
                    format!("primitive {} references unknown layer {}", p.id, p.layer),
                ));
            }
            if let Err((field, msg)) = p.shape.check() {
                return Err(Error::schema(format!("/primitives/{i}/params/{field}"), msg));
            }
            if let Some(label) = p.gt_label {
                if label == 0 || label > k {
                    return Err(Error::schema(
                        format!("/primitives/{i}/gt_label"),
                        format!("label {label} outside 1..={k}"),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Evaluates the primitive's path at `t`.
pub fn path_point(primitive: &Primitive, t: f64) -> Result<Point2> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::ParameterOutOfRange(t));
    }
    Ok(eval(&primitive.shape, t))
}

pub(crate) fn eval(shape: &Shape, t: f64) -> Point2 {
    match *shape {
        Shape::Line { start, end } => start + (end - start) * t,
        Shape::Arc {
            center,
            radius,
            start_angle,
            end_angle,
        } => {
            let a = start_angle + (end_angle - start_angle) * t;
            center + Point2::new(a.cos(), a.sin()) * radius
        }
        Shape::Circle { center, radius } => {
            let a = TAU * t;
            center + Point2::new(a.cos(), a.sin()) * radius
        }
        Shape::Ellipse {
            center,
            rx,
            ry,
            rotation,
        } => {
            let a = TAU * t;
            let (s, c) = rotation.sin_cos();
            let (u, v) = (rx * a.cos(), ry * a.sin());
            center + Point2::new(c * u - s * v, s * u + c * v)
        }
        Shape::CubicPath { ref segments } => {
            let (seg, local) = locate(segments.len(), t);
            bezier(&segments[seg], local)
        }
    }
}

fn locate(n: usize, t: f64) -> (usize, f64) {
    let scaled = t * n as f64;
    let seg = (scaled.floor() as usize).min(n - 1);
    (seg, scaled - seg as f64)
}

fn bezier(c: &CubicSegment, t: f64) -> Point2 {
    let u = 1.0 - t;
    c[0] * (u * u * u) + c[1] * (3.0 * u * u * t) + c[2] * (3.0 * u * t * t) + c[3] * (t * t * t)
}

fn bezier_derivative(c: &CubicSegment, t: f64) -> Point2 {
    let u = 1.0 - t;
    (c[1] - c[0]) * (3.0 * u * u) + (c[2] - c[1]) * (6.0 * u * t) + (c[3] - c[2]) * (3.0 * t * t)
}

/// Length `L(e)` in the primitive's own units.
///
/// Lines, arcs and circles are measured analytically; ellipses and cubic
/// pieces by adaptive Gauss–Legendre quadrature of the speed `|γ'(t)|`.
pub fn primitive_length(primitive: &Primitive) -> f64 {
    shape_length(&primitive.shape)
}

pub fn shape_length(shape: &Shape) -> f64 {
    const REL_TOL: f64 = 1e-6;
    match *shape {
        Shape::Line { start, end } => start.distance(end),
        Shape::Arc {
            radius,
            start_angle,
            end_angle,
            ..
        } => radius * (end_angle - start_angle).abs(),
        Shape::Circle { radius, .. } => TAU * radius,
        Shape::Ellipse { rx, ry, .. } => {
            // Rotation does not change the speed profile.
            let speed = |t: f64| {
                let a = TAU * t;
                TAU * (rx * a.sin()).hypot(ry * a.cos())
            };
            // Split at the quarter points so each piece is smooth and monotone.
            (0..4)
                .map(|q| adaptive_integral(&speed, q as f64 / 4.0, (q + 1) as f64 / 4.0, REL_TOL))
                .sum()
        }
        Shape::CubicPath { ref segments } => segments
            .iter()
            .map(|c| adaptive_integral(&|t| bezier_derivative(c, t).norm(), 0.0, 1.0, REL_TOL))
            .sum(),
    }
}

// 7-point Gauss–Legendre nodes and weights on [-1, 1].
const GL_NODES: [f64; 7] = [
    0.0,
    -0.405_845_151_377_397_2,
    0.405_845_151_377_397_2,
    -0.741_531_185_599_394_4,
    0.741_531_185_599_394_4,
    -0.949_107_912_342_758_5,
    0.949_107_912_342_758_5,
];
const GL_WEIGHTS: [f64; 7] = [
    0.417_959_183_673_469_4,
    0.381_830_050_505_118_9,
    0.381_830_050_505_118_9,
    0.279_705_391_489_276_7,
    0.279_705_391_489_276_7,
    0.129_484_966_168_869_7,
    0.129_484_966_168_869_7,
];

fn gauss_legendre(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let half = (b - a) / 2.0;
    let mid = (a + b) / 2.0;
    GL_NODES
        .iter()
        .zip(GL_WEIGHTS)
        .map(|(x, w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

fn adaptive_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    fn recurse(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, rel_tol: f64, depth: u32) -> f64 {
        let mid = (a + b) / 2.0;
        let left = gauss_legendre(f, a, mid);
        let right = gauss_legendre(f, mid, b);
        let halves = left + right;
        if depth == 0 || (halves - whole).abs() <= rel_tol * halves.abs() {
            return halves;
        }
        recurse(f, a, mid, left, rel_tol, depth - 1) + recurse(f, mid, b, right, rel_tol, depth - 1)
    }
    let whole = gauss_legendre(f, a, b);
    recurse(f, a, b, whole, rel_tol, 24)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn prim(shape: Shape) -> Primitive {
        Primitive::new(0, 0, shape)
    }

    fn line(ax: f64, ay: f64, bx: f64, by: f64) -> Primitive {
        prim(Shape::Line {
            start: Point2::new(ax, ay),
            end: Point2::new(bx, by),
        })
    }

    fn close(a: Point2, b: Point2, tol: f64) -> bool {
        a.distance(b) <= tol
    }

    fn polyline_length(p: &Primitive, n: usize) -> f64 {
        let pts: Vec<_> = (0..=n)
            .map(|i| path_point(p, i as f64 / n as f64).unwrap())
            .collect();
        pts.windows(2).map(|w| w[0].distance(w[1])).sum()
    }

    fn bernstein_oracle(c: [Point2; 4], t: f64) -> Point2 {
        // Repeated linear interpolation (de Casteljau).
        let lerp = |a: Point2, b: Point2| a + (b - a) * t;
        let (a, b, d) = (lerp(c[0], c[1]), lerp(c[1], c[2]), lerp(c[2], c[3]));
        let (e, f) = (lerp(a, b), lerp(b, d));
        lerp(e, f)
    }

    #[test]
    fn line_midpoint() {
        let p = path_point(&line(0.0, 0.0, 2.0, 0.0), 0.5).unwrap();
        assert!(close(p, Point2::new(1.0, 0.0), 1e-15));
    }

    #[test]
    fn circle_quarter_turn() {
        let c = prim(Shape::Circle {
            center: Point2::new(0.0, 0.0),
            radius: 1.0,
        });
        assert!(close(path_point(&c, 0.25).unwrap(), Point2::new(0.0, 1.0), 1e-15));
        assert!(close(path_point(&c, 0.0).unwrap(), path_point(&c, 1.0).unwrap(), 1e-12));
    }

    #[test]
    fn cubic_midpoint_matches_de_casteljau() {
        let ctrl = [
            Point2::new(0.0, 0.0),
            Point2::new(0.0, 1.0),
            Point2::new(1.0, 1.0),
            Point2::new(1.0, 0.0),
        ];
        let expected = bernstein_oracle(ctrl, 0.5);
        assert!(close(expected, Point2::new(0.5, 0.75), 1e-15));
        let c = prim(Shape::CubicPath { segments: vec![ctrl] });
        assert!(close(path_point(&c, 0.5).unwrap(), expected, 1e-15));
    }

    #[test]
    fn out_of_range_parameter() {
        let l = line(0.0, 0.0, 1.0, 0.0);
        assert!(matches!(path_point(&l, 1.5), Err(Error::ParameterOutOfRange(_))));
        assert!(path_point(&l, -1e-9).is_err());
        assert!(path_point(&l, f64::NAN).is_err());
    }

    #[test]
    fn analytic_lengths() {
        assert_eq!(primitive_length(&line(0.0, 0.0, 3.0, 4.0)), 5.0);
        let c = prim(Shape::Circle {
            center: Point2::default(),
            radius: 1.0,
        });
        assert!((primitive_length(&c) - 2.0 * PI).abs() < 1e-15);
        let a = prim(Shape::Arc {
            center: Point2::default(),
            radius: 2.0,
            start_angle: PI / 2.0,
            end_angle: 0.0,
        });
        assert!((primitive_length(&a) - PI).abs() < 1e-15);
    }

    #[test]
    fn straight_cubic_length() {
        let c = prim(Shape::CubicPath {
            segments: vec![[
                Point2::new(0.0, 0.0),
                Point2::new(1.0, 0.0),
                Point2::new(2.0, 0.0),
                Point2::new(3.0, 0.0),
            ]],
        });
        let oracle = polyline_length(&c, 10_000);
        assert!((oracle - 3.0).abs() < 1e-9);
        assert!((primitive_length(&c) - 3.0).abs() < 1e-9);
    }

    #[test]
    fn ellipse_length_matches_ramanujan_for_circle_case() {
        let e = prim(Shape::Ellipse {
            center: Point2::new(3.0, 1.0),
            rx: 2.0,
            ry: 2.0,
            rotation: 0.3,
        });
        assert!((primitive_length(&e) - 4.0 * PI).abs() < 1e-9);
        let e = prim(Shape::Ellipse {
            center: Point2::default(),
            rx: 5.0,
            ry: 1.0,
            rotation: 0.0,
        });
        // Series-accurate reference value for a = 5, b = 1.
        let h: f64 = ((5.0 - 1.0) / (5.0 + 1.0_f64)).powi(2);
        let ramanujan = PI * 6.0 * (1.0 + 3.0 * h / (10.0 + (4.0 - 3.0 * h).sqrt()));
        assert!((primitive_length(&e) - ramanujan).abs() / ramanujan < 1e-4);
    }

    #[test]
    fn degenerate_primitives_have_zero_length() {
        assert_eq!(primitive_length(&line(1.0, 1.0, 1.0, 1.0)), 0.0);
        let p = Point2::new(2.0, 2.0);
        let c = prim(Shape::CubicPath { segments: vec![[p; 4]] });
        assert_eq!(primitive_length(&c), 0.0);
    }

    #[test]
    fn multi_piece_cubic_is_continuous_at_joins() {
        let a = [
            Point2::new(0.0, 0.0),
            Point2::new(1.0, 2.0),
            Point2::new(2.0, 2.0),
            Point2::new(3.0, 0.0),
        ];
        let b = [a[3], Point2::new(4.0, -2.0), Point2::new(5.0, -2.0), Point2::new(6.0, 0.0)];
        let c = prim(Shape::CubicPath { segments: vec![a, b] });
        let before = path_point(&c, 0.5 - 1e-9).unwrap();
        let after = path_point(&c, 0.5).unwrap();
        assert!(close(before, after, 1e-7));
        assert!(close(path_point(&c, 1.0).unwrap(), Point2::new(6.0, 0.0), 1e-12));
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn coord() -> impl Strategy<Value = f64> {
            -50.0..50.0f64
        }

        fn point() -> impl Strategy<Value = Point2> {
            (coord(), coord()).prop_map(|(x, y)| Point2::new(x, y))
        }

        pub(crate) fn shape() -> impl Strategy<Value = Shape> {
            prop_oneof![
                (point(), point()).prop_map(|(start, end)| Shape::Line { start, end }),
                (point(), 0.1..20.0f64, -6.0..6.0f64, -6.0..6.0f64).prop_map(|(center, radius, s, e)| {
                    Shape::Arc {
                        center,
                        radius,
                        start_angle: s,
                        end_angle: e,
                    }
                }),
                (point(), 0.1..20.0f64).prop_map(|(center, radius)| Shape::Circle { center, radius }),
                (point(), 0.1..20.0f64, 0.1..20.0f64, -3.0..3.0f64).prop_map(|(center, rx, ry, rotation)| {
                    Shape::Ellipse {
                        center,
                        rx,
                        ry,
                        rotation,
                    }
                }),
                prop::collection::vec((point(), point(), point(), point()), 1..4).prop_map(|segs| {
                    // Chain the pieces so the path is continuous.
                    let mut out: Vec<CubicSegment> = Vec::new();
                    for (a, b, c, d) in segs {
                        let start = out.last().map(|s| s[3]).unwrap_or(a);
                        out.push([start, b, c, d]);
                    }
                    Shape::CubicPath { segments: out }
                }),
            ]
        }

        proptest! {
            #[test]
            fn continuity(shape in shape(), t in 0.0..0.999_998f64) {
                let p = prim(shape);
                let len = primitive_length(&p);
                let d = path_point(&p, t).unwrap().distance(path_point(&p, t + 1e-6).unwrap());
                prop_assert!(d <= 1e-3 * len + 1e-12);
            }

            #[test]
            fn length_bounds_chord(shape in shape()) {
                let p = prim(shape);
                let chord = path_point(&p, 0.0).unwrap().distance(path_point(&p, 1.0).unwrap());
                prop_assert!(primitive_length(&p) + 1e-9 >= chord);
            }

            #[test]
            fn dense_polyline_agrees(shape in shape()) {
                let p = prim(shape);
                let len = primitive_length(&p);
                let dense = polyline_length(&p, 10_000);
                prop_assert!((dense - len).abs() <= 1e-3 * len + 1e-12, "dense {} vs {}", dense, len);
            }
        }
    }
}
