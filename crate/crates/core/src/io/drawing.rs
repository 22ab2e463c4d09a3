//! Drawing JSON:
//!
//! ```json
//! {"origin": {"x": 0, "y": 0}, "width": 100, "height": 100,
//!  "classes": {"things": [{"id": 1, "name": "door"}], "stuffs": [{"id": 2, "name": "wall"}]},
//!  "layers": [{"id": 1, "name": "DOOR"}],
//!  "primitives": [{"id": 0, "layer": 1, "kind": "line",
//!                  "params": {"start": {"x": 0, "y": 0}, "end": {"x": 1, "y": 0}},
//!                  "gt_label": 1, "gt_instance": 1}]}
//! ```

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{decode_json, decode_with, to_json_bytes, Strictness};
use crate::error::{Error, Result};
use crate::geometry::{ClassId, ClassInfo, ClassTable, Drawing, Layer, LayerId, Point2, Primitive, PrimitiveId, Shape, ShapeKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassDoc {
    pub id: ClassId,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassesDoc {
    pub things: Vec<ClassDoc>,
    pub stuffs: Vec<ClassDoc>,
}

impl From<&ClassTable> for ClassesDoc {
    fn from(t: &ClassTable) -> Self {
        let conv = |v: &[ClassInfo]| {
            v.iter()
                .map(|c| ClassDoc {
                    id: c.id,
                    name: c.name.clone(),
                })
                .collect()
        };
        Self {
            things: conv(&t.things),
            stuffs: conv(&t.stuffs),
        }
    }
}

impl From<&ClassesDoc> for ClassTable {
    fn from(d: &ClassesDoc) -> Self {
        let conv = |v: &[ClassDoc]| {
            v.iter()
                .map(|c| ClassInfo {
                    id: c.id,
                    name: c.name.clone(),
                })
                .collect()
        };
        Self {
            things: conv(&d.things),
            stuffs: conv(&d.stuffs),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct LayerDoc {
    id: LayerId,
    name: String,
}

#[derive(Debug, Serialize, Deserialize)]
struct PrimitiveDoc {
    id: PrimitiveId,
    layer: LayerId,
    kind: String,
    params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_label: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gt_instance: Option<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DrawingDoc {
    origin: Point2,
    width: f64,
    height: f64,
    classes: ClassesDoc,
    #[serde(default)]
    layers: Vec<LayerDoc>,
    primitives: Vec<PrimitiveDoc>,
}

#[derive(Serialize, Deserialize)]
struct LineParams {
    start: Point2,
    end: Point2,
}

#[derive(Serialize, Deserialize)]
struct ArcParams {
    center: Point2,
    radius: f64,
    start_angle: f64,
    end_angle: f64,
}

#[derive(Serialize, Deserialize)]
struct CircleParams {
    center: Point2,
    radius: f64,
}

#[derive(Serialize, Deserialize)]
struct EllipseParams {
    center: Point2,
    rx: f64,
    ry: f64,
    rotation: f64,
}

#[derive(Serialize, Deserialize)]
struct CubicParams {
    segments: Vec<[Point2; 4]>,
}

fn decode_shape(kind: ShapeKind, params: Value, strictness: Strictness, prefix: &str) -> Result<Shape> {
    Ok(match kind {
        ShapeKind::Line => {
            let p: LineParams = decode_with(params, strictness, prefix)?;
            Shape::Line { start: p.start, end: p.end }
        }
        ShapeKind::Arc => {
            let p: ArcParams = decode_with(params, strictness, prefix)?;
            Shape::Arc {
                center: p.center,
                radius: p.radius,
                start_angle: p.start_angle,
                end_angle: p.end_angle,
            }
        }
        ShapeKind::Circle => {
            let p: CircleParams = decode_with(params, strictness, prefix)?;
            Shape::Circle {
                center: p.center,
                radius: p.radius,
            }
        }
        ShapeKind::Ellipse => {
            let p: EllipseParams = decode_with(params, strictness, prefix)?;
            Shape::Ellipse {
                center: p.center,
                rx: p.rx,
                ry: p.ry,
                rotation: p.rotation,
            }
        }
        ShapeKind::CubicPath => {
            let p: CubicParams = decode_with(params, strictness, prefix)?;
            Shape::CubicPath { segments: p.segments }
        }
    })
}

fn encode_shape(shape: &Shape) -> Value {
    let v = match shape {
        Shape::Line { start, end } => serde_json::to_value(LineParams { start: *start, end: *end }),
        Shape::Arc {
            center,
            radius,
            start_angle,
            end_angle,
        } => serde_json::to_value(ArcParams {
            center: *center,
            radius: *radius,
            start_angle: *start_angle,
            end_angle: *end_angle,
        }),
        Shape::Circle { center, radius } => serde_json::to_value(CircleParams {
            center: *center,
            radius: *radius,
        }),
        Shape::Ellipse { center, rx, ry, rotation } => serde_json::to_value(EllipseParams {
            center: *center,
            rx: *rx,
            ry: *ry,
            rotation: *rotation,
        }),
        Shape::CubicPath { segments } => serde_json::to_value(CubicParams {
            segments: segments.clone(),
        }),
    };
    // Serializing plain structs of finite floats cannot fail; non-finite
    // values become null and are rejected on the way back in.
    v.unwrap_or(Value::Null)
}

/// Parses and validates a drawing.
pub fn parse_drawing(bytes: &[u8], strictness: Strictness) -> Result<Drawing> {
    let doc: DrawingDoc = decode_json(bytes, strictness)?;
    let mut primitives = Vec::with_capacity(doc.primitives.len());
    for (i, p) in doc.primitives.into_iter().enumerate() {
        let kind = ShapeKind::parse(&p.kind)
            .ok_or_else(|| Error::schema(format!("/primitives/{i}/kind"), format!("unknown primitive kind {:?}", p.kind)))?;
        let shape = decode_shape(kind, p.params, strictness, &format!("/primitives/{i}/params"))?;
        primitives.push(Primitive {
            id: p.id,
            layer: p.layer,
            shape,
            gt_label: p.gt_label,
            gt_instance: p.gt_instance,
        });
    }
    let drawing = Drawing {
        origin: doc.origin,
        width: doc.width,
        height: doc.height,
        classes: (&doc.classes).into(),
        layers: doc.layers.into_iter().map(|l| Layer { id: l.id, name: l.name }).collect(),
        primitives,
    };
    drawing.validate()?;
    Ok(drawing)
}

pub fn serialize_drawing(drawing: &Drawing) -> Result<Vec<u8>> {
    let doc = DrawingDoc {
        origin: drawing.origin,
        width: drawing.width,
        height: drawing.height,
        classes: (&drawing.classes).into(),
        layers: drawing
            .layers
            .iter()
            .map(|l| LayerDoc {
                id: l.id,
                name: l.name.clone(),
            })
            .collect(),
        primitives: drawing
            .primitives
            .iter()
            .map(|p| PrimitiveDoc {
                id: p.id,
                layer: p.layer,
                kind: p.shape.kind().as_str().into(),
                params: encode_shape(&p.shape),
                gt_label: p.gt_label,
                gt_instance: p.gt_instance,
            })
            .collect(),
    };
    to_json_bytes(&doc)
}

pub fn read_drawing(path: &std::path::Path, strictness: Strictness) -> Result<Drawing> {
    parse_drawing(&std::fs::read(path)?, strictness)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "origin": {"x": 0, "y": 0}, "width": 10, "height": 5,
        "classes": {"things": [{"id": 1, "name": "door"}], "stuffs": [{"id": 2, "name": "wall"}]},
        "layers": [{"id": 7, "name": "0"}],
        "primitives": [{"id": 3, "layer": 7, "kind": "line",
                        "params": {"start": {"x": 0, "y": 0}, "end": {"x": 4, "y": 3}}}]
    }"#;

    fn pointer(e: Error) -> String {
        match e {
            Error::Schema { pointer, .. } => pointer,
            e => panic!("expected schema error, got {e}"),
        }
    }

    #[test]
    fn minimal_file() {
        let d = parse_drawing(MINIMAL.as_bytes(), Strictness::Strict).unwrap();
        assert_eq!(d.primitives.len(), 1);
        assert_eq!(d.primitives[0].shape, Shape::Line {
            start: Point2::new(0.0, 0.0),
            end: Point2::new(4.0, 3.0)
        });
    }

    #[test]
    fn duplicate_id_is_named() {
        let doc = MINIMAL.replace(
            r#"{"id": 3, "layer": 7, "kind": "line","#,
            r#"{"id": 3, "layer": 7, "kind": "circle", "params": {"center": {"x": 1, "y": 1}, "radius": 1}}, {"id": 3, "layer": 7, "kind": "line","#,
        );
        let err = parse_drawing(doc.as_bytes(), Strictness::Strict).unwrap_err();
        assert!(err.to_string().contains("duplicate primitive id 3"), "{err}");
        assert_eq!(pointer(err), "/primitives/1/id");
    }

    #[test]
    fn unknown_param_field_strict_vs_lenient() {
        let doc = MINIMAL.replace(r#""end": {"x": 4, "y": 3}"#, r#""end": {"x": 4, "y": 3}, "bulge": 1"#);
        let err = parse_drawing(doc.as_bytes(), Strictness::Strict).unwrap_err();
        assert_eq!(pointer(err), "/primitives/0/params/bulge");
        assert!(parse_drawing(doc.as_bytes(), Strictness::Lenient).is_ok());
    }

    #[test]
    fn structural_errors_have_pointers() {
        let doc = MINIMAL.replace(r#""kind": "line""#, r#""kind": "spline""#);
        assert_eq!(pointer(parse_drawing(doc.as_bytes(), Strictness::Strict).unwrap_err()), "/primitives/0/kind");
        let doc = MINIMAL.replace(r#""x": 4,"#, r#""x": "4","#);
        assert_eq!(
            pointer(parse_drawing(doc.as_bytes(), Strictness::Strict).unwrap_err()),
            "/primitives/0/params/end/x"
        );
        let doc = MINIMAL.replace(r#""layer": 7"#, r#""layer": 8"#);
        assert_eq!(pointer(parse_drawing(doc.as_bytes(), Strictness::Strict).unwrap_err()), "/primitives/0/layer");
        assert!(parse_drawing(b"not json", Strictness::Strict).is_err());
    }

    #[test]
    fn round_trip_all_kinds() {
        let mut d = parse_drawing(MINIMAL.as_bytes(), Strictness::Strict).unwrap();
        let c = Point2::new(0.1 + 0.2, 1.0 / 3.0);
        d.primitives.extend([
            Primitive::new(10, 7, Shape::Arc {
                center: c,
                radius: 2.5,
                start_angle: 0.3,
                end_angle: -1.7,
            })
            .with_gt(1, 4),
            Primitive::new(11, 7, Shape::Circle { center: c, radius: 1e-3 }),
            Primitive::new(12, 7, Shape::Ellipse {
                center: c,
                rx: 3.0,
                ry: 1.0,
                rotation: 0.7,
            }),
            Primitive::new(13, 7, Shape::CubicPath {
                segments: vec![[c, Point2::new(1.0, 2.0), Point2::new(3.0, -1.0), Point2::new(4.0, 0.0)]; 2],
            }),
        ]);
        let bytes = serialize_drawing(&d).unwrap();
        assert_eq!(parse_drawing(&bytes, Strictness::Strict).unwrap(), d);
        assert_eq!(serialize_drawing(&parse_drawing(&bytes, Strictness::Strict).unwrap()).unwrap(), bytes);
    }
}
