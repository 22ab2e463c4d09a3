//! SVG rendering: one `<path>` per primitive, colored by class, with instances
//! of the same class separated by hue rotation.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt::Write;

use super::panoptic::PanopticResult;
use crate::geometry::{eval, ClassId, Drawing, Point2, PrimitiveId, Shape};

const UNLABELED: &str = "#c8c8c8";
const MISSING: &str = "#7f7f7f";

#[derive(Debug, Clone, Copy)]
pub enum Coloring<'a> {
    GroundTruth,
    /// Refined semantic labels only.
    Semantic(&'a PanopticResult),
    Panoptic(&'a PanopticResult),
}

impl Coloring<'_> {
    fn name(&self) -> &'static str {
        match self {
            Coloring::GroundTruth => "gt",
            Coloring::Semantic(_) => "semantic-pred",
            Coloring::Panoptic(_) => "panoptic",
        }
    }
}

fn hsl(h: f64, s: f64, l: f64) -> String {
    let c = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let hp = h.rem_euclid(360.0) / 60.0;
    let x = c * (1.0 - (hp % 2.0 - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = l - c / 2.0;
    let to = |v: f64| ((v + m) * 255.0).round().clamp(0.0, 255.0) as u8;
    format!("#{:02x}{:02x}{:02x}", to(r), to(g), to(b))
}

/// Stroke color of class `label`, instance rank `rank` within that class.
pub fn class_color(label: ClassId, rank: usize) -> String {
    let base = (label.saturating_sub(1) as f64 * 67.0) % 360.0;
    hsl(base + rank as f64 * 23.0, 0.7, 0.45)
}

fn num(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

struct Frame {
    x0: f64,
    top: f64,
}

impl Frame {
    fn pt(&self, p: Point2) -> String {
        format!("{} {}", num(p.x - self.x0), num(self.top - p.y))
    }
}

/// SVG path data; `y` is flipped so the drawing's up is the image's up.
fn path_data(shape: &Shape, f: &Frame) -> String {
    let mut d = format!("M {}", f.pt(eval(shape, 0.0)));
    match shape {
        Shape::Line { end, .. } => {
            let _ = write!(d, " L {}", f.pt(*end));
        }
        Shape::Arc {
            radius,
            start_angle,
            end_angle,
            ..
        } => {
            let sweep = end_angle - start_angle;
            let pieces = (sweep.abs() / FRAC_PI_2).ceil().max(1.0) as usize;
            // Increasing angle is counter-clockwise, i.e. clockwise after the flip.
            let flag = if sweep > 0.0 { 0 } else { 1 };
            for k in 1..=pieces {
                let p = eval(shape, k as f64 / pieces as f64);
                let _ = write!(d, " A {r} {r} 0 0 {flag} {}", f.pt(p), r = num(*radius));
            }
        }
        Shape::Circle { radius, .. } => {
            for k in 1..=4 {
                let p = eval(shape, k as f64 / 4.0);
                let _ = write!(d, " A {r} {r} 0 0 0 {}", f.pt(p), r = num(*radius));
            }
            d.push_str(" Z");
        }
        Shape::Ellipse { rx, ry, rotation, .. } => {
            for k in 1..=4 {
                let p = eval(shape, k as f64 / 4.0);
                let _ = write!(
                    d,
                    " A {} {} {} 0 0 {}",
                    num(*rx),
                    num(*ry),
                    num(-rotation * 180.0 / PI),
                    f.pt(p)
                );
            }
            d.push_str(" Z");
        }
        Shape::CubicPath { segments } => {
            for s in segments {
                let _ = write!(d, " C {} {} {}", f.pt(s[1]), f.pt(s[2]), f.pt(s[3]));
            }
        }
    }
    d
}

/// Colors per primitive. Instance ranks follow first appearance in primitive
/// order, so two assignments with the same grouping color identically even
/// when their instance indices differ.
fn colors(drawing: &Drawing, coloring: Coloring<'_>) -> Vec<String> {
    let n = drawing.primitives.len();
    let keys: Vec<Option<Option<(ClassId, i64)>>> = match coloring {
        Coloring::GroundTruth => drawing
            .primitives
            .iter()
            .map(|p| Some(p.gt_label.map(|l| (l, p.gt_instance.unwrap_or(-1)))))
            .collect(),
        Coloring::Semantic(r) | Coloring::Panoptic(r) => {
            let index: HashMap<PrimitiveId, usize> = r.ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
            let semantic = r.semantic_labels();
            drawing
                .primitives
                .iter()
                .map(|p| {
                    index.get(&p.id).map(|&i| match coloring {
                        Coloring::Semantic(_) => semantic[i].map(|l| (l, 0)),
                        _ => r.assignment.entries[i],
                    })
                })
                .collect()
        }
    };
    let missing = keys.iter().filter(|k| k.is_none()).count();
    if missing > 0 {
        log::warn!("{missing} of {n} primitives have no prediction; rendering them gray");
    }
    let mut ranks: HashMap<(ClassId, i64), usize> = HashMap::new();
    let mut per_class: HashMap<ClassId, usize> = HashMap::new();
    keys.into_iter()
        .map(|k| match k {
            None => MISSING.to_string(),
            Some(None) => UNLABELED.to_string(),
            Some(Some((label, z))) => {
                let rank = *ranks.entry((label, z)).or_insert_with(|| {
                    let c = per_class.entry(label).or_default();
                    *c += 1;
                    *c - 1
                });
                class_color(label, rank)
            }
        })
        .collect()
}

pub fn render_svg(drawing: &Drawing, coloring: Coloring<'_>) -> Vec<u8> {
    let (w, h) = (num(drawing.width), num(drawing.height));
    let frame = Frame {
        x0: drawing.origin.x,
        top: drawing.origin.y + drawing.height,
    };
    let stroke = num(drawing.min_extent() * 0.004);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-coloring="{}">"#,
        coloring.name()
    );
    let _ = writeln!(out, r#"<g fill="none" stroke-width="{stroke}" stroke-linecap="round">"#);
    for (p, color) in drawing.primitives.iter().zip(colors(drawing, coloring)) {
        let _ = writeln!(out, r#"<path id="p{}" d="{}" stroke="{color}"/>"#, p.id, path_data(&p.shape, &frame));
    }
    out.push_str("</g>\n</svg>\n");
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bfr::PanopticAssignment;
    use crate::decoder::SemanticPrediction;
    use crate::synth::{generate, SynthConfig};

    fn perfect(d: &Drawing) -> PanopticResult {
        // Instance indices deliberately differ from the ground truth's.
        PanopticResult {
            classes: d.classes.clone(),
            ids: d.primitives.iter().map(|p| p.id).collect(),
            assignment: PanopticAssignment {
                entries: d.primitives.iter().map(|p| p.gt_label.map(|l| (l, p.gt_instance.unwrap_or(-1) * 7 + 3))).collect(),
            },
            semantic: SemanticPrediction {
                labels: d.primitives.iter().map(|p| p.gt_label.unwrap_or(6)).collect(),
                scores: vec![1.0; d.primitives.len()],
            },
        }
    }

    #[test]
    fn empty_drawing_is_bare_canvas() {
        let mut d = generate(&SynthConfig::default()).unwrap().remove(0);
        d.primitives.clear();
        let s = String::from_utf8(render_svg(&d, Coloring::GroundTruth)).unwrap();
        assert!(s.starts_with(r#"<svg xmlns="http://www.w3.org/2000/svg" width="100" height="100""#));
        assert!(!s.contains("<path"));
    }

    #[test]
    fn gt_and_perfect_prediction_differ_only_in_metadata() {
        let d = generate(&SynthConfig { seed: 4, ..SynthConfig::default() }).unwrap().remove(0);
        let gt = String::from_utf8(render_svg(&d, Coloring::GroundTruth)).unwrap();
        let pred = perfect(&d);
        let pan = String::from_utf8(render_svg(&d, Coloring::Panoptic(&pred))).unwrap();
        assert_ne!(gt, pan);
        assert_eq!(gt.replace(r#"data-coloring="gt""#, r#"data-coloring="panoptic""#), pan);
        assert_eq!(gt.matches("<path").count(), d.primitives.len());
        assert_eq!(render_svg(&d, Coloring::GroundTruth), gt.into_bytes());
    }

    #[test]
    fn missing_predictions_are_gray() {
        let d = generate(&SynthConfig::default()).unwrap().remove(0);
        let mut pred = perfect(&d);
        pred.ids[0] = u64::MAX;
        let s = String::from_utf8(render_svg(&d, Coloring::Semantic(&pred))).unwrap();
        assert!(s.contains(MISSING));
    }

    #[test]
    fn colors_distinguish_instances() {
        assert_ne!(class_color(1, 0), class_color(1, 1));
        assert_ne!(class_color(1, 0), class_color(2, 0));
        assert_eq!(hsl(0.0, 1.0, 0.5), "#ff0000");
        assert_eq!(num(-0.00001), "0");
        assert_eq!(num(2.5), "2.5");
    }
}
