//! Panoptic result JSON: one record per primitive with its symbol assignment
//! and refined semantic label.
//!
//! ```json
//! {"classes": {...},
//!  "primitives": [{"primitive_id": 0, "label": 1, "instance": 0, "semantic_label": 1, "semantic_score": 0.9}]}
//! ```
//!
//! `label` and `instance` are omitted for primitives in no symbol.

use serde::{Deserialize, Serialize};

use super::drawing::ClassesDoc;
use super::{decode_json, to_json_bytes, Strictness};
use crate::bfr::PanopticAssignment;
use crate::decoder::SemanticPrediction;
use crate::error::{Error, Result};
use crate::geometry::{ClassId, ClassTable, PrimitiveId};
use crate::metrics::SymbolSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticRecord {
    pub primitive_id: PrimitiveId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<ClassId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub instance: Option<i64>,
    pub semantic_label: ClassId,
    pub semantic_score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanopticDoc {
    pub classes: ClassesDoc,
    pub primitives: Vec<PanopticRecord>,
}

/// A validated panoptic result.
#[derive(Debug, Clone, PartialEq)]
pub struct PanopticResult {
    pub classes: ClassTable,
    pub ids: Vec<PrimitiveId>,
    pub assignment: PanopticAssignment,
    pub semantic: SemanticPrediction,
}

impl PanopticResult {
    pub fn symbols(&self) -> SymbolSet {
        SymbolSet::from_assignment(&self.assignment, &self.ids)
    }

    /// Foreground semantic label per primitive, `None` for background.
    pub fn semantic_labels(&self) -> Vec<Option<ClassId>> {
        let k = self.classes.count() as ClassId;
        self.semantic.labels.iter().map(|&l| (l <= k).then_some(l)).collect()
    }

    pub fn to_doc(&self) -> PanopticDoc {
        PanopticDoc {
            classes: (&self.classes).into(),
            primitives: self
                .ids
                .iter()
                .enumerate()
                .map(|(i, &primitive_id)| PanopticRecord {
                    primitive_id,
                    label: self.assignment.entries[i].map(|e| e.0),
                    instance: self.assignment.entries[i].map(|e| e.1),
                    semantic_label: self.semantic.labels[i],
                    semantic_score: self.semantic.scores[i],
                })
                .collect(),
        }
    }
}

pub fn parse_panoptic(bytes: &[u8], strictness: Strictness) -> Result<PanopticResult> {
    let doc: PanopticDoc = decode_json(bytes, strictness)?;
    from_doc(&doc)
}

pub fn from_doc(doc: &PanopticDoc) -> Result<PanopticResult> {
    let classes: ClassTable = (&doc.classes).into();
    classes.check()?;
    let k = classes.count() as ClassId;
    let mut seen = std::collections::HashSet::new();
    let n = doc.primitives.len();
    let mut out = PanopticResult {
        classes,
        ids: Vec::with_capacity(n),
        assignment: PanopticAssignment {
            entries: Vec::with_capacity(n),
        },
        semantic: SemanticPrediction {
            labels: Vec::with_capacity(n),
            scores: Vec::with_capacity(n),
        },
    };
    for (i, r) in doc.primitives.iter().enumerate() {
        let at = |f: &str| format!("/primitives/{i}/{f}");
        if !seen.insert(r.primitive_id) {
            return Err(Error::schema(at("primitive_id"), format!("duplicate primitive id {}", r.primitive_id)));
        }
        let entry = match (r.label, r.instance) {
            (None, None) => None,
            (Some(l), Some(z)) => {
                if l == 0 || l > k {
                    return Err(Error::schema(at("label"), format!("label {l} outside 1..={k}")));
                }
                Some((l, z))
            }
            (Some(_), None) => return Err(Error::schema(at("instance"), "label without instance")),
            (None, Some(_)) => return Err(Error::schema(at("label"), "instance without label")),
        };
        if r.semantic_label == 0 || r.semantic_label > k + 1 {
            return Err(Error::schema(at("semantic_label"), format!("label {} outside 1..={}", r.semantic_label, k + 1)));
        }
        if !(0.0..=1.0).contains(&r.semantic_score) {
            return Err(Error::schema(at("semantic_score"), format!("score {} outside [0, 1]", r.semantic_score)));
        }
        out.ids.push(r.primitive_id);
        out.assignment.entries.push(entry);
        out.semantic.labels.push(r.semantic_label);
        out.semantic.scores.push(r.semantic_score);
    }
    Ok(out)
}

pub fn serialize_panoptic(result: &PanopticResult) -> Result<Vec<u8>> {
    to_json_bytes(&result.to_doc())
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{"classes": {"things": [{"id": 1, "name": "door"}], "stuffs": [{"id": 2, "name": "wall"}]},
        "primitives": [
            {"primitive_id": 4, "label": 1, "instance": 0, "semantic_label": 1, "semantic_score": 0.9},
            {"primitive_id": 6, "semantic_label": 3, "semantic_score": 0.1}]}"#;

    #[test]
    fn round_trip() {
        let r = parse_panoptic(DOC.as_bytes(), Strictness::Strict).unwrap();
        assert_eq!(r.assignment.entries, vec![Some((1, 0)), None]);
        assert_eq!(r.semantic_labels(), vec![Some(1), None]);
        assert_eq!(r.symbols().symbols.len(), 1);
        let bytes = serialize_panoptic(&r).unwrap();
        assert_eq!(parse_panoptic(&bytes, Strictness::Strict).unwrap(), r);
    }

    #[test]
    fn half_assignments_rejected() {
        let bad = DOC.replace(r#""label": 1, "instance": 0,"#, r#""label": 1,"#);
        let err = parse_panoptic(bad.as_bytes(), Strictness::Strict).unwrap_err();
        assert!(matches!(err, Error::Schema { ref pointer, .. } if pointer == "/primitives/0/instance"), "{err}");
    }
}
