//! Prediction JSON, the contract between a model and refinement/evaluation:
//!
//! ```json
//! {"semantic": [{"primitive_id": 0, "label": 1, "score": 0.9}],
//!  "instances": [{"label": 1, "score": 0.8, "primitive_ids": [0]}]}
//! ```
//!
//! An optional `classes` table may be embedded so the file is self-contained.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::drawing::ClassesDoc;
use super::{decode_json, to_json_bytes, Strictness};
use crate::decoder::{InstanceProposal, SemanticPrediction};
use crate::error::{Error, Result};
use crate::geometry::{ClassId, ClassTable, PrimitiveId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticRecord {
    pub primitive_id: PrimitiveId,
    pub label: ClassId,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub label: ClassId,
    pub score: f64,
    pub primitive_ids: Vec<PrimitiveId>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PredictionDoc {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<ClassesDoc>,
    pub semantic: Vec<SemanticRecord>,
    pub instances: Vec<InstanceRecord>,
}

/// Predictions resolved against a primitive order.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    pub ids: Vec<PrimitiveId>,
    pub semantic: SemanticPrediction,
    pub proposals: Vec<InstanceProposal>,
}

pub fn parse_predictions(bytes: &[u8], strictness: Strictness) -> Result<PredictionDoc> {
    decode_json(bytes, strictness)
}

pub fn serialize_predictions(doc: &PredictionDoc) -> Result<Vec<u8>> {
    to_json_bytes(doc)
}

fn check_score(score: f64, pointer: String) -> Result<()> {
    if (0.0..=1.0).contains(&score) {
        Ok(())
    } else {
        Err(Error::schema(pointer, format!("score {score} outside [0, 1]")))
    }
}

impl PredictionDoc {
    pub fn from_predictions(p: &Predictions, classes: Option<&ClassTable>) -> Self {
        Self {
            classes: classes.map(Into::into),
            semantic: p
                .ids
                .iter()
                .zip(p.semantic.labels.iter().zip(&p.semantic.scores))
                .map(|(&primitive_id, (&label, &score))| SemanticRecord {
                    primitive_id,
                    label,
                    score,
                })
                .collect(),
            instances: p
                .proposals
                .iter()
                .map(|q| InstanceRecord {
                    label: q.label,
                    score: q.score,
                    primitive_ids: q.members().map(|i| p.ids[i]).collect(),
                })
                .collect(),
        }
    }

    pub fn class_table(&self) -> Option<ClassTable> {
        self.classes.as_ref().map(Into::into)
    }

    /// Resolves ids to positions. Without an explicit universe, the primitive
    /// order is the order of the semantic records. Primitives missing from the
    /// semantic list become background with score 0.
    pub fn resolve(&self, universe: Option<&[PrimitiveId]>, class_count: usize) -> Result<Predictions> {
        let background = class_count as ClassId + 1;
        let ids: Vec<PrimitiveId> = match universe {
            Some(u) => u.to_vec(),
            None => self.semantic.iter().map(|r| r.primitive_id).collect(),
        };
        let mut index = HashMap::with_capacity(ids.len());
        for (i, &id) in ids.iter().enumerate() {
            if index.insert(id, i).is_some() {
                return Err(Error::schema(format!("/semantic/{i}/primitive_id"), format!("duplicate primitive id {id}")));
            }
        }
        let n = ids.len();
        let mut semantic = SemanticPrediction {
            labels: vec![background; n],
            scores: vec![0.0; n],
        };
        let mut seen = vec![false; n];
        for (r, rec) in self.semantic.iter().enumerate() {
            let &i = index
                .get(&rec.primitive_id)
                .ok_or_else(|| Error::schema(format!("/semantic/{r}/primitive_id"), format!("unknown primitive id {}", rec.primitive_id)))?;
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::schema(
                    format!("/semantic/{r}/primitive_id"),
                    format!("duplicate primitive id {}", rec.primitive_id),
                ));
            }
            if rec.label == 0 || rec.label > background {
                return Err(Error::schema(format!("/semantic/{r}/label"), format!("label {} outside 1..={background}", rec.label)));
            }
            check_score(rec.score, format!("/semantic/{r}/score"))?;
            semantic.labels[i] = rec.label;
            semantic.scores[i] = rec.score;
        }
        let missing = seen.iter().filter(|s| !**s).count();
        if missing > 0 {
            log::warn!("{missing} primitives have no semantic prediction; treating them as background");
        }
        let mut proposals = Vec::with_capacity(self.instances.len());
        for (r, rec) in self.instances.iter().enumerate() {
            if rec.label == 0 || rec.label as usize > class_count {
                return Err(Error::schema(format!("/instances/{r}/label"), format!("label {} outside 1..={class_count}", rec.label)));
            }
            check_score(rec.score, format!("/instances/{r}/score"))?;
            let mut mask = vec![false; n];
            for (m, id) in rec.primitive_ids.iter().enumerate() {
                let &i = index
                    .get(id)
                    .ok_or_else(|| Error::schema(format!("/instances/{r}/primitive_ids/{m}"), format!("unknown primitive id {id}")))?;
                mask[i] = true;
            }
            proposals.push(InstanceProposal {
                label: rec.label,
                score: rec.score,
                mask,
                logits: None,
            });
        }
        Ok(Predictions { ids, semantic, proposals })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOC: &str = r#"{"semantic": [{"primitive_id": 5, "label": 1, "score": 0.6},
                                       {"primitive_id": 9, "label": 3, "score": 0.2}],
                         "instances": [{"label": 2, "score": 0.7, "primitive_ids": [9]}]}"#;

    #[test]
    fn resolves_in_semantic_order() {
        let doc = parse_predictions(DOC.as_bytes(), Strictness::Strict).unwrap();
        let p = doc.resolve(None, 2).unwrap();
        assert_eq!(p.ids, vec![5, 9]);
        assert_eq!(p.semantic.labels, vec![1, 3]);
        assert_eq!(p.proposals[0].mask, vec![false, true]);
        let back = PredictionDoc::from_predictions(&p, None);
        assert_eq!(back, doc);
    }

    #[test]
    fn universe_fills_background() {
        let doc = parse_predictions(DOC.as_bytes(), Strictness::Strict).unwrap();
        let p = doc.resolve(Some(&[1, 5, 9]), 2).unwrap();
        assert_eq!(p.semantic.labels, vec![3, 1, 3]);
        assert_eq!(p.semantic.scores[0], 0.0);
    }

    #[test]
    fn rejects_bad_records() {
        let doc = parse_predictions(DOC.as_bytes(), Strictness::Strict).unwrap();
        let err = doc.resolve(Some(&[5]), 2).unwrap_err();
        assert!(matches!(err, Error::Schema { ref pointer, .. } if pointer == "/semantic/1/primitive_id"), "{err}");
        let err = doc.resolve(None, 1).unwrap_err();
        assert!(err.to_string().contains("label"), "{err}");
        let bad = DOC.replace("0.7", "1.5");
        let doc = parse_predictions(bad.as_bytes(), Strictness::Strict).unwrap();
        assert!(doc.resolve(None, 2).is_err());
    }
}
