//! Token files: sampled segments / points as JSON, and line-token tensors as
//! JSON or flat binary.
//!
//! Binary tensor layout (all little-endian):
//!
//! | bytes        | content                                  |
//! |--------------|------------------------------------------|
//! | 4            | magic `VSTK`                             |
//! | 4            | version `u32` = 1                        |
//! | 8            | `N` lines, `u64`                         |
//! | 4 + 4        | coord dim = 3, feat dim = 7, `u32`       |
//! | N × 10 × 8   | per row: coord then feat, `f64`          |
//! | N × 8        | primitive ids, `u64`                     |
//! | N × 8        | layer ids, `i64`                         |

use serde::{Deserialize, Serialize};

use super::{decode_json, to_json_bytes, Strictness};
use crate::error::{Error, Result};
use crate::features::{LineToken, COORD_DIM, FEAT_DIM};
use crate::geometry::{LayerId, Point2, PrimitiveId};
use crate::sampler::{LineSegment, PointToken};

pub const MAGIC: &[u8; 4] = b"VSTK";
pub const VERSION: u32 = 1;
const HEADER: usize = 24;
const ROW: usize = (COORD_DIM + FEAT_DIM) * 8 + 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentRecord {
    pub start: Point2,
    pub end: Point2,
    pub primitive_id: PrimitiveId,
    pub layer: LayerId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointRecord {
    pub position: Point2,
    pub primitive_id: PrimitiveId,
    pub layer: LayerId,
}

/// Output of the `sample` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "snake_case")]
pub enum SampleDoc {
    Line {
        alpha_sample: f64,
        count: usize,
        /// Primitives whose sampling hit the point cap.
        capped: Vec<PrimitiveId>,
        segments: Vec<SegmentRecord>,
    },
    Point {
        alpha_sample: f64,
        count: usize,
        points: Vec<PointRecord>,
    },
}

impl SampleDoc {
    pub fn lines(alpha_sample: f64, segments: &[LineSegment], capped: &[PrimitiveId]) -> Self {
        SampleDoc::Line {
            alpha_sample,
            count: segments.len(),
            capped: capped.to_vec(),
            segments: segments
                .iter()
                .map(|s| SegmentRecord {
                    start: s.start,
                    end: s.end,
                    primitive_id: s.primitive_id,
                    layer: s.layer,
                })
                .collect(),
        }
    }

    pub fn points(alpha_sample: f64, points: &[PointToken]) -> Self {
        SampleDoc::Point {
            alpha_sample,
            count: points.len(),
            points: points
                .iter()
                .map(|p| PointRecord {
                    position: p.position,
                    primitive_id: p.primitive_id,
                    layer: p.layer,
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenRecord {
    pub coord: [f64; COORD_DIM],
    pub feat: [f64; FEAT_DIM],
    pub primitive_id: PrimitiveId,
    pub layer: LayerId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenDoc {
    pub n_lines: usize,
    pub coord_dim: usize,
    pub feat_dim: usize,
    pub tokens: Vec<TokenRecord>,
}

pub fn tokens_to_json(tokens: &[LineToken]) -> Result<Vec<u8>> {
    to_json_bytes(&TokenDoc {
        n_lines: tokens.len(),
        coord_dim: COORD_DIM,
        feat_dim: FEAT_DIM,
        tokens: tokens
            .iter()
            .map(|t| TokenRecord {
                coord: t.coord,
                feat: t.feat,
                primitive_id: t.primitive_id,
                layer: t.layer,
            })
            .collect(),
    })
}

pub fn tokens_from_json(bytes: &[u8], strictness: Strictness) -> Result<Vec<LineToken>> {
    let doc: TokenDoc = decode_json(bytes, strictness)?;
    if doc.coord_dim != COORD_DIM || doc.feat_dim != FEAT_DIM {
        return Err(Error::schema("/coord_dim", format!("expected dims {COORD_DIM} and {FEAT_DIM}")));
    }
    if doc.n_lines != doc.tokens.len() {
        return Err(Error::schema("/n_lines", format!("n_lines {} but {} tokens", doc.n_lines, doc.tokens.len())));
    }
    Ok(doc
        .tokens
        .into_iter()
        .map(|t| LineToken {
            coord: t.coord,
            feat: t.feat,
            primitive_id: t.primitive_id,
            layer: t.layer,
        })
        .collect())
}

pub fn tokens_to_binary(tokens: &[LineToken]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER + tokens.len() * ROW);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(tokens.len() as u64).to_le_bytes());
    out.extend_from_slice(&(COORD_DIM as u32).to_le_bytes());
    out.extend_from_slice(&(FEAT_DIM as u32).to_le_bytes());
    for t in tokens {
        for v in t.coord.iter().chain(&t.feat) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for t in tokens {
        out.extend_from_slice(&t.primitive_id.to_le_bytes());
    }
    for t in tokens {
        out.extend_from_slice(&t.layer.to_le_bytes());
    }
    out
}

fn word<const N: usize>(bytes: &[u8], at: usize) -> [u8; N] {
    bytes[at..at + N].try_into().expect("length checked by caller")
}

pub fn tokens_from_binary(bytes: &[u8]) -> Result<Vec<LineToken>> {
    if bytes.len() < HEADER {
        return Err(Error::decode("token tensor", format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::decode("token tensor", "bad magic"));
    }
    let version = u32::from_le_bytes(word(bytes, 4));
    if version != VERSION {
        return Err(Error::decode("token tensor", format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(word(bytes, 8));
    let dims = (u32::from_le_bytes(word(bytes, 16)), u32::from_le_bytes(word(bytes, 20)));
    if dims != (COORD_DIM as u32, FEAT_DIM as u32) {
        return Err(Error::decode("token tensor", format!("expected dims (3, 7), got {dims:?}")));
    }
    let expected = usize::try_from(n)
        .ok()
        .and_then(|n| n.checked_mul(ROW))
        .and_then(|b| b.checked_add(HEADER));
    if expected != Some(bytes.len()) {
        return Err(Error::decode("token tensor", format!("{} bytes does not match N = {n}", bytes.len())));
    }
    let n = n as usize;
    let ids_at = HEADER + n * (COORD_DIM + FEAT_DIM) * 8;
    let layers_at = ids_at + n * 8;
    Ok((0..n)
        .map(|i| {
            let row = HEADER + i * (COORD_DIM + FEAT_DIM) * 8;
            let f = |k: usize| f64::from_le_bytes(word(bytes, row + k * 8));
            LineToken {
                coord: std::array::from_fn(f),
                feat: std::array::from_fn(|k| f(COORD_DIM + k)),
                primitive_id: u64::from_le_bytes(word(bytes, ids_at + i * 8)),
                layer: i64::from_le_bytes(word(bytes, layers_at + i * 8)),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tokens() -> Vec<LineToken> {
        (0..3)
            .map(|i| LineToken {
                coord: [0.1 * i as f64, -0.2, 0.5],
                feat: [0.3, 1.0, 0.0, 0.1, -0.2, 0.0, 1.0 / 3.0],
                primitive_id: 10 + i,
                layer: -(i as i64),
            })
            .collect()
    }

    #[test]
    fn binary_round_trip() {
        let b = tokens_to_binary(&tokens());
        assert_eq!(b.len(), HEADER + 3 * ROW);
        assert_eq!(tokens_from_binary(&b).unwrap(), tokens());
        assert!(tokens_from_binary(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(tokens_from_binary(&bad).is_err());
        let mut huge = b[..HEADER].to_vec();
        huge[8..16].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(tokens_from_binary(&huge).is_err());
    }

    #[test]
    fn json_round_trip() {
        let j = tokens_to_json(&tokens()).unwrap();
        assert_eq!(tokens_from_json(&j, Strictness::Strict).unwrap(), tokens());
    }

    #[test]
    fn empty_tensor() {
        let b = tokens_to_binary(&[]);
        assert!(tokens_from_binary(&b).unwrap().is_empty());
    }
}
