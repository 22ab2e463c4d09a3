//! Weight checkpoints: a JSON manifest plus a flat little-endian `f64` blob.
//!
//! Tensors are stored back to back in registration order; each manifest entry
//! records its name, `[rows, cols]` shape and byte offset into the blob.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{decode_json, to_json_bytes, Strictness};
use crate::error::{Error, Result};
use crate::nn::{Mat, ParamStore};

pub const FORMAT: &str = "vecspot-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    /// File name of the blob, relative to the manifest.
    pub blob: String,
    #[serde(default)]
    pub metadata: Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub metadata: Value,
    pub tensors: Vec<(String, Mat)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, metadata: Value) -> Self {
        Self {
            metadata,
            tensors: store.iter().map(|(n, m)| (n.to_string(), m.clone())).collect(),
        }
    }

    /// Copies the tensors into `store`, which must have exactly the same
    /// names and shapes in the same order.
    pub fn load_into(&self, store: &mut ParamStore) -> Result<()> {
        if self.tensors.len() != store.len() {
            return Err(Error::LengthMismatch {
                left: self.tensors.len(),
                right: store.len(),
            });
        }
        let ids: Vec<_> = store.ids().collect();
        for ((name, value), id) in self.tensors.iter().zip(ids) {
            if store.name(id) != name || store.value(id).dim() != value.dim() {
                return Err(Error::decode(
                    "checkpoint",
                    format!(
                        "tensor {name} {:?} does not match model tensor {} {:?}",
                        value.dim(),
                        store.name(id),
                        store.value(id).dim()
                    ),
                ));
            }
            store.value_mut(id).assign(value);
        }
        Ok(())
    }
}

pub fn encode(ckpt: &Checkpoint, blob_name: &str) -> Result<(Vec<u8>, Vec<u8>)> {
    let mut blob = Vec::new();
    let mut tensors = Vec::with_capacity(ckpt.tensors.len());
    for (name, m) in &ckpt.tensors {
        tensors.push(TensorEntry {
            name: name.clone(),
            shape: [m.nrows(), m.ncols()],
            offset: blob.len() as u64,
        });
        for v in m.iter() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
    }
    let manifest = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        blob: blob_name.into(),
        metadata: ckpt.metadata.clone(),
        tensors,
    };
    Ok((to_json_bytes(&manifest)?, blob))
}

pub fn parse_manifest(bytes: &[u8]) -> Result<Manifest> {
    let m: Manifest = decode_json(bytes, Strictness::Strict)?;
    if m.format != FORMAT {
        return Err(Error::schema("/format", format!("expected {FORMAT:?}, got {:?}", m.format)));
    }
    if m.version != VERSION {
        return Err(Error::schema("/version", format!("unsupported version {}", m.version)));
    }
    Ok(m)
}

pub fn decode(manifest: &[u8], blob: &[u8]) -> Result<Checkpoint> {
    let m = parse_manifest(manifest)?;
    let mut expected = 0u64;
    let mut tensors = Vec::with_capacity(m.tensors.len());
    for (i, t) in m.tensors.iter().enumerate() {
        if t.offset != expected {
            return Err(Error::schema(
                format!("/tensors/{i}/offset"),
                format!("expected offset {expected}, got {}", t.offset),
            ));
        }
        let count = t.shape[0].checked_mul(t.shape[1]);
        let bytes = count.and_then(|c| c.checked_mul(8)).map(|b| b as u64);
        let end = bytes.and_then(|b| expected.checked_add(b));
        let end = match end {
            Some(e) if e <= blob.len() as u64 => e,
            _ => {
                return Err(Error::decode(
                    "checkpoint",
                    format!("tensor {} of shape {:?} runs past the {}-byte blob", t.name, t.shape, blob.len()),
                ))
            }
        };
        let data: Vec<f64> = blob[expected as usize..end as usize]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        let mat = Mat::from_shape_vec((t.shape[0], t.shape[1]), data).map_err(|e| Error::decode("checkpoint", e.to_string()))?;
        tensors.push((t.name.clone(), mat));
        expected = end;
    }
    if expected != blob.len() as u64 {
        return Err(Error::decode(
            "checkpoint",
            format!("blob has {} trailing bytes", blob.len() as u64 - expected),
        ));
    }
    Ok(Checkpoint {
        metadata: m.metadata,
        tensors,
    })
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Writes `<path>` (manifest) and `<path>.bin` beside it.
pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let blob_file = blob_path(path);
    let name = blob_file
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "weights.bin".into());
    let (manifest, blob) = encode(ckpt, &name)?;
    std::fs::write(&blob_file, blob)?;
    std::fs::write(path, manifest)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let manifest = std::fs::read(path)?;
    let m = parse_manifest(&manifest)?;
    let blob_file = path.parent().unwrap_or(Path::new(".")).join(&m.blob);
    decode(&manifest, &std::fs::read(blob_file)?)
}
