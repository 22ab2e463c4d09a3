//! File formats: drawings, predictions, panoptic results, token tensors,
//! weight checkpoints and SVG renders.

pub mod checkpoint;
pub mod drawing;
pub mod panoptic;
pub mod prediction;
pub mod svg;
pub mod tokens;

use serde::de::{DeserializeOwned, Deserializer};
use serde::Serialize;

use crate::error::{Error, Result};

/// How unknown JSON fields are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Strictness {
    #[default]
    Strict,
    /// Unknown fields are logged and skipped.
    Lenient,
}

fn escape(segment: &str) -> String {
    segment.replace('~', "~0").replace('/', "~1")
}

fn ignored_pointer(path: &serde_ignored::Path<'_>, out: &mut String) {
    use serde_ignored::Path;
    match path {
        Path::Root => {}
        Path::Seq { parent, index } => {
            ignored_pointer(parent, out);
            out.push('/');
            out.push_str(&index.to_string());
        }
        Path::Map { parent, key } => {
            ignored_pointer(parent, out);
            out.push('/');
            out.push_str(&escape(key));
        }
        Path::Some { parent } | Path::NewtypeStruct { parent } | Path::NewtypeVariant { parent } => {
            ignored_pointer(parent, out)
        }
    }
}

fn tracked_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{}", escape(key))),
            Segment::Enum { variant } => out.push_str(&format!("/{}", escape(variant))),
            Segment::Unknown => {}
        }
    }
    out
}

fn root(prefix: &str) -> String {
    if prefix.is_empty() {
        "/".into()
    } else {
        prefix.into()
    }
}

/// Deserializes through `de`, turning errors and unknown fields into
/// schema errors whose pointers are prefixed with `prefix`.
pub(crate) fn decode_with<'de, D, T>(de: D, strictness: Strictness, prefix: &str) -> Result<T>
where
    D: Deserializer<'de>,
    T: DeserializeOwned,
{
    let mut unknown = Vec::new();
    let mut on_ignored = |path: serde_ignored::Path<'_>| {
        let mut p = prefix.to_string();
        ignored_pointer(&path, &mut p);
        unknown.push(p);
    };
    let value: T = serde_path_to_error::deserialize(serde_ignored::Deserializer::new(de, &mut on_ignored)).map_err(|e| {
        let pointer = format!("{prefix}{}", tracked_pointer(e.path()));
        Error::schema(root(&pointer), e.into_inner().to_string())
    })?;
    for pointer in unknown {
        match strictness {
            Strictness::Strict => return Err(Error::schema(pointer, "unknown field")),
            Strictness::Lenient => log::warn!("ignoring unknown field at {pointer}"),
        }
    }
    Ok(value)
}

/// Parses a whole JSON document.
pub(crate) fn decode_json<T: DeserializeOwned>(bytes: &[u8], strictness: Strictness) -> Result<T> {
    let mut de = serde_json::Deserializer::from_slice(bytes);
    let value = decode_with(&mut de, strictness, "")?;
    de.end().map_err(|e| Error::schema("/", e.to_string()))?;
    Ok(value)
}

/// Pretty JSON with a trailing newline; key order follows the struct definitions.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::decode("json", e.to_string()))?;
    out.push(b'\n');
    Ok(out)
}

/// Reads a JSON config or report file with strict field checking.
pub fn read_json<T: DeserializeOwned>(path: &std::path::Path) -> Result<T> {
    decode_json(&std::fs::read(path)?, Strictness::Strict)
}

pub fn write_json<T: Serialize>(path: &std::path::Path, value: &T) -> Result<()> {
    std::fs::write(path, to_json_bytes(value)?)?;
    Ok(())
}
