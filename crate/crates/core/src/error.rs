use thiserror::Error;

use crate::geometry::PrimitiveId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("path parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),

    #[error("value {value} outside [{min}, {max}]")]
    IdOutOfRange { value: i64, min: i64, max: i64 },

    #[error("need at least two sample points, got {0}")]
    TooFewPoints(usize),

    #[error("primitive {0} has no line segments")]
    EmptyPrimitive(PrimitiveId),

    #[error("unknown primitive id {0}")]
    UnknownPrimitive(PrimitiveId),

    #[error("symbols overlap on primitive {0}")]
    OverlappingSymbols(PrimitiveId),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("schema error at {pointer}: {message}")]
    Schema { pointer: String, message: String },

    #[error("malformed {what}: {message}")]
    Decode { what: &'static str, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Schema {
            pointer: pointer.into(),
            message: message.into(),
        }
    }

    pub(crate) fn decode(what: &'static str, message: impl Into<String>) -> Self {
        Error::Decode {
            what,
            message: message.into(),
        }
    }
}
