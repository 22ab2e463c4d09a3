//! Panoptic symbol spotting for vector CAD drawings.
//!
//! Drawings are tokenized into line segments ([`sampler`]), turned into
//! normalized line features ([`features`]), encoded and pooled to primitives
//! ([`encoder`]), decoded into instance and semantic predictions
//! ([`decoder`]), reconciled by branch fusion refinement ([`bfr`]) and scored
//! with length-weighted panoptic quality ([`metrics`]).

pub mod bfr;
pub mod config;
pub mod decoder;
pub mod encoder;
pub mod error;
pub mod features;
pub mod geometry;
pub mod io;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod sampler;
pub mod synth;
pub mod train;

pub use error::{Error, Result};

/// Deterministic generator used for every seeded component.
pub fn seeded_rng(seed: u64) -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
