//! Minimal neural-network toolkit: parameter store, autograd tape, layers, optimizers.

pub mod layers;
pub mod optim;
pub mod params;
pub mod tape;

pub use layers::{Attention, FeedForward, LayerNorm, Linear};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{Mat, ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
