//! Layers used by the agent network, the optimizer and checkpoint files.

mod batchnorm;
pub mod checkpoint;
mod embedding;
mod gru;
mod linear;
mod rmsprop;

pub use batchnorm::{BatchNorm, BatchStats, NormMode};
pub use checkpoint::Checkpoint;
pub use embedding::Embedding;
pub use gru::GruCell;
pub use linear::Linear;
pub use rmsprop::{RmsProp, RmsPropConfig};

/// Fan-in scaled uniform bound for dense weights.
pub(crate) fn fan_in_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in.max(1) as f64).sqrt()
}
