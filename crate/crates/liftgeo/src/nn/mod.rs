//! Minimal reverse-mode-differentiable neural-network core: dense layers,
//! residual blocks, batch normalization, Adam, and binary checkpoints.
//!
//! Everything computes in `f64`. Checkpoints store `f32` values.

pub mod adam;
pub mod checkpoint;
pub mod layers;
pub mod tape;
pub mod tensor;

pub use adam::{AdamHyper, AdamState};
pub use checkpoint::{Checkpoint, CheckpointError};
pub use layers::{Activation, BatchNorm, DenseLayer, Mode, ResidualBlock, ResidualMlp, StagedMlp};
pub use tape::{Tape, Var};
pub use tensor::Tensor2;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("{context}: expected shape {expected:?}, got {got:?}")]
    ShapeMismatch {
        context: &'static str,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("batch norm requires batch >= 2 in train mode, got {batch}")]
    BatchTooSmall { batch: usize },
    #[error("no backward pass has been recorded on this tape")]
    GraphNotRecorded,
}
