//! The dual encoder, its presets, parameter and FLOP accounting, checkpoints.

mod checkpoint;
mod config;
mod encoder;
mod posembed;

pub use checkpoint::{Checkpoint, RunState};
pub use config::{flops_estimate, param_count, EncoderConfig, ModelConfig, Pooling, PRESETS};
pub use encoder::{similarity_logits, DualEncoder};
pub use posembed::{gather_positions, sincos_2d};

use crate::numerics::NumericsError;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("model config: {0}")]
    Config(String),
    #[error("model input: {0}")]
    Input(String),
    #[error("sequence of {tokens} tokens exceeds the tower maximum of {max}")]
    SequenceOverflow { tokens: usize, max: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
