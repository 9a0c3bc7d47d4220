//! Dense tensors, reverse-mode differentiation, AdamW and the learning-rate
//! schedule.

pub mod ops;
pub mod optim;
pub mod params;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;

pub use ops::AttentionShape;
pub use optim::{AdamWConfig, OptimizerState, Schedule};
pub use params::{ParamId, ParamStore};
pub use rng::{Rng, SeedStream};
pub use scalar::{DType, Scalar};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("{op}: {detail}")]
    Contract { op: &'static str, detail: String },
}

impl NumericsError {
    pub(crate) fn shape(op: &'static str, detail: String) -> Self {
        NumericsError::Shape { op, detail }
    }
}
