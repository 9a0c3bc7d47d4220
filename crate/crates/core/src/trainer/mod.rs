//! Two-stage contrastive training: reduced-token pre-training followed by
//! full-token fine-tuning.

mod config;
mod run;
mod stage;
mod step;

pub use config::{default_finetune_lr, ModelSelect, StageConfig, StageKind, StageSpec, TrainConfig};
pub use run::{run_training, TrainOutcome};
pub use stage::{run_stage, DataSource, MetricLog};
pub use step::{batch_seed, train_step, BatchPrep, PreparedBatch, StepMetrics, TrainState};

use crate::imagepipe::ImageError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::numerics::NumericsError;
use crate::textpipe::TextError;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("training config: {0}")]
    Config(String),
    #[error("non-finite loss {loss} at step {step} (batch seed {batch_seed:#018x})")]
    NonFinite { step: u64, batch_seed: u64, loss: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Text(#[from] TextError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
