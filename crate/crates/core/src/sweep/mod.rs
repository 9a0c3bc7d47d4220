//! Inverse-scaling sweeps: grids of model x reduction cells, drops against
//! full-token baselines, and the compute ledger.

mod grid;
mod ledger;
mod report;
mod run;

pub use grid::{Cell, DropStage, EvalSpec, StageTemplate, SweepGrid};
pub use ledger::{compute_cost, min_tokens_within_drop, performance_drop, speedup_ratio, CurvePoint, ScheduleStage};
pub use report::{render_svg, Curve, RunRecord, ScalingReport};
pub use run::{resolve_class_names, run_sweep, Manifest, SweepOutcome, DONE, MANIFEST};

use crate::eval::EvalError;
use crate::ingest::IngestError;
use crate::model::ModelError;
use crate::trainer::TrainError;

#[derive(Debug, thiserror::Error)]
pub enum SweepError {
    #[error("sweep grid: {0}")]
    Grid(String),
    #[error("manifest: {0}")]
    Manifest(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
