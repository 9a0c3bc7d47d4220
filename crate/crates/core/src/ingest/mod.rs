//! Image-caption shards, the synthetic pair generator and batch iteration.

pub mod batches;
pub mod shard;
pub mod synth;

pub use batches::{Batch, BatchIterator, Prefetch};
pub use shard::{sha256_hex, PairRecord, RgbImage, Shard, ShardHeader};
pub use synth::{synth_generate, ShapeKind, SynthConfig};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad shard header: {0}")]
    BadHeader(String),
    #[error("truncated shard: expected {expected} records, found {actual} complete")]
    Truncated { expected: usize, actual: usize },
    #[error("shard declares {declared} records but has {trailing_bytes} trailing bytes")]
    CountMismatch { declared: usize, trailing_bytes: usize },
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("config: {0}")]
    Config(String),
}

impl PartialEq for IngestError {
    fn eq(&self, other: &Self) -> bool {
        use IngestError::*;
        match (self, other) {
            (Io(a), Io(b)) => a.kind() == b.kind(),
            (BadHeader(a), BadHeader(b)) | (InvalidRecord(a), InvalidRecord(b)) | (Config(a), Config(b)) => a == b,
            (Truncated { expected: a, actual: b }, Truncated { expected: c, actual: d }) => a == c && b == d,
            (
                CountMismatch { declared: a, trailing_bytes: b },
                CountMismatch { declared: c, trailing_bytes: d },
            ) => a == c && b == d,
            _ => false,
        }
    }
}
