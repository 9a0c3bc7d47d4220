//! Contrastive image-text training with reduced token lengths.

pub mod numerics;
pub mod ingest;
pub mod imagepipe;
pub mod textpipe;
pub mod model;
pub mod trainer;
pub mod eval;
pub mod sweep;
