use std::fs::File;
use std::path::Path;
use std::sync::mpsc::{self, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use super::config::StageSpec;
use super::step::{train_step, BatchPrep, PreparedBatch, StepMetrics, TrainState};
use super::TrainError;
use crate::ingest::{BatchIterator, Prefetch, Shard};
use crate::numerics::{Schedule, SeedStream};
use crate::imagepipe::AugmentConfig;
use crate::textpipe::Tokenizer;

/// Metric rows go through a bounded channel to a writer thread, so a slow
/// disk never stalls the training loop by more than the channel depth.
pub struct MetricLog {
    tx: Option<SyncSender<StepMetrics>>,
    handle: Option<JoinHandle<Result<Vec<StepMetrics>, TrainError>>>,
}

impl MetricLog {
    /// Starts the writer; with a path, rows are also written as CSV.
    pub fn spawn(path: Option<&Path>) -> Result<Self, TrainError> {
        let mut writer = match path {
            Some(p) => Some(csv::Writer::from_writer(File::create(p)?)),
            None => None,
        };
        let (tx, rx) = mpsc::sync_channel::<StepMetrics>(256);
        let handle = thread::spawn(move || {
            let mut rows = Vec::new();
            for m in rx {
                if let Some(w) = writer.as_mut() {
                    w.serialize(m)?;
                }
                rows.push(m);
            }
            if let Some(w) = writer.as_mut() {
                w.flush()?;
            }
            Ok(rows)
        });
        Ok(Self { tx: Some(tx), handle: Some(handle) })
    }

    pub fn record(&self, m: StepMetrics) {
        if let Some(tx) = &self.tx {
            // the writer only hangs up after an I/O error, reported by finish()
            let _ = tx.send(m);
        }
    }

    /// Closes the channel and returns every row recorded.
    pub fn finish(mut self) -> Result<Vec<StepMetrics>, TrainError> {
        self.tx.take();
        self.handle.take().expect("writer running").join().map_err(|_| TrainError::Config("metric writer panicked".into()))?
    }
}

impl Drop for MetricLog {
    fn drop(&mut self) {
        self.tx.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// Where a stage's batches come from.
#[derive(Clone, Debug)]
pub struct DataSource {
    pub shard: Arc<Shard>,
    pub tokenizer: Arc<Tokenizer>,
    pub augment: AugmentConfig,
    /// Batch preparation threads; 0 prepares inline.
    pub workers: usize,
}

impl DataSource {
    pub fn batch_prep(&self, state: &TrainState, spec: &StageSpec) -> BatchPrep {
        BatchPrep {
            shard: Arc::clone(&self.shard),
            tokenizer: Arc::clone(&self.tokenizer),
            augment: self.augment.clone(),
            spec: spec.clone(),
            patch_size: state.model.config.vision.patch_size,
            text_capacity: state.model.config.text.max_seq_len,
            seed: state.run.seed,
        }
    }

    /// Prepared batches for the stage starting at the state's current step.
    pub fn batches(
        &self,
        state: &TrainState,
        spec: &StageSpec,
    ) -> Result<impl Iterator<Item = Result<PreparedBatch, TrainError>>, TrainError> {
        let steps = spec.steps() as usize;
        let start = state.run.step;
        let shuffle_seed = SeedStream::new(state.run.seed).named("data").at(start).key();
        let it = BatchIterator::new(self.shard.len(), spec.batch_size, shuffle_seed, usize::MAX)?.take(steps);
        let prep = self.batch_prep(state, spec);
        Ok(Prefetch::new(it, self.workers, 2 * self.workers.max(1), move |b| {
            prep.prepare(&b.indices, start + b.ordinal as u64)
        }))
    }
}

/// Runs `spec.steps()` optimizer steps under the stage's own warmup + cosine
/// schedule, starting from the state's current position.
pub fn run_stage(
    state: &mut TrainState,
    spec: &StageSpec,
    data: &DataSource,
    log: Option<&MetricLog>,
) -> Result<Vec<StepMetrics>, TrainError> {
    spec.validate(&state.model.config)?;
    let schedule = Schedule { base_lr: spec.base_lr, min_lr: spec.min_lr, warmup_steps: spec.warmup(), total_steps: spec.steps() };
    let mut rows = Vec::with_capacity(spec.steps() as usize);
    for (k, batch) in data.batches(state, spec)?.enumerate() {
        let batch = batch?;
        let m = train_step(state, &batch, schedule.lr_at_step(k as u64 + 1))?;
        if let Some(log) = log {
            log.record(m);
        }
        rows.push(m);
    }
    Ok(rows)
}
