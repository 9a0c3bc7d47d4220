use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::StageSpec;
use super::TrainError;
use crate::imagepipe::{apply_mask, augment, patchify, AugmentConfig, ImageReduction, PatchSet};
use crate::ingest::Shard;
use crate::model::{DualEncoder, RunState};
use crate::numerics::{AdamWConfig, OptimizerState, SeedStream, Tape};
use crate::textpipe::{reduce_text, TokenizedText, Tokenizer};

/// One row of the metric log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub inv_temperature: f64,
    pub samples_seen: u64,
    pub wallclock_ms: f64,
}

/// Model inputs for one step, already augmented and reduced.
#[derive(Clone, Debug)]
pub struct PreparedBatch {
    pub step: u64,
    pub images: Vec<PatchSet>,
    pub texts: Vec<TokenizedText>,
}

impl PreparedBatch {
    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// Encoder sequence lengths `(image, text)` including CLS.
    pub fn token_counts(&self) -> (usize, usize) {
        (
            self.images.first().map_or(0, |p| p.len() + 1),
            self.texts.first().map_or(0, |t| t.capacity()),
        )
    }
}

/// Everything needed to turn record indices into a [`PreparedBatch`].
/// Each sample draws from streams keyed by `(seed, step, position)`, so the
/// result does not depend on which worker thread prepares it.
#[derive(Clone, Debug)]
pub struct BatchPrep {
    pub shard: Arc<Shard>,
    pub tokenizer: Arc<Tokenizer>,
    pub augment: AugmentConfig,
    pub spec: StageSpec,
    pub patch_size: usize,
    pub text_capacity: usize,
    pub seed: u64,
}

impl BatchPrep {
    pub fn prepare(&self, indices: &[usize], step: u64) -> Result<PreparedBatch, TrainError> {
        let root = SeedStream::new(self.seed);
        let (aug_s, img_s, txt_s) = (
            root.named("augment").at(step),
            root.named("mask-image").at(step),
            root.named("mask-text").at(step),
        );
        let size = self.spec.input_size();
        let mut images = Vec::with_capacity(indices.len());
        let mut texts = Vec::with_capacity(indices.len());
        for (i, &idx) in indices.iter().enumerate() {
            let rec = self
                .shard
                .records
                .get(idx)
                .ok_or_else(|| TrainError::Config(format!("record {} outside shard of {}", idx, self.shard.len())))?;
            let img = augment(&rec.image, size, &self.augment, &mut aug_s.at(i as u64).rng())?;
            let mut patches = patchify(&img, self.patch_size)?;
            if let Some(r) = self.spec.image_reduction.filter(|r| !matches!(r, ImageReduction::Resize(_))) {
                patches = apply_mask(&patches, &r, &mut img_s.at(i as u64).rng())?;
            }
            images.push(patches);

            let tok = self.tokenizer.tokenize(&rec.caption, self.text_capacity);
            texts.push(match &self.spec.text_reduction {
                Some(r) => reduce_text(&tok, r, self.tokenizer.vocab.pad, &mut txt_s.at(i as u64).rng()),
                None => tok,
            });
        }
        Ok(PreparedBatch { step, images, texts })
    }
}

/// Model, optimizer and run position.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: DualEncoder<f32>,
    pub optimizer: OptimizerState<f32>,
    pub run: RunState,
    /// Replaces the learned temperature in the loss when set.
    pub fixed_inv_temperature: Option<f64>,
    pub started: Instant,
}

impl TrainState {
    pub fn new(model: DualEncoder<f32>, optimizer: AdamWConfig, seed: u64) -> Self {
        let optimizer = OptimizerState::new(optimizer, &model.params);
        Self {
            model,
            optimizer,
            run: RunState { seed, step: 0, samples_seen: 0 },
            fixed_inv_temperature: None,
            started: Instant::now(),
        }
    }

    /// Forward pass only: the contrastive loss of `batch` at current weights.
    pub fn loss(&self, batch: &PreparedBatch) -> Result<f64, TrainError> {
        let mut tape = Tape::new();
        let loss = self.record_loss(&mut tape, batch)?;
        Ok(tape.value(loss).item() as f64)
    }

    fn record_loss(&self, tape: &mut Tape<f32>, batch: &PreparedBatch) -> Result<crate::numerics::Var, TrainError> {
        let img = self.model.image_features(tape, &batch.images)?;
        let txt = self.model.text_features(tape, &batch.texts)?;
        let logits = self.model.logits(tape, img, txt, self.fixed_inv_temperature)?;
        Ok(tape.clip_loss(logits)?)
    }
}

/// Encode, contrast, back-propagate, apply AdamW at `lr`, clamp the
/// temperature. A non-finite loss or gradient leaves the state untouched.
pub fn train_step(state: &mut TrainState, batch: &PreparedBatch, lr: f64) -> Result<StepMetrics, TrainError> {
    let mut tape = Tape::new();
    let loss_var = state.record_loss(&mut tape, batch)?;
    let loss = tape.value(loss_var).item() as f64;
    let grads = tape.backward(loss_var)?;
    if !loss.is_finite() || !grads.all_finite() {
        return Err(TrainError::NonFinite { step: state.run.step, batch_seed: batch_seed(state.run.seed, batch.step), loss });
    }
    state.optimizer.step(&mut state.model.params, &grads, lr);
    state.model.clamp_temperature();
    state.run.step += 1;
    state.run.samples_seen += batch.len() as u64;
    Ok(StepMetrics {
        step: state.run.step,
        lr,
        loss,
        inv_temperature: state.model.inv_temperature(),
        samples_seen: state.run.samples_seen,
        wallclock_ms: state.started.elapsed().as_secs_f64() * 1e3,
    })
}

/// Key of the augmentation stream for a step, reported on aborts.
pub fn batch_seed(seed: u64, step: u64) -> u64 {
    SeedStream::new(seed).named("augment").at(step).key()
}
