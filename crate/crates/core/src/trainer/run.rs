use std::fs;
use std::sync::Arc;

use super::config::{StageSpec, TrainConfig};
use super::stage::{run_stage, DataSource, MetricLog};
use super::step::{StepMetrics, TrainState};
use super::TrainError;
use crate::ingest::Shard;
use crate::model::{Checkpoint, DualEncoder};
use crate::textpipe::Tokenizer;

/// Result of a `train` or `finetune` invocation.
#[derive(Debug)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<StepMetrics>,
    /// SHA-256 of the final checkpoint file.
    pub checkpoint_sha256: String,
}

/// Runs every configured stage in order, checkpointing after each one into
/// `out_dir` (`stage-<i>.clpc`, then `final.clpc`) and logging metrics to
/// `out_dir/metrics.csv`. With `from`, weights, optimizer moments and run
/// position continue from that checkpoint.
pub fn run_training(cfg: &TrainConfig, from: Option<Checkpoint<f32>>) -> Result<TrainOutcome, TrainError> {
    fs::create_dir_all(&cfg.out_dir)?;
    let mut state = match from {
        Some(ck) => {
            let (model, optimizer, run) = ck.into_model()?;
            let mut state = TrainState::new(model, cfg.optimizer, run.seed);
            if let Some(opt) = optimizer {
                state.optimizer = opt;
            }
            state.run = run;
            state
        }
        None => {
            let model = DualEncoder::new(cfg.model.resolve()?, cfg.seed)?;
            TrainState::new(model, cfg.optimizer, cfg.seed)
        }
    };
    let specs: Vec<StageSpec> = cfg.stage_specs(&state.model.config)?;
    fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml()?)?;

    let data = DataSource {
        shard: Arc::new(Shard::read(&cfg.shard)?),
        tokenizer: Arc::new(Tokenizer::bundled()),
        augment: cfg.augment.clone(),
        workers: cfg.workers,
    };
    let log = MetricLog::spawn(Some(&cfg.out_dir.join("metrics.csv")))?;
    for (i, spec) in specs.iter().enumerate() {
        if let Err(e) = run_stage(&mut state, spec, &data, Some(&log)) {
            if let TrainError::NonFinite { step, batch_seed, loss } = &e {
                let dump = format!("stage = {i}\nstep = {step}\nbatch_seed = {batch_seed}\nloss = {loss}\n");
                fs::write(cfg.out_dir.join("abort.txt"), dump)?;
            }
            return Err(e);
        }
        Checkpoint::from_model(&state.model, Some(&state.optimizer), state.run)
            .save(cfg.out_dir.join(format!("stage-{i}.clpc")))?;
    }
    let metrics = log.finish()?;
    let final_path = cfg.out_dir.join("final.clpc");
    Checkpoint::from_model(&state.model, Some(&state.optimizer), state.run).save(&final_path)?;
    let checkpoint_sha256 = crate::ingest::sha256_hex(&fs::read(&final_path)?);
    Ok(TrainOutcome { state, metrics, checkpoint_sha256 })
}
