use std::collections::BTreeMap;
use std::fs::{self, File};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use super::grid::{Cell, SweepGrid};
use super::report::{render_svg, RunRecord, ScalingReport};
use super::SweepError;
use crate::eval::{
    classify, encode_shard_images, encode_shard_texts, retrieval_recall, shard_labels, build_classifier, PromptSet,
    DEFAULT_TEMPLATES,
};
use crate::imagepipe::kept_token_count;
use crate::ingest::{Shard, SynthConfig};
use crate::model::DualEncoder;
use crate::textpipe::Tokenizer;
use crate::trainer::{run_stage, DataSource, StageSpec, TrainState};

pub const MANIFEST: &str = "manifest.toml";
const LOCK: &str = "manifest.lock";
pub const DONE: &str = "done";

/// Cell status by key, stored as sorted `"key" = "status"` lines. A
/// status is `done` or `failed: <reason>`; absent keys are pending.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub cells: BTreeMap<String, String>,
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Self, SweepError> {
        let path = dir.join(MANIFEST);
        if !path.exists() {
            return Ok(Self::default());
        }
        let cells = toml::from_str(&fs::read_to_string(&path)?).map_err(|e| SweepError::Manifest(e.to_string()))?;
        Ok(Self { cells })
    }

    pub fn is_done(&self, key: &str) -> bool {
        self.cells.get(key).is_some_and(|s| s == DONE)
    }

    /// Sets one cell's status under an exclusive advisory lock, re-reading
    /// the file first so concurrent writers never lose each other's updates.
    pub fn update(dir: &Path, key: &str, status: &str) -> Result<(), SweepError> {
        let lock = File::options().create(true).truncate(false).write(true).open(dir.join(LOCK))?;
        lock.lock()?;
        let mut m = Self::read(dir)?;
        m.cells.insert(key.to_string(), status.to_string());
        let text = toml::to_string(&m.cells).map_err(|e| SweepError::Manifest(e.to_string()))?;
        let tmp = dir.join(format!("{MANIFEST}.partial"));
        fs::write(&tmp, text)?;
        fs::rename(&tmp, dir.join(MANIFEST))?;
        lock.unlock()?;
        Ok(())
    }
}

/// Everything a sweep produced.
#[derive(Clone, Debug)]
pub struct SweepOutcome {
    /// Records of every completed cell, in grid order.
    pub records: Vec<RunRecord>,
    pub report: ScalingReport,
    /// Cells trained by this invocation.
    pub trained: Vec<String>,
    /// Cells skipped because the manifest already had them.
    pub skipped: Vec<String>,
    /// (key, reason) of cells that failed in this invocation.
    pub failed: Vec<(String, String)>,
}

struct Shared {
    train: Arc<Shard>,
    eval: Arc<Shard>,
    tokenizer: Arc<Tokenizer>,
    prompts: PromptSet,
}

/// Class names for a shard's labels: the configured ones, otherwise the
/// synthetic generator's defaults, otherwise `class <id>`.
pub fn resolve_class_names(configured: &[String], shard: &Shard) -> Result<Vec<String>, SweepError> {
    let labels = shard_labels(shard)?;
    let needed = labels.iter().max().map_or(0, |&m| m + 1);
    if !configured.is_empty() {
        if configured.len() < needed {
            return Err(SweepError::Grid(format!("{} class names for labels up to {}", configured.len(), needed - 1)));
        }
        return Ok(configured.to_vec());
    }
    let synth = SynthConfig::default().class_names();
    if synth.len() >= needed {
        return Ok(synth);
    }
    Ok((0..needed).map(|i| format!("class {i}")).collect())
}

fn cell_csv(out: &Path, cell: &Cell) -> PathBuf {
    out.join("cells").join(format!("{}.csv", cell.file_stem()))
}

/// Trains and scores one cell: pre-train, evaluate, fine-tune, evaluate.
fn run_cell(grid: &SweepGrid, cell: &Cell, shared: &Shared) -> Result<Vec<RunRecord>, SweepError> {
    let cfg = cell.model.resolve()?;
    let stages = grid.stage_specs(cell, &cfg)?;
    let mut state = TrainState::new(DualEncoder::new(cfg.clone(), cell.seed)?, grid.optimizer, cell.seed);
    let data = DataSource {
        shard: Arc::clone(&shared.train),
        tokenizer: Arc::clone(&shared.tokenizer),
        augment: grid.augment.clone(),
        workers: grid.prep_workers,
    };
    let labels = shard_labels(&shared.eval)?;
    let started = Instant::now();
    let mut cumulative = 0.0;
    let mut records = Vec::with_capacity(2);
    let tokens = |spec: &StageSpec| {
        (kept_token_count(spec.resolution, cfg.vision.patch_size, spec.image_reduction.as_ref()), spec.text_len(&cfg))
    };
    let (img_tokens, txt_tokens) = tokens(&stages[0]);
    for spec in &stages {
        run_stage(&mut state, spec, &data, None)?;
        let (stage_img, stage_txt) = tokens(spec);
        let gflops = cfg.flops_estimate(stage_img, stage_txt);
        cumulative += gflops * (spec.steps() * spec.batch_size as u64) as f64;

        let model = &state.model;
        let img = encode_shard_images(model, &shared.eval, spec.input_size(), grid.eval.mode)?;
        let clf = build_classifier(&shared.prompts, model, &shared.tokenizer)?;
        let top1 = classify(&img, &labels, &clf)?;
        let (r1_i2t, r1_t2i) = if grid.eval.retrieval {
            let txt = encode_shard_texts(model, &shared.eval, &shared.tokenizer)?;
            let (a, b) = retrieval_recall(&img, &txt, 1)?;
            (Some(a), Some(b))
        } else {
            (None, None)
        };
        records.push(RunRecord {
            model: cell.model.preset.clone(),
            strategy: cell.strategy(),
            image_reduce: cell.image_reduction.map_or_else(|| "none".into(), |r| r.to_string()),
            text_reduce: cell.text_reduction.map_or_else(|| "none".into(), |r| r.to_string()),
            img_tokens,
            txt_tokens,
            stage: spec.kind.to_string(),
            seed: cell.seed,
            top1,
            r1_image_to_text: r1_i2t,
            r1_text_to_image: r1_t2i,
            gflops_per_sample: gflops,
            cumulative_gflops: cumulative,
            wallclock_s: started.elapsed().as_secs_f64(),
        });
    }
    Ok(records)
}

fn write_records(path: &Path, records: &[RunRecord]) -> Result<(), SweepError> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<RunRecord>, SweepError> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<Result<Vec<RunRecord>, _>>()?)
}

/// Runs every pending cell of `grid` with up to `grid.workers` cells in
/// flight, then writes `records.csv`, `report.csv` and one SVG per
/// (model, strategy) into `out`. Cells already marked done in the manifest
/// are not retrained; a failing cell is recorded and the sweep continues.
pub fn run_sweep(grid: &SweepGrid, out: &Path) -> Result<SweepOutcome, SweepError> {
    grid.validate()?;
    fs::create_dir_all(out.join("cells"))?;
    fs::create_dir_all(out.join("curves"))?;
    fs::write(out.join("grid.toml"), grid.to_toml()?)?;

    let eval = Shard::read(&grid.eval_shard)?;
    let templates = if grid.eval.templates.is_empty() {
        DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect()
    } else {
        grid.eval.templates.clone()
    };
    let prompts = PromptSet::new(templates, resolve_class_names(&grid.eval.class_names, &eval)?)?;
    let shared = Shared {
        train: Arc::new(Shard::read(&grid.shard)?),
        eval: Arc::new(eval),
        tokenizer: Arc::new(Tokenizer::bundled()),
        prompts,
    };

    let cells = grid.cells()?;
    let manifest = Manifest::read(out)?;
    let (done, pending): (Vec<&Cell>, Vec<&Cell>) =
        cells.iter().partition(|c| manifest.is_done(&c.key()) && cell_csv(out, c).exists());
    let skipped = done.iter().map(|c| c.key()).collect();

    let next = AtomicUsize::new(0);
    let results: Vec<(String, Result<(), String>)> = thread::scope(|s| {
        let handles: Vec<_> = (0..grid.workers.min(pending.len()))
            .map(|_| {
                s.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::SeqCst);
                        let Some(cell) = pending.get(i) else { break };
                        let key = cell.key();
                        let outcome = run_cell(grid, cell, &shared)
                            .and_then(|recs| write_records(&cell_csv(out, cell), &recs))
                            .map_err(|e| e.to_string());
                        let status = match &outcome {
                            Ok(()) => DONE.to_string(),
                            Err(e) => format!("failed: {e}"),
                        };
                        let outcome = match Manifest::update(out, &key, &status) {
                            Ok(()) => outcome,
                            Err(e) => Err(format!("manifest update: {e}")),
                        };
                        mine.push((key, outcome));
                    }
                    mine
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut trained = Vec::new();
    let mut failed = Vec::new();
    for (key, r) in results {
        match r {
            Ok(()) => trained.push(key),
            Err(e) => failed.push((key, e)),
        }
    }

    let manifest = Manifest::read(out)?;
    let mut records = Vec::new();
    for cell in &cells {
        if manifest.is_done(&cell.key()) {
            records.extend(read_records(&cell_csv(out, cell))?);
        }
    }
    write_records(&out.join("records.csv"), &records)?;
    let report = ScalingReport::build(&records, grid.drop_stage.kind(), grid.threshold)?;
    fs::write(out.join("report.csv"), report.to_csv()?)?;
    for c in report.curves.iter().filter(|c| c.seed.is_none()) {
        let seeds: Vec<_> =
            report.curves.iter().filter(|o| o.seed.is_some() && o.model == c.model && o.strategy == c.strategy).collect();
        let name: String = format!("{}-{}", c.model, c.strategy)
            .chars()
            .map(|ch| if ch.is_ascii_alphanumeric() || ch == '-' || ch == '+' { ch } else { '_' })
            .collect();
        fs::write(out.join("curves").join(format!("{name}.svg")), render_svg(c, &seeds, grid.threshold))?;
    }
    Ok(SweepOutcome { records, report, trained, skipped, failed })
}
