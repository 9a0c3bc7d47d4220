use std::path::PathBuf;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use clipa_core::eval::{
    build_classifier, classify, encode_shard_images, encode_shard_texts, retrieval_recall, shard_labels, PreprocessMode,
    PromptSet,
};
use clipa_core::ingest::{synth_generate, Shard, SynthConfig};
use clipa_core::model::{Checkpoint, ModelConfig};
use clipa_core::sweep::{compute_cost, resolve_class_names, run_sweep, ScheduleStage, SweepGrid};
use clipa_core::textpipe::Tokenizer;
use clipa_core::trainer::{run_training, TrainConfig};

#[derive(Parser)]
#[command(name = "clipa", version, about = "Contrastive image-text training with reduced token lengths")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalMode {
    Classify,
    Retrieval,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preprocess {
    Crop,
    Direct,
}

/// `samples:img_tokens:txt_tokens`
#[derive(Clone, Copy, Debug)]
struct StageArg(ScheduleStage);

impl FromStr for StageArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<_> = s.split(':').collect();
        let [samples, img, txt] = parts.as_slice() else {
            return Err(format!("expected samples:img_tokens:txt_tokens, got {s:?}"));
        };
        let samples = samples.replace('_', "");
        let parse = |v: &str| v.parse::<u64>().map_err(|e| format!("{v:?}: {e}"));
        Ok(Self(ScheduleStage::new(parse(&samples)?, parse(img)? as usize, parse(txt)? as usize)))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic image-caption shard.
    SynthData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train from scratch through every configured stage.
    Train {
        #[arg(long)]
        config: PathBuf,
    },
    /// Continue training from a checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        from: PathBuf,
    },
    /// Zero-shot classification or retrieval on a shard; prints `metric,value,n`.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        shard: PathBuf,
        /// Prompt templates, one per line, each with one `{}`.
        #[arg(long)]
        prompts: PathBuf,
        #[arg(long, value_enum, default_value = "classify")]
        mode: EvalMode,
        /// Evaluation resolution; defaults to the model's image size.
        #[arg(long)]
        res: Option<usize>,
        #[arg(long, value_enum, default_value = "crop")]
        preprocess: Preprocess,
        /// Class names, one per line, indexed by class id.
        #[arg(long)]
        classes: Option<PathBuf>,
    },
    /// Run a grid of model x reduction cells and report drops.
    Sweep {
        #[arg(long)]
        grid: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-sample GFLOPs and schedule totals for a preset.
    Flops {
        #[arg(long)]
        model: String,
        #[arg(long)]
        img_tokens: usize,
        #[arg(long)]
        txt_tokens: usize,
        /// Extra schedule stage `samples:img_tokens:txt_tokens`; repeatable.
        #[arg(long = "stage")]
        stages: Vec<StageArg>,
    },
}

fn read_lines(path: &PathBuf) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::SynthData { config, out } => {
            let cfg = SynthConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let shard = synth_generate(&cfg)?;
            shard.write(&out)?;
            println!("wrote {} records ({} classes) to {}", shard.len(), cfg.num_classes(), out.display());
            println!("sha256 {}", shard.checksum()?);
        }
        Command::Train { config } => {
            let cfg = TrainConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            report_training(&cfg, run_training(&cfg, None)?);
        }
        Command::Finetune { config, from } => {
            let cfg = TrainConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            let ck = Checkpoint::<f32>::load(&from).with_context(|| format!("loading {}", from.display()))?;
            report_training(&cfg, run_training(&cfg, Some(ck))?);
        }
        Command::Eval { ckpt, shard, prompts, mode, res, preprocess, classes } => {
            let (model, _, _) = Checkpoint::<f32>::load(&ckpt)?.into_model()?;
            let shard = Shard::read(&shard)?;
            let res = res.unwrap_or(model.config.image_size);
            let pre = match preprocess {
                Preprocess::Crop => PreprocessMode::CenterCrop,
                Preprocess::Direct => PreprocessMode::Direct,
            };
            let tokenizer = Tokenizer::bundled();
            let img = encode_shard_images(&model, &shard, res, pre)?;
            println!("metric,value,n");
            match mode {
                EvalMode::Classify => {
                    let names = match &classes {
                        Some(p) => read_lines(p)?,
                        None => Vec::new(),
                    };
                    let set = PromptSet::new(read_lines(&prompts)?, resolve_class_names(&names, &shard)?)?;
                    let clf = build_classifier(&set, &model, &tokenizer)?;
                    let acc = classify(&img, &shard_labels(&shard)?, &clf)?;
                    println!("top1,{acc:.6},{}", shard.len());
                }
                EvalMode::Retrieval => {
                    let txt = encode_shard_texts(&model, &shard, &tokenizer)?;
                    for k in [1, 5] {
                        if k > shard.len() {
                            continue;
                        }
                        let (i2t, t2i) = retrieval_recall(&img, &txt, k)?;
                        println!("image_to_text_r@{k},{i2t:.6},{}", shard.len());
                        println!("text_to_image_r@{k},{t2i:.6},{}", shard.len());
                    }
                }
            }
        }
        Command::Sweep { grid, out } => {
            let g = SweepGrid::load(&grid).with_context(|| format!("loading {}", grid.display()))?;
            let o = run_sweep(&g, &out)?;
            println!("trained {} cells, skipped {} already done", o.trained.len(), o.skipped.len());
            for (key, why) in &o.failed {
                eprintln!("cell {key} failed: {why}");
            }
            for c in o.report.curves.iter().filter(|c| c.seed.is_none()) {
                let pts: Vec<_> = c.points.iter().map(|p| format!("{}:{:.2}", p.tokens, p.drop)).collect();
                println!("{} {}: baseline {:.2}, drops {}, min tokens {}", c.model, c.strategy, c.baseline, pts.join(" "), c.min_tokens);
            }
            println!("outputs in {}", out.display());
            if !o.failed.is_empty() {
                bail!("{} cells failed", o.failed.len());
            }
        }
        Command::Flops { model, img_tokens, txt_tokens, stages } => {
            let cfg = ModelConfig::preset(&model)?;
            println!("model = {model}");
            println!("params = {}", cfg.param_count());
            println!("gflops_per_sample = {:.4}", cfg.flops_estimate(img_tokens, txt_tokens));
            let mut schedule: Vec<ScheduleStage> = stages.into_iter().map(|s| s.0).collect();
            if schedule.is_empty() {
                schedule.push(ScheduleStage::new(1_000_000_000, img_tokens, txt_tokens));
            }
            for (i, s) in schedule.iter().enumerate() {
                println!(
                    "stage{i} = {} samples @ {}/{} tokens, {:.4}e12 GFLOPs",
                    s.samples,
                    s.img_tokens,
                    s.txt_tokens,
                    compute_cost(&cfg, std::slice::from_ref(s))
                );
            }
            println!("total_e12 = {:.4}", compute_cost(&cfg, &schedule));
        }
    }
    Ok(())
}

fn report_training(cfg: &TrainConfig, o: clipa_core::trainer::TrainOutcome) {
    if let Some(last) = o.metrics.last() {
        println!(
            "{} steps, final loss {:.4}, 1/temperature {:.2}, {} samples, {:.1} s",
            o.metrics.len(),
            last.loss,
            last.inv_temperature,
            last.samples_seen,
            last.wallclock_ms / 1e3
        );
    }
    println!("checkpoint {} sha256 {}", cfg.out_dir.join("final.clpc").display(), o.checkpoint_sha256);
}
