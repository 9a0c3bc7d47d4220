use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::SweepError;
use crate::eval::PreprocessMode;
use crate::imagepipe::{AugmentConfig, ImageReduction};
use crate::model::ModelConfig;
use crate::numerics::AdamWConfig;
use crate::textpipe::TextReduction;
use crate::trainer::{default_finetune_lr, ModelSelect, StageKind, StageSpec};

/// Per-cell stage settings; reductions come from the cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageTemplate {
    pub samples: u64,
    pub batch_size: usize,
    /// Required for pre-training; fine-tuning derives it from the
    /// pre-training rate when absent.
    #[serde(default)]
    pub base_lr: Option<f64>,
    #[serde(default)]
    pub min_lr: f64,
    #[serde(default)]
    pub warmup_steps: Option<u64>,
    /// Full-token side length; defaults to the model's image size.
    #[serde(default)]
    pub resolution: Option<usize>,
    /// Fine-tuning only: masking applied at full resolution.
    #[serde(default)]
    pub image_reduce: Option<String>,
}

/// How every cell is scored.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSpec {
    pub mode: PreprocessMode,
    /// Prompt templates; the built-in set when empty.
    pub templates: Vec<String>,
    /// Class names by id; the synthetic generator's defaults when empty.
    pub class_names: Vec<String>,
    pub retrieval: bool,
}

impl Default for EvalSpec {
    fn default() -> Self {
        Self { mode: PreprocessMode::CenterCrop, templates: Vec::new(), class_names: Vec::new(), retrieval: true }
    }
}

/// Which stage's metrics the report's drops are computed from.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropStage {
    PreTrain,
    #[default]
    FineTune,
}

impl DropStage {
    pub fn kind(self) -> StageKind {
        match self {
            Self::PreTrain => StageKind::Pretrain,
            Self::FineTune => StageKind::Finetune,
        }
    }
}

fn none_list() -> Vec<String> {
    vec!["none".into()]
}

fn one() -> usize {
    1
}

fn default_threshold() -> f64 {
    1.0
}

/// Contents of a `clipa sweep` grid file. Cells are the cross product of
/// models, image reductions, text reductions and seeds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub shard: PathBuf,
    pub eval_shard: PathBuf,
    #[serde(rename = "model")]
    pub models: Vec<ModelSelect>,
    #[serde(default = "none_list")]
    pub image_reductions: Vec<String>,
    #[serde(default = "none_list")]
    pub text_reductions: Vec<String>,
    pub seeds: Vec<u64>,
    /// Cells trained concurrently.
    #[serde(default = "one")]
    pub workers: usize,
    /// Batch preparation threads per cell; 0 prepares inline.
    #[serde(default)]
    pub prep_workers: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    #[serde(default)]
    pub drop_stage: DropStage,
    pub pretrain: StageTemplate,
    pub finetune: StageTemplate,
    #[serde(default)]
    pub eval: EvalSpec,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
}

/// One (model, image reduction, text reduction, seed) training job.
#[derive(Clone, Debug, PartialEq)]
pub struct Cell {
    pub model: ModelSelect,
    pub image_reduction: Option<ImageReduction>,
    pub text_reduction: Option<TextReduction>,
    pub seed: u64,
}

fn opt_string<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".into(), T::to_string)
}

impl Cell {
    /// Manifest key, e.g. `mini|resize:16|none|2`.
    pub fn key(&self) -> String {
        format!("{}|{}|{}|{}", self.model.preset, opt_string(&self.image_reduction), opt_string(&self.text_reduction), self.seed)
    }

    pub fn is_baseline(&self) -> bool {
        self.image_reduction.is_none() && self.text_reduction.is_none()
    }

    /// Curve label: `baseline`, an image strategy name, `text-<name>`, or
    /// both joined with `+`.
    pub fn strategy(&self) -> String {
        match (&self.image_reduction, &self.text_reduction) {
            (None, None) => "baseline".into(),
            (Some(i), None) => i.name().into(),
            (None, Some(t)) => format!("text-{}", t.strategy.name()),
            (Some(i), Some(t)) => format!("{}+text-{}", i.name(), t.strategy.name()),
        }
    }

    /// File-system safe form of the key.
    pub fn file_stem(&self) -> String {
        self.key().chars().map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' }).collect()
    }
}

impl SweepGrid {
    /// Reads a TOML grid; relative shard paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SweepError> {
        let path = path.as_ref();
        let mut grid: Self = toml::from_str(&fs::read_to_string(path)?).map_err(|e| SweepError::Grid(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut grid.shard, &mut grid.eval_shard] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        grid.validate()?;
        Ok(grid)
    }

    pub fn to_toml(&self) -> Result<String, SweepError> {
        toml::to_string(self).map_err(|e| SweepError::Grid(e.to_string()))
    }

    fn reductions(&self) -> Result<(Vec<Option<ImageReduction>>, Vec<Option<TextReduction>>), SweepError> {
        let img = self
            .image_reductions
            .iter()
            .map(|s| ImageReduction::parse_optional(s).map_err(|e| SweepError::Grid(e.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let txt = self
            .text_reductions
            .iter()
            .map(|s| match s.trim() {
                "none" => Ok(None),
                s => TextReduction::from_str(s).map(Some).map_err(|e| SweepError::Grid(e.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok((img, txt))
    }

    pub fn validate(&self) -> Result<(), SweepError> {
        let bad = |m: &str| Err(SweepError::Grid(m.into()));
        if self.models.is_empty() || self.seeds.is_empty() {
            return bad("a grid needs at least one model and one seed");
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        let (img, txt) = self.reductions()?;
        if !img.contains(&None) || !txt.contains(&None) {
            return bad("image and text reductions must both include \"none\" so every model has a baseline cell");
        }
        if self.pretrain.base_lr.is_none() {
            return bad("pretrain.base_lr is required");
        }
        for cell in self.cells()? {
            let cfg = cell.model.resolve()?;
            for spec in self.stage_specs(&cell, &cfg)? {
                spec.validate(&cfg)?;
            }
        }
        Ok(())
    }

    /// All cells in a fixed order: model, image reduction, text reduction, seed.
    pub fn cells(&self) -> Result<Vec<Cell>, SweepError> {
        let (img, txt) = self.reductions()?;
        let mut cells = Vec::new();
        for m in &self.models {
            for i in &img {
                for t in &txt {
                    for &seed in &self.seeds {
                        cells.push(Cell { model: m.clone(), image_reduction: *i, text_reduction: *t, seed });
                    }
                }
            }
        }
        Ok(cells)
    }

    /// The cell's pre-training and fine-tuning stages.
    pub fn stage_specs(&self, cell: &Cell, cfg: &ModelConfig) -> Result<[StageSpec; 2], SweepError> {
        let pre_lr = self.pretrain.base_lr.ok_or_else(|| SweepError::Grid("pretrain.base_lr is required".into()))?;
        let pre = StageSpec {
            kind: StageKind::Pretrain,
            image_reduction: cell.image_reduction,
            text_reduction: cell.text_reduction,
            samples: self.pretrain.samples,
            batch_size: self.pretrain.batch_size,
            base_lr: pre_lr,
            min_lr: self.pretrain.min_lr,
            warmup_steps: self.pretrain.warmup_steps,
            resolution: self.pretrain.resolution.unwrap_or(cfg.image_size),
        };
        let ft_mask = match &self.finetune.image_reduce {
            Some(s) => ImageReduction::parse_optional(s).map_err(|e| SweepError::Grid(e.to_string()))?,
            None => None,
        };
        let fine = StageSpec {
            kind: StageKind::Finetune,
            image_reduction: ft_mask,
            text_reduction: None,
            samples: self.finetune.samples,
            batch_size: self.finetune.batch_size,
            base_lr: self.finetune.base_lr.unwrap_or_else(|| default_finetune_lr(&cell.model.preset, pre_lr)),
            min_lr: self.finetune.min_lr,
            warmup_steps: self.finetune.warmup_steps,
            resolution: self.finetune.resolution.unwrap_or(cfg.image_size),
        };
        Ok([pre, fine])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const GRID: &str = r#"
shard = "train.clpa"
eval_shard = "eval.clpa"
seeds = [0]
image_reductions = ["none", "resize:16"]

[[model]]
preset = "tiny"
patch_size = 8

[[model]]
preset = "mini"
patch_size = 8

[pretrain]
samples = 256
batch_size = 32
base_lr = 1e-3

[finetune]
samples = 64
batch_size = 32
"#;

    #[test]
    fn cross_product_with_baselines() {
        let g: SweepGrid = toml::from_str(GRID).unwrap();
        g.validate().unwrap();
        let cells = g.cells().unwrap();
        assert_eq!(cells.len(), 4);
        assert_eq!(cells[1].key(), "tiny|resize:16|none|0");
        assert_eq!(cells[1].strategy(), "resize");
        assert!(cells[2].is_baseline());
        let cfg = cells[0].model.resolve().unwrap();
        let [_, ft] = g.stage_specs(&cells[0], &cfg).unwrap();
        assert!((ft.base_lr - 1e-4).abs() < 1e-12);
        assert_eq!(ft.resolution, 32);
    }

    #[test]
    fn baseline_is_required() {
        let mut g: SweepGrid = toml::from_str(GRID).unwrap();
        g.image_reductions = vec!["resize:16".into()];
        assert!(g.validate().is_err());
    }
}
