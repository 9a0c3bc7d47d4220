use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::imagepipe::{AugmentConfig, ImageReduction};
use crate::model::{ModelConfig, Pooling};
use crate::numerics::AdamWConfig;
use crate::textpipe::TextReduction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StageKind {
    Pretrain,
    Finetune,
}

impl fmt::Display for StageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Pretrain => "pre-train",
            Self::Finetune => "fine-tune",
        })
    }
}

/// One training phase with its own token budget and learning-rate schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSpec {
    pub kind: StageKind,
    pub image_reduction: Option<ImageReduction>,
    pub text_reduction: Option<TextReduction>,
    pub samples: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    pub min_lr: f64,
    /// `None` picks `min(1600, 5% of the stage's steps)`.
    pub warmup_steps: Option<u64>,
    pub resolution: usize,
}

impl StageSpec {
    pub fn steps(&self) -> u64 {
        self.samples / self.batch_size as u64
    }

    pub fn warmup(&self) -> u64 {
        self.warmup_steps.unwrap_or_else(|| 1600.min((self.steps() as f64 * 0.05).ceil() as u64))
    }

    /// Side length fed to the patchifier.
    pub fn input_size(&self) -> usize {
        match self.image_reduction {
            Some(ImageReduction::Resize(s)) => s,
            _ => self.resolution,
        }
    }

    /// Text capacity after reduction.
    pub fn text_len(&self, model: &ModelConfig) -> usize {
        self.text_reduction.map_or(model.text.max_seq_len, |r| r.max_len)
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.batch_size < 2 {
            return bad(format!("batch size {} leaves no negatives", self.batch_size));
        }
        if !(self.base_lr > 0.0) || self.min_lr < 0.0 || self.min_lr > self.base_lr {
            return bad(format!("learning rates base {} / min {} are invalid", self.base_lr, self.min_lr));
        }
        if let Some(r) = &self.image_reduction {
            r.validate()?;
        }
        let p = model.vision.patch_size;
        if !self.resolution.is_multiple_of(p) || !self.input_size().is_multiple_of(p) {
            return bad(format!("input size {} is not divisible by patch size {}", self.input_size(), p));
        }
        let tokens = (self.input_size() / p).pow(2) + 1;
        if tokens > model.vision.max_seq_len {
            return bad(format!("{} image tokens exceed the tower maximum {}", tokens, model.vision.max_seq_len));
        }
        if self.text_len(model) > model.text.max_seq_len {
            return bad(format!("text budget {} exceeds the tower maximum {}", self.text_len(model), model.text.max_seq_len));
        }
        if self.kind == StageKind::Finetune {
            if self.text_reduction.is_some() {
                return bad("fine-tuning uses the full text length".into());
            }
            if matches!(self.image_reduction, Some(ImageReduction::Resize(_))) {
                return bad("fine-tuning uses full-resolution images (masking is allowed)".into());
            }
        }
        Ok(())
    }
}

/// Serialized form of a stage: reductions as `resize:112` / `syntax:8` / `none`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub kind: StageKind,
    #[serde(default = "none_string")]
    pub image_reduce: String,
    #[serde(default = "none_string")]
    pub text_reduce: String,
    pub samples: u64,
    pub batch_size: usize,
    pub base_lr: f64,
    #[serde(default)]
    pub min_lr: f64,
    #[serde(default)]
    pub warmup_steps: Option<u64>,
    #[serde(default)]
    pub resolution: Option<usize>,
}

fn none_string() -> String {
    "none".into()
}

impl StageConfig {
    pub fn to_spec(&self, model: &ModelConfig) -> Result<StageSpec, TrainError> {
        let text_reduction = match self.text_reduce.trim() {
            "none" => None,
            s => Some(TextReduction::from_str(s)?),
        };
        let spec = StageSpec {
            kind: self.kind,
            image_reduction: ImageReduction::parse_optional(&self.image_reduce)?,
            text_reduction,
            samples: self.samples,
            batch_size: self.batch_size,
            base_lr: self.base_lr,
            min_lr: self.min_lr,
            warmup_steps: self.warmup_steps,
            resolution: self.resolution.unwrap_or(model.image_size),
        };
        spec.validate(model)?;
        Ok(spec)
    }

    pub fn from_spec(spec: &StageSpec) -> Self {
        Self {
            kind: spec.kind,
            image_reduce: spec.image_reduction.map_or_else(none_string, |r| r.to_string()),
            text_reduce: spec.text_reduction.map_or_else(none_string, |r| r.to_string()),
            samples: spec.samples,
            batch_size: spec.batch_size,
            base_lr: spec.base_lr,
            min_lr: spec.min_lr,
            warmup_steps: spec.warmup_steps,
            resolution: Some(spec.resolution),
        }
    }
}

/// A preset plus optional architecture overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSelect {
    pub preset: String,
    #[serde(default)]
    pub patch_size: Option<usize>,
    #[serde(default)]
    pub image_size: Option<usize>,
    #[serde(default)]
    pub text_len: Option<usize>,
    #[serde(default)]
    pub vision_pooling: Option<Pooling>,
    #[serde(default)]
    pub text_pooling: Option<Pooling>,
}

impl ModelSelect {
    pub fn preset(name: &str) -> Self {
        Self {
            preset: name.into(),
            patch_size: None,
            image_size: None,
            text_len: None,
            vision_pooling: None,
            text_pooling: None,
        }
    }

    pub fn resolve(&self) -> Result<ModelConfig, TrainError> {
        let mut cfg = ModelConfig::preset(&self.preset)?;
        if let Some(p) = self.patch_size {
            cfg.vision.patch_size = p;
        }
        if let Some(s) = self.image_size {
            cfg.image_size = s;
        }
        if let Some(n) = self.text_len {
            cfg.text.max_seq_len = n;
        }
        if let Some(p) = self.vision_pooling {
            cfg.vision.pooling = p;
        }
        if let Some(p) = self.text_pooling {
            cfg.text.pooling = p;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Contents of a `clipa train` / `clipa finetune` config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub shard: PathBuf,
    pub out_dir: PathBuf,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub model: ModelSelect,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default)]
    pub optimizer: AdamWConfig,
    #[serde(rename = "stage")]
    pub stages: Vec<StageConfig>,
}

fn default_workers() -> usize {
    1
}

impl TrainConfig {
    /// Reads a TOML config; relative paths resolve against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, TrainError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| TrainError::Config(e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.shard.is_relative() {
            cfg.shard = base.join(&cfg.shard);
        }
        if cfg.out_dir.is_relative() {
            cfg.out_dir = base.join(&cfg.out_dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String, TrainError> {
        toml::to_string(self).map_err(|e| TrainError::Config(e.to_string()))
    }

    pub fn stage_specs(&self, model: &ModelConfig) -> Result<Vec<StageSpec>, TrainError> {
        self.stages.iter().map(|s| s.to_spec(model)).collect()
    }
}

/// Fine-tuning learning rate mirroring the pre-train to fine-tune ratio:
/// one twentieth of the base, one tenth for the small presets.
pub fn default_finetune_lr(preset: &str, base_lr: f64) -> f64 {
    match preset {
        "tiny" | "mini" | "S/16" | "B/16" => base_lr / 10.0,
        _ => base_lr / 20.0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seed = 4
shard = "train.clpa"
out_dir = "runs/a"

[model]
preset = "tiny"

[[stage]]
kind = "pretrain"
image_reduce = "resize:16"
text_reduce = "syntax:8"
samples = 640
batch_size = 32
base_lr = 1e-3

[[stage]]
kind = "finetune"
samples = 64
batch_size = 32
base_lr = 1e-4
"#;

    #[test]
    fn parses_stages() {
        let cfg: TrainConfig = toml::from_str(SAMPLE).unwrap();
        let model = cfg.model.resolve().unwrap();
        let specs = cfg.stage_specs(&model).unwrap();
        assert_eq!(specs[0].image_reduction, Some(ImageReduction::Resize(16)));
        assert_eq!(specs[0].steps(), 20);
        assert_eq!(specs[0].warmup(), 1);
        assert_eq!(specs[1].input_size(), 32);
        assert_eq!(specs[1].text_len(&model), model.text.max_seq_len);
        let again: TrainConfig = toml::from_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn finetune_rejects_text_reduction() {
        let mut cfg: TrainConfig = toml::from_str(SAMPLE).unwrap();
        cfg.stages[1].text_reduce = "block:4".into();
        let model = cfg.model.resolve().unwrap();
        assert!(cfg.stage_specs(&model).is_err());
    }

    #[test]
    fn warmup_caps_at_1600() {
        let spec = StageSpec {
            kind: StageKind::Pretrain,
            image_reduction: None,
            text_reduction: None,
            samples: 32768 * 100_000,
            batch_size: 32768,
            base_lr: 8e-6,
            min_lr: 0.0,
            warmup_steps: None,
            resolution: 224,
        };
        assert_eq!(spec.warmup(), 1600);
        assert!((default_finetune_lr("L/16", 8e-6) - 4e-7).abs() < 1e-15);
        assert!((default_finetune_lr("B/16", 8e-6) - 8e-7).abs() < 1e-15);
    }
}
