use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::textpipe::Vocab;

/// How a tower turns its output sequence into one feature vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    /// Mean over patch tokens, CLS excluded.
    Gap,
    /// Output at position 0.
    Cls,
    /// Output at the last real (non-pad) token.
    Eot,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub layers: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Image tower only; 0 for text.
    pub patch_size: usize,
    pub max_seq_len: usize,
    pub pooling: Pooling,
    /// Text tower only; 0 for images.
    pub vocab_size: usize,
}

impl EncoderConfig {
    fn vision(layers: usize, width: usize, heads: usize, patch_size: usize) -> Self {
        Self { layers, width, heads, mlp_ratio: 4, patch_size, max_seq_len: 1025, pooling: Pooling::Gap, vocab_size: 0 }
    }

    fn text(layers: usize, width: usize, heads: usize, vocab_size: usize) -> Self {
        Self { layers, width, heads, mlp_ratio: 4, patch_size: 0, max_seq_len: 32, pooling: Pooling::Cls, vocab_size }
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    /// Parameters of the transformer stack alone (blocks plus final norm).
    fn stack_params(&self) -> usize {
        let (d, h) = (self.width, self.width * self.mlp_ratio);
        let per_block = (3 * d * d + 3 * d) + (d * d + d) + (d * h + h) + (h * d + d) + 4 * d;
        self.layers * per_block + 2 * d
    }

    /// Multiply-accumulates of the stack for a sequence of `n` tokens.
    fn stack_macs(&self, n: usize) -> f64 {
        let (n, d, r) = (n as f64, self.width as f64, self.mlp_ratio as f64);
        // qkv + output projection 4nd^2, scores and weighted sum 2n^2d, MLP 2r nd^2
        self.layers as f64 * ((4.0 + 2.0 * r) * n * d * d + 2.0 * n * n * d)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    pub embed_dim: usize,
    /// Default full-token input resolution.
    pub image_size: usize,
    pub vision: EncoderConfig,
    pub text: EncoderConfig,
    pub init_inv_temperature: f64,
    pub max_inv_temperature: f64,
}

pub const PRESETS: &[&str] = &["tiny", "mini", "S/16", "B/16", "L/16", "H/14", "G/14"];

const LARGE_VOCAB: usize = 32000;

impl ModelConfig {
    pub fn preset(name: &str) -> Result<Self, ModelError> {
        let desk_vocab = Vocab::bundled().len();
        let (embed_dim, image_size, vision, text) = match name {
            "tiny" => (64, 32, EncoderConfig::vision(2, 64, 2, 4), EncoderConfig::text(2, 64, 2, desk_vocab)),
            "mini" => (192, 32, EncoderConfig::vision(6, 192, 3, 4), EncoderConfig::text(6, 192, 3, desk_vocab)),
            "S/16" => (384, 224, EncoderConfig::vision(12, 384, 6, 16), EncoderConfig::text(12, 384, 6, LARGE_VOCAB)),
            "B/16" => (512, 224, EncoderConfig::vision(12, 768, 12, 16), EncoderConfig::text(12, 512, 8, LARGE_VOCAB)),
            "L/16" => (768, 224, EncoderConfig::vision(24, 1024, 16, 16), EncoderConfig::text(12, 768, 12, LARGE_VOCAB)),
            "H/14" => (1024, 224, EncoderConfig::vision(32, 1280, 16, 14), EncoderConfig::text(24, 1024, 16, LARGE_VOCAB)),
            "G/14" => (1280, 224, EncoderConfig::vision(48, 1664, 16, 14), EncoderConfig::text(32, 1280, 20, LARGE_VOCAB)),
            _ => return Err(ModelError::Config(format!("unknown preset {:?}; known: {}", name, PRESETS.join(", ")))),
        };
        let mut cfg = Self {
            name: name.to_string(),
            embed_dim,
            image_size,
            vision,
            text,
            init_inv_temperature: 1.0 / 0.07,
            max_inv_temperature: 100.0,
        };
        if name == "tiny" || name == "mini" {
            cfg.vision.max_seq_len = 257;
            // the longest synthetic caption is 11 tokens with CLS
            cfg.text.max_seq_len = 12;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        for (tower, c) in [("vision", &self.vision), ("text", &self.text)] {
            if c.layers == 0 || c.width == 0 || c.heads == 0 || c.width % c.heads != 0 {
                return Err(ModelError::Config(format!(
                    "{} tower: width {} must be a positive multiple of heads {}",
                    tower, c.width, c.heads
                )));
            }
            if c.mlp_ratio == 0 || c.max_seq_len < 2 {
                return Err(ModelError::Config(format!("{} tower: bad mlp ratio or sequence length", tower)));
            }
        }
        if self.vision.patch_size == 0 || !self.vision.width.is_multiple_of(4) {
            return Err(ModelError::Config("vision tower needs a patch size and a width divisible by 4".into()));
        }
        if self.vision.pooling == Pooling::Eot {
            return Err(ModelError::Config("end-token pooling applies to the text tower only".into()));
        }
        if self.text.vocab_size < 5 || self.text.pooling == Pooling::Gap {
            return Err(ModelError::Config("text tower needs a vocabulary and CLS or end-token pooling".into()));
        }
        if self.embed_dim == 0 || !(self.init_inv_temperature > 0.0) || self.max_inv_temperature < self.init_inv_temperature {
            return Err(ModelError::Config("bad embedding dimension or temperature bounds".into()));
        }
        Ok(())
    }

    pub fn vision_params(&self) -> usize {
        let (d, p) = (self.vision.width, self.vision.patch_size);
        (p * p * 3 * d + d) + d + self.vision.stack_params() + d * self.embed_dim
    }

    pub fn text_params(&self) -> usize {
        let d = self.text.width;
        self.text.vocab_size * d + self.text.max_seq_len * d + self.text.stack_params() + d * self.embed_dim
    }

    /// Exact trainable element count of [`super::DualEncoder`] for this config.
    pub fn param_count(&self) -> usize {
        self.vision_params() + self.text_params() + 1
    }

    /// Forward cost per sample in GFLOPs, where one multiply-accumulate counts
    /// as one operation. `img_tokens` and `txt_tokens` include CLS.
    pub fn flops_estimate(&self, img_tokens: usize, txt_tokens: usize) -> f64 {
        let (dv, dt, p) = (self.vision.width as f64, self.text.width as f64, self.vision.patch_size as f64);
        let patches = img_tokens.saturating_sub(1) as f64;
        let vision = patches * p * p * 3.0 * dv + self.vision.stack_macs(img_tokens) + dv * self.embed_dim as f64;
        let text = self.text.stack_macs(txt_tokens) + dt * self.embed_dim as f64;
        (vision + text) / 1e9
    }
}

pub fn param_count(cfg: &ModelConfig) -> usize {
    cfg.param_count()
}

pub fn flops_estimate(cfg: &ModelConfig, img_tokens: usize, txt_tokens: usize) -> f64 {
    cfg.flops_estimate(img_tokens, txt_tokens)
}
