//! Zero-shot classification and cross-modal retrieval.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::imagepipe::{patchify, resize_antialias, AugmentConfig, Image, ImageError};
use crate::ingest::{RgbImage, Shard};
use crate::model::{DualEncoder, ModelError};
use crate::numerics::{ops, NumericsError, Tensor};
use crate::textpipe::Tokenizer;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("prompts: {0}")]
    Prompts(String),
    #[error("evaluation: {0}")]
    Input(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub const DEFAULT_TEMPLATES: [&str; 8] = [
    "a photo of a {}.",
    "a {}.",
    "a picture of a {}",
    "there is a {} in the picture",
    "an image of one {}",
    "a {} on a dark background",
    "a small {}",
    "the {}",
];

/// Caption templates (each with one `{}`) and the class names they wrap.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    pub templates: Vec<String>,
    pub class_names: Vec<String>,
}

impl PromptSet {
    pub fn new(templates: Vec<String>, class_names: Vec<String>) -> Result<Self, EvalError> {
        if templates.is_empty() {
            return Err(EvalError::Prompts("no templates".into()));
        }
        if let Some(t) = templates.iter().find(|t| t.matches("{}").count() != 1) {
            return Err(EvalError::Prompts(format!("template {:?} must contain exactly one {{}}", t)));
        }
        if class_names.is_empty() {
            return Err(EvalError::Prompts("no class names".into()));
        }
        Ok(Self { templates, class_names })
    }

    pub fn with_default_templates(class_names: Vec<String>) -> Result<Self, EvalError> {
        Self::new(DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(), class_names)
    }

    /// One template per non-blank line.
    pub fn load_templates(path: impl AsRef<Path>) -> Result<Vec<String>, EvalError> {
        Ok(fs::read_to_string(path)?
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect())
    }

    pub fn fill(&self, template: usize, class: usize) -> String {
        self.templates[template].replacen("{}", &self.class_names[class], 1)
    }
}

/// One unit-norm text embedding per class, `[classes, embed_dim]`.
#[derive(Clone, Debug)]
pub struct ZeroShotClassifier {
    pub weights: Tensor<f32>,
}

/// Averages the embeddings of every filled template per class and
/// re-normalizes.
pub fn build_classifier(
    prompts: &PromptSet,
    model: &DualEncoder<f32>,
    tokenizer: &Tokenizer,
) -> Result<ZeroShotClassifier, EvalError> {
    let cap = model.config.text.max_seq_len;
    let d = model.config.embed_dim;
    let mut rows = Vec::with_capacity(prompts.class_names.len() * d);
    for c in 0..prompts.class_names.len() {
        let texts: Vec<_> =
            (0..prompts.templates.len()).map(|t| tokenizer.tokenize(&prompts.fill(t, c), cap)).collect();
        let emb = model.encode_text(&texts)?;
        let mut mean = vec![0f32; d];
        for r in 0..texts.len() {
            for (m, &v) in mean.iter_mut().zip(emb.row(r)) {
                *m += v;
            }
        }
        rows.extend(mean);
    }
    let (weights, _) = ops::l2_normalize(&Tensor::new(&[prompts.class_names.len(), d], rows)?);
    Ok(ZeroShotClassifier { weights })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PreprocessMode {
    /// Shorter side to `res * 256 / 224`, then a centered `res` crop.
    CenterCrop,
    /// Plain resize to `res x res`.
    Direct,
}

/// Deterministic evaluation view in `[0, 1]` (not yet standardized).
pub fn eval_preprocess(img: &RgbImage, res: usize, mode: PreprocessMode) -> Result<Image, EvalError> {
    let full = Image::from_rgb8(img);
    match mode {
        PreprocessMode::Direct => Ok(resize_antialias(&full, res, res)?),
        PreprocessMode::CenterCrop => {
            let short = (res as f64 * 256.0 / 224.0).round() as usize;
            let s = img.height.min(img.width) as f64;
            let (h, w) = if img.height <= img.width {
                (short, ((img.width as f64 * short as f64 / s).round() as usize).max(short))
            } else {
                (((img.height as f64 * short as f64 / s).round() as usize).max(short), short)
            };
            let resized = resize_antialias(&full, h, w)?;
            Ok(resized.crop((h - res) / 2, (w - res) / 2, res, res)?)
        }
    }
}

/// Image embeddings for a whole shard, computed in chunks.
pub fn encode_shard_images(
    model: &DualEncoder<f32>,
    shard: &Shard,
    res: usize,
    mode: PreprocessMode,
) -> Result<Tensor<f32>, EvalError> {
    let norm = AugmentConfig::none();
    let mut parts = Vec::new();
    for chunk in shard.records.chunks(128) {
        let mut batch = Vec::with_capacity(chunk.len());
        for rec in chunk {
            let mut img = eval_preprocess(&rec.image, res, mode)?;
            img.standardize(norm.mean, norm.std);
            batch.push(patchify(&img, model.config.vision.patch_size)?);
        }
        parts.push(model.encode_image(&batch)?);
    }
    Ok(Tensor::concat_rows(&parts)?)
}

/// Caption embeddings for a whole shard at full text length.
pub fn encode_shard_texts(model: &DualEncoder<f32>, shard: &Shard, tokenizer: &Tokenizer) -> Result<Tensor<f32>, EvalError> {
    let cap = model.config.text.max_seq_len;
    let mut parts = Vec::new();
    for chunk in shard.records.chunks(256) {
        let texts: Vec<_> = chunk.iter().map(|r| tokenizer.tokenize(&r.caption, cap)).collect();
        parts.push(model.encode_text(&texts)?);
    }
    Ok(Tensor::concat_rows(&parts)?)
}

/// Index of the largest value; ties go to the lowest index.
fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Predicted class per image row.
pub fn predict(img_embs: &Tensor<f32>, classifier: &ZeroShotClassifier) -> Result<Vec<usize>, EvalError> {
    let logits = ops::matmul_nt(img_embs, &classifier.weights)?;
    Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect())
}

/// Top-1 accuracy of `predict` against labels.
pub fn classify(img_embs: &Tensor<f32>, labels: &[usize], classifier: &ZeroShotClassifier) -> Result<f64, EvalError> {
    if labels.len() != img_embs.rows() || labels.is_empty() {
        return Err(EvalError::Input(format!("{} labels for {} images", labels.len(), img_embs.rows())));
    }
    let preds = predict(img_embs, classifier)?;
    let hits = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Labels of a shard; records without a class are an error.
pub fn shard_labels(shard: &Shard) -> Result<Vec<usize>, EvalError> {
    shard
        .records
        .iter()
        .enumerate()
        .map(|(i, r)| r.class_id.map(|c| c as usize).ok_or_else(|| EvalError::Input(format!("record {} has no class", i))))
        .collect()
}

/// Zero-shot top-1 accuracy of `model` on a labeled shard.
pub fn zero_shot_accuracy(
    model: &DualEncoder<f32>,
    shard: &Shard,
    prompts: &PromptSet,
    tokenizer: &Tokenizer,
    res: usize,
    mode: PreprocessMode,
) -> Result<f64, EvalError> {
    let labels = shard_labels(shard)?;
    if let Some(&bad) = labels.iter().find(|&&l| l >= prompts.class_names.len()) {
        return Err(EvalError::Input(format!("class {} has no name ({} known)", bad, prompts.class_names.len())));
    }
    let clf = build_classifier(prompts, model, tokenizer)?;
    classify(&encode_shard_images(model, shard, res, mode)?, &labels, &clf)
}

/// Recall@k in both directions for row-aligned pairs. A row's rank counts
/// strictly larger similarities plus equal ones at lower indices.
pub fn retrieval_recall(img_embs: &Tensor<f32>, txt_embs: &Tensor<f32>, k: usize) -> Result<(f64, f64), EvalError> {
    let n = img_embs.rows();
    if txt_embs.rows() != n || n == 0 {
        return Err(EvalError::Input(format!("{} images vs {} texts", n, txt_embs.rows())));
    }
    if k == 0 || k > n {
        return Err(EvalError::Input(format!("k = {} outside 1..={}", k, n)));
    }
    let sims = ops::matmul_nt(img_embs, txt_embs)?;
    let rank = |score: &dyn Fn(usize) -> f32, i: usize| {
        let own = score(i);
        (0..n).filter(|&j| j != i && (score(j) > own || (score(j) == own && j < i))).count()
    };
    let mut i2t = 0;
    let mut t2i = 0;
    for i in 0..n {
        if rank(&|j| sims.row(i)[j], i) < k {
            i2t += 1;
        }
        if rank(&|j| sims.row(j)[i], i) < k {
            t2i += 1;
        }
    }
    Ok((i2t as f64 / n as f64, t2i as f64 / n as f64))
}
