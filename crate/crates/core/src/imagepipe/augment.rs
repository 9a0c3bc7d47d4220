use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::image::Image;
use super::resize::resize_antialias;
use super::ImageError;
use crate::ingest::RgbImage;
use crate::numerics::Rng;

pub const MIN_INPUT_SIDE: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub random_crop: bool,
    pub crop_area: (f64, f64),
    pub crop_aspect: (f64, f64),
    pub color_jitter: bool,
    pub jitter_strength: f64,
    pub jitter_prob: f64,
    pub grayscale: bool,
    pub grayscale_prob: f64,
    pub mean: f32,
    pub std: f32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            random_crop: true,
            crop_area: (0.4, 1.0),
            crop_aspect: (3.0 / 4.0, 4.0 / 3.0),
            color_jitter: true,
            jitter_strength: 0.32,
            jitter_prob: 0.8,
            grayscale: true,
            grayscale_prob: 0.2,
            mean: 0.5,
            std: 0.5,
        }
    }
}

impl AugmentConfig {
    /// Resize and standardize only.
    pub fn none() -> Self {
        Self { random_crop: false, color_jitter: false, grayscale: false, ..Self::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

/// Samples a crop covering a random fraction of the area with a log-uniform
/// aspect ratio. Falls back to the largest centered crop within the aspect
/// bounds after ten rejected draws.
pub fn sample_crop(height: usize, width: usize, cfg: &AugmentConfig, rng: &mut Rng) -> CropBox {
    let area = (height * width) as f64;
    let (alo, ahi) = (cfg.crop_aspect.0.ln(), cfg.crop_aspect.1.ln());
    for _ in 0..10 {
        let target = area * rng.random_range(cfg.crop_area.0..=cfg.crop_area.1);
        let aspect = rng.random_range(alo..=ahi).exp();
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if w >= 1 && h >= 1 && w <= width && h <= height {
            let top = rng.random_range(0..=height - h);
            let left = rng.random_range(0..=width - w);
            return CropBox { top, left, height: h, width: w };
        }
    }
    let ratio = width as f64 / height as f64;
    let (h, w) = if ratio < cfg.crop_aspect.0 {
        (((width as f64 / cfg.crop_aspect.0).round() as usize).min(height), width)
    } else if ratio > cfg.crop_aspect.1 {
        (height, ((height as f64 * cfg.crop_aspect.1).round() as usize).min(width))
    } else {
        (height, width)
    };
    CropBox { top: (height - h) / 2, left: (width - w) / 2, height: h, width: w }
}

fn luma(p: [f32; 3]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn jitter(img: &mut Image, strength: f64, rng: &mut Rng) {
    let s = strength * 0.8;
    let brightness = rng.random_range(1.0 - s..=1.0 + s) as f32;
    let contrast = rng.random_range(1.0 - s..=1.0 + s) as f32;
    let saturation = rng.random_range(1.0 - s..=1.0 + s) as f32;
    let hue = rng.random_range(-0.2 * strength..=0.2 * strength) as f32;

    for v in &mut img.data {
        *v = (*v * brightness).clamp(0.0, 1.0);
    }
    let n = (img.height * img.width) as f32;
    let mean_luma = img.data.chunks(3).map(|p| luma([p[0], p[1], p[2]])).sum::<f32>() / n;
    for v in &mut img.data {
        *v = ((*v - mean_luma) * contrast + mean_luma).clamp(0.0, 1.0);
    }
    // saturation and hue act in YIQ: scale then rotate the chroma plane
    let (sin, cos) = (hue * std::f32::consts::TAU).sin_cos();
    for p in img.data.chunks_mut(3) {
        let y = 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
        let i = 0.596 * p[0] - 0.274 * p[1] - 0.322 * p[2];
        let q = 0.211 * p[0] - 0.523 * p[1] + 0.312 * p[2];
        let (i, q) = ((i * cos - q * sin) * saturation, (i * sin + q * cos) * saturation);
        p[0] = (y + 0.956 * i + 0.621 * q).clamp(0.0, 1.0);
        p[1] = (y - 0.272 * i - 0.647 * q).clamp(0.0, 1.0);
        p[2] = (y - 1.106 * i + 1.703 * q).clamp(0.0, 1.0);
    }
}

fn to_grayscale(img: &mut Image) {
    for p in img.data.chunks_mut(3) {
        let y = luma([p[0], p[1], p[2]]);
        p.fill(y);
    }
}

/// Training-time view of a stored image at `size x size`, standardized.
pub fn augment(img: &RgbImage, size: usize, cfg: &AugmentConfig, rng: &mut Rng) -> Result<Image, ImageError> {
    if img.height < MIN_INPUT_SIDE || img.width < MIN_INPUT_SIDE {
        return Err(ImageError::Size(format!(
            "input {}x{} below {}x{}",
            img.height, img.width, MIN_INPUT_SIDE, MIN_INPUT_SIDE
        )));
    }
    let full = Image::from_rgb8(img);
    let cropped = if cfg.random_crop {
        let b = sample_crop(img.height, img.width, cfg, rng);
        full.crop(b.top, b.left, b.height, b.width)?
    } else {
        full
    };
    let mut out = resize_antialias(&cropped, size, size)?;
    if cfg.color_jitter && rng.random_bool(cfg.jitter_prob) {
        jitter(&mut out, cfg.jitter_strength, rng);
    }
    if cfg.grayscale && rng.random_bool(cfg.grayscale_prob) {
        to_grayscale(&mut out);
    }
    out.standardize(cfg.mean, cfg.std);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::SeedStream;

    #[test]
    fn crop_fraction_respects_bounds() {
        let cfg = AugmentConfig::default();
        let mut rng = SeedStream::new(3).rng();
        let mut min_frac: f64 = 1.0;
        for _ in 0..10_000 {
            let b = sample_crop(224, 224, &cfg, &mut rng);
            assert!(b.top + b.height <= 224 && b.left + b.width <= 224);
            min_frac = min_frac.min((b.height * b.width) as f64 / (224.0 * 224.0));
        }
        // rounding each side may shave at most about one row and column
        assert!(min_frac >= 0.4 - 2.0 / 224.0, "{min_frac}");
        assert!(min_frac < 0.42);
    }

    #[test]
    fn small_inputs_are_rejected() {
        let img = RgbImage::filled(7, 32, [10, 20, 30]);
        let mut rng = SeedStream::new(0).rng();
        assert!(matches!(augment(&img, 16, &AugmentConfig::default(), &mut rng), Err(ImageError::Size(_))));
    }

    #[test]
    fn plain_pipeline_standardizes() {
        let img = RgbImage::filled(16, 16, [255, 0, 128]);
        let mut rng = SeedStream::new(0).rng();
        let out = augment(&img, 8, &AugmentConfig::none(), &mut rng).unwrap();
        let p = out.pixel(3, 3);
        assert!((p[0] - 1.0).abs() < 1e-6);
        assert!((p[1] + 1.0).abs() < 1e-6);
        assert!((p[2] - (128.0 / 255.0 - 0.5) / 0.5).abs() < 1e-5);
    }

    #[test]
    fn augmented_values_stay_in_range() {
        let mut img = RgbImage::filled(24, 24, [0, 0, 0]);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = (i * 37 % 256) as u8;
        }
        let mut rng = SeedStream::new(5).rng();
        for _ in 0..50 {
            let out = augment(&img, 16, &AugmentConfig::default(), &mut rng).unwrap();
            assert!(out.data.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
    }
}
