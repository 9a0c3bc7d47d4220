//! Procedural image-caption pairs.
//!
//! Each image holds one colored target shape, fully in frame, drawn over a
//! dark noisy background and a few gray distractor shapes. The caption names
//! the target's color and shape, so the pair is learnable and the label is
//! recoverable from pixels.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::shard::{PairRecord, RgbImage, Shard};
use super::IngestError;
use crate::numerics::SeedStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Diamond,
    Cross,
}

impl ShapeKind {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "circle" => Some(Self::Circle),
            "square" => Some(Self::Square),
            "triangle" => Some(Self::Triangle),
            "diamond" => Some(Self::Diamond),
            "cross" => Some(Self::Cross),
            _ => None,
        }
    }

    /// Whether the point `(u, v)` in `[-1, 1]^2` lies inside the unit shape.
    pub fn contains(self, u: f64, v: f64) -> bool {
        match self {
            Self::Circle => u * u + v * v <= 1.0,
            Self::Square => u.abs() <= 1.0 && v.abs() <= 1.0,
            // apex at the top, base at the bottom
            Self::Triangle => (-1.0..=1.0).contains(&v) && u.abs() <= (v + 1.0) / 2.0,
            Self::Diamond => u.abs() + v.abs() <= 1.0,
            Self::Cross => (u.abs() <= 0.34 && v.abs() <= 1.0) || (v.abs() <= 0.34 && u.abs() <= 1.0),
        }
    }
}

/// Named palette entries usable as target colors.
pub fn palette(name: &str) -> Option<[u8; 3]> {
    Some(match name {
        "red" => [220, 40, 40],
        "green" => [40, 190, 60],
        "blue" => [50, 90, 235],
        "yellow" => [235, 215, 40],
        "purple" => [150, 60, 210],
        "orange" => [245, 140, 30],
        "cyan" => [40, 210, 220],
        "pink" => [245, 120, 190],
        _ => return None,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub records: usize,
    pub image_size: usize,
    pub shapes: Vec<String>,
    pub colors: Vec<String>,
    pub templates: Vec<String>,
    pub distractors_min: usize,
    pub distractors_max: usize,
    /// Target side length as a fraction of the image side.
    pub target_scale: (f64, f64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            records: 1000,
            image_size: 32,
            shapes: ["circle", "square", "triangle"].map(String::from).to_vec(),
            colors: ["red", "green", "blue", "yellow"].map(String::from).to_vec(),
            templates: default_templates(),
            distractors_min: 0,
            distractors_max: 2,
            target_scale: (0.35, 0.6),
        }
    }
}

pub fn default_templates() -> Vec<String> {
    [
        "a {color} {shape}",
        "a photo of a {color} {shape}",
        "a {color} {shape} on a dark background",
        "there is a {color} {shape} in the picture",
        "a small picture of one {color} {shape} with gray clutter",
        "the {shape} is {color}",
    ]
    .map(String::from)
    .to_vec()
}

impl SynthConfig {
    /// Reads a TOML config; missing keys take their defaults.
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, IngestError> {
        toml::from_str(&std::fs::read_to_string(path)?).map_err(|e| IngestError::Config(e.to_string()))
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.len() * self.colors.len()
    }

    /// Class id for a (shape, color) pair.
    pub fn class_id(&self, shape: usize, color: usize) -> u32 {
        (shape * self.colors.len() + color) as u32
    }

    /// Human-readable class names, `"<color> <shape>"`, indexed by class id.
    pub fn class_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.num_classes());
        for s in &self.shapes {
            for c in &self.colors {
                names.push(format!("{} {}", c, s));
            }
        }
        names
    }

    fn validate(&self) -> Result<(Vec<ShapeKind>, Vec<[u8; 3]>), IngestError> {
        if self.shapes.is_empty() || self.colors.is_empty() || self.templates.is_empty() {
            return Err(IngestError::Config("shape, color and template vocabularies must be non-empty".into()));
        }
        let shapes = self
            .shapes
            .iter()
            .map(|s| ShapeKind::parse(s).ok_or_else(|| IngestError::Config(format!("unknown shape {:?}", s))))
            .collect::<Result<Vec<_>, _>>()?;
        let colors = self
            .colors
            .iter()
            .map(|c| palette(c).ok_or_else(|| IngestError::Config(format!("unknown color {:?}", c))))
            .collect::<Result<Vec<_>, _>>()?;
        for t in &self.templates {
            if !t.contains("{color}") || !t.contains("{shape}") {
                return Err(IngestError::Config(format!("template {:?} needs {{color}} and {{shape}}", t)));
            }
        }
        if self.image_size < 8 || self.image_size > u16::MAX as usize {
            return Err(IngestError::Config(format!("image size {} out of range", self.image_size)));
        }
        let (lo, hi) = self.target_scale;
        if !(0.0 < lo && lo <= hi && hi <= 1.0) {
            return Err(IngestError::Config(format!("target scale {:?} out of (0, 1]", self.target_scale)));
        }
        if self.distractors_min > self.distractors_max {
            return Err(IngestError::Config("distractor range is inverted".into()));
        }
        Ok((shapes, colors))
    }
}

fn draw(img: &mut RgbImage, shape: ShapeKind, cy: f64, cx: f64, half: f64, rgb: [u8; 3]) {
    let y0 = (cy - half).floor().max(0.0) as usize;
    let x0 = (cx - half).floor().max(0.0) as usize;
    let y1 = ((cy + half).ceil() as usize).min(img.height);
    let x1 = ((cx + half).ceil() as usize).min(img.width);
    for y in y0..y1 {
        for x in x0..x1 {
            let v = -((y as f64 + 0.5 - cy) / half);
            let u = (x as f64 + 0.5 - cx) / half;
            if shape.contains(u, v) {
                img.set_pixel(y, x, rgb);
            }
        }
    }
}

/// Generates one record from its own seed stream.
fn generate_record(
    cfg: &SynthConfig,
    shapes: &[ShapeKind],
    colors: &[[u8; 3]],
    stream: SeedStream,
) -> PairRecord {
    let mut rng = stream.rng();
    let n = cfg.image_size;
    let mut img = RgbImage::filled(n, n, [0, 0, 0]);
    for px in img.data.chunks_mut(3) {
        let base = rng.random_range(8u8..36);
        px[0] = base.saturating_add(rng.random_range(0..6));
        px[1] = base.saturating_add(rng.random_range(0..6));
        px[2] = base.saturating_add(rng.random_range(0..6));
    }
    let shape_idx = rng.random_range(0..shapes.len());
    let color_idx = rng.random_range(0..colors.len());
    let distractors = rng.random_range(cfg.distractors_min..=cfg.distractors_max);
    for _ in 0..distractors {
        let kind = shapes[rng.random_range(0..shapes.len())];
        let half = n as f64 * rng.random_range(0.08..0.16);
        let cy = rng.random_range(half..n as f64 - half);
        let cx = rng.random_range(half..n as f64 - half);
        let g = rng.random_range(95u8..150);
        draw(&mut img, kind, cy, cx, half, [g, g, g]);
    }
    let (lo, hi) = cfg.target_scale;
    let side = n as f64 * if lo < hi { rng.random_range(lo..=hi) } else { lo };
    let half = side / 2.0;
    let cy = if half < n as f64 - half { rng.random_range(half..=n as f64 - half) } else { n as f64 / 2.0 };
    let cx = if half < n as f64 - half { rng.random_range(half..=n as f64 - half) } else { n as f64 / 2.0 };
    draw(&mut img, shapes[shape_idx], cy, cx, half, colors[color_idx]);
    let template = &cfg.templates[rng.random_range(0..cfg.templates.len())];
    let caption = template
        .replace("{color}", &cfg.colors[color_idx])
        .replace("{shape}", &cfg.shapes[shape_idx]);
    PairRecord { image: img, caption, class_id: Some(cfg.class_id(shape_idx, color_idx)) }
}

pub fn synth_generate(cfg: &SynthConfig) -> Result<Shard, IngestError> {
    let (shapes, colors) = cfg.validate()?;
    let root = SeedStream::new(cfg.seed).named("synth");
    let records = (0..cfg.records)
        .map(|i| generate_record(cfg, &shapes, &colors, root.at(i as u64)))
        .collect();
    Shard::new(cfg.image_size, cfg.image_size, records)
}
