//! Image token-length reduction: patch masking and input resizing.

use std::fmt;
use std::str::FromStr;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;

use super::patch::PatchSet;
use super::ImageError;
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ImageReduction {
    /// Drop a uniformly random subset of patches.
    Random(f64),
    /// Keep a fixed share of every 2x2 window (ratio 0.5 or 0.75).
    Grid(f64),
    /// Drop rectangles of adjacent patches.
    Block(f64),
    /// Resize the input to this side length before patching.
    Resize(usize),
}

impl ImageReduction {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Random(_) => "random",
            Self::Grid(_) => "grid",
            Self::Block(_) => "block",
            Self::Resize(_) => "resize",
        }
    }

    pub fn mask_ratio(&self) -> Option<f64> {
        match *self {
            Self::Random(r) | Self::Grid(r) | Self::Block(r) => Some(r),
            Self::Resize(_) => None,
        }
    }

    pub fn validate(&self) -> Result<(), ImageError> {
        match *self {
            Self::Random(r) | Self::Block(r) if !(0.0..1.0).contains(&r) => {
                Err(ImageError::Reduction(format!("mask ratio {} outside [0, 1)", r)))
            }
            Self::Grid(r) if r != 0.5 && r != 0.75 => {
                Err(ImageError::Reduction(format!("grid mask ratio must be 0.5 or 0.75, got {}", r)))
            }
            Self::Resize(s) if s < 4 => Err(ImageError::Reduction(format!("resize target {} below 4 px", s))),
            _ => Ok(()),
        }
    }

    /// Parses `none` (as `Ok(None)`), `random:0.75`, `grid:0.5`, `block:0.3`,
    /// `resize:112`.
    pub fn parse_optional(s: &str) -> Result<Option<Self>, ImageError> {
        if s.trim() == "none" {
            Ok(None)
        } else {
            s.parse().map(Some)
        }
    }
}

impl fmt::Display for ImageReduction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            Self::Resize(s) => write!(f, "resize:{}", s),
            Self::Random(r) | Self::Grid(r) | Self::Block(r) => write!(f, "{}:{}", self.name(), r),
        }
    }
}

impl FromStr for ImageReduction {
    type Err = ImageError;

    fn from_str(s: &str) -> Result<Self, ImageError> {
        let bad = || ImageError::Reduction(format!("cannot parse image reduction {:?}", s));
        let (name, arg) = s.split_once(':').ok_or_else(bad)?;
        let arg = arg.trim();
        let r = match name.trim() {
            "random" => Self::Random(arg.parse().map_err(|_| bad())?),
            "grid" => Self::Grid(arg.parse().map_err(|_| bad())?),
            "block" => Self::Block(arg.parse().map_err(|_| bad())?),
            "resize" => Self::Resize(arg.parse().map_err(|_| bad())?),
            _ => return Err(bad()),
        };
        r.validate()?;
        Ok(r)
    }
}

/// Patches surviving a mask of `ratio` over `n` patches.
pub fn kept_patches(n: usize, ratio: f64) -> usize {
    ((1.0 - ratio) * n as f64).round() as usize
}

/// Encoder sequence length (patches plus CLS) for a square `side` input.
pub fn kept_token_count(side: usize, patch: usize, reduction: Option<&ImageReduction>) -> usize {
    match reduction {
        None => (side / patch).pow(2) + 1,
        Some(ImageReduction::Resize(s)) => (s / patch).pow(2) + 1,
        Some(r) => kept_patches((side / patch).pow(2), r.mask_ratio().unwrap_or(0.0)) + 1,
    }
}

/// Axis-aligned rectangle on the patch grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.top && row < self.top + self.height && col >= self.left && col < self.left + self.width
    }

    /// Distance from the nearest edge; 0 on the border ring.
    fn depth(&self, row: usize, col: usize) -> usize {
        (row - self.top)
            .min(self.top + self.height - 1 - row)
            .min(col - self.left)
            .min(self.left + self.width - 1 - col)
    }
}

/// Outcome of block masking: the kept raster indices plus how they arose.
/// Every masked cell lies in some rectangle, and every cell inside a
/// rectangle is masked unless it appears in `restored`.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMask {
    pub kept: Vec<usize>,
    pub rects: Vec<Rect>,
    pub restored: Vec<usize>,
}

/// Drops random rectangles until at least `n - keep` patches are covered,
/// then un-masks the overshoot from the last rectangle, outermost ring first.
pub fn block_mask(grid_h: usize, grid_w: usize, keep: usize, rng: &mut Rng) -> BlockMask {
    let n = grid_h * grid_w;
    let deficit = n - keep.min(n);
    let mut removed = vec![false; n];
    let mut count = 0;
    let mut rects = Vec::new();
    let mut last_new: Vec<usize> = Vec::new();
    let mut misses = 0;
    while count < deficit {
        let remaining = (deficit - count) as f64;
        let area = rng.random_range(remaining.min(4.0)..=remaining);
        let aspect = rng.random_range(0.5f64.ln()..=2f64.ln()).exp();
        let mut rect = Rect {
            top: 0,
            left: 0,
            height: ((area * aspect).sqrt().round() as usize).clamp(1, grid_h),
            width: ((area / aspect).sqrt().round() as usize).clamp(1, grid_w),
        };
        rect.top = rng.random_range(0..=grid_h - rect.height);
        rect.left = rng.random_range(0..=grid_w - rect.width);
        if misses > 100 {
            // pathological tail: fall back to a single unmasked cell
            let free: Vec<usize> = (0..n).filter(|&i| !removed[i]).collect();
            let i = free[rng.random_range(0..free.len())];
            rect = Rect { top: i / grid_w, left: i % grid_w, height: 1, width: 1 };
        }
        let fresh: Vec<usize> = (rect.top..rect.top + rect.height)
            .flat_map(|r| (rect.left..rect.left + rect.width).map(move |c| r * grid_w + c))
            .filter(|&i| !removed[i])
            .collect();
        if fresh.is_empty() {
            misses += 1;
            continue;
        }
        misses = 0;
        for &i in &fresh {
            removed[i] = true;
        }
        count += fresh.len();
        rects.push(rect);
        last_new = fresh;
    }

    let mut restored = Vec::new();
    if count > deficit {
        let rect = *rects.last().expect("overshoot implies a rectangle");
        let mut candidates = last_new;
        candidates.shuffle(rng);
        candidates.sort_by_key(|&i| rect.depth(i / grid_w, i % grid_w));
        restored = candidates[..count - deficit].to_vec();
        for &i in &restored {
            removed[i] = false;
        }
        restored.sort_unstable();
    }
    let kept = (0..n).filter(|&i| !removed[i]).collect();
    BlockMask { kept, rects, restored }
}

/// Raster indices kept by a grid mask: one (ratio 0.75) or two (ratio 0.5)
/// random cells of every 2x2 window.
pub fn grid_mask(grid_h: usize, grid_w: usize, ratio: f64, rng: &mut Rng) -> Result<Vec<usize>, ImageError> {
    if !grid_h.is_multiple_of(2) || !grid_w.is_multiple_of(2) {
        return Err(ImageError::Reduction(format!("grid mask needs an even patch grid, got {}x{}", grid_h, grid_w)));
    }
    let per_window = match ratio {
        r if r == 0.75 => 1,
        r if r == 0.5 => 2,
        r => return Err(ImageError::Reduction(format!("grid mask ratio must be 0.5 or 0.75, got {}", r))),
    };
    let mut kept = Vec::with_capacity(grid_h * grid_w * per_window / 4);
    for wy in (0..grid_h).step_by(2) {
        for wx in (0..grid_w).step_by(2) {
            for k in index::sample(rng, 4, per_window) {
                kept.push((wy + k / 2) * grid_w + wx + k % 2);
            }
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

/// Raster indices kept by a uniformly random mask, in ascending order.
pub fn random_mask(n: usize, ratio: f64, rng: &mut Rng) -> Vec<usize> {
    let mut kept = index::sample(rng, n, kept_patches(n, ratio)).into_vec();
    kept.sort_unstable();
    kept
}

/// Applies a masking reduction to a full patch set. Resize reductions act on
/// the image before patching, so they pass through here unchanged.
pub fn apply_mask(patches: &PatchSet, reduction: &ImageReduction, rng: &mut Rng) -> Result<PatchSet, ImageError> {
    if patches.len() != patches.grid_h * patches.grid_w {
        return Err(ImageError::Reduction("mask applied to an already reduced patch set".into()));
    }
    reduction.validate()?;
    let (gh, gw) = (patches.grid_h, patches.grid_w);
    let kept = match *reduction {
        ImageReduction::Resize(_) => return Ok(patches.clone()),
        ImageReduction::Random(r) => random_mask(gh * gw, r, rng),
        ImageReduction::Grid(r) => grid_mask(gh, gw, r, rng)?,
        ImageReduction::Block(r) => block_mask(gh, gw, kept_patches(gh * gw, r), rng).kept,
    };
    Ok(patches.select(&kept))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagepipe::{patchify, Image};
    use crate::numerics::SeedStream;

    #[test]
    fn token_counts() {
        let cases: [(Option<ImageReduction>, usize); 8] = [
            (None, 197),
            (Some(ImageReduction::Random(0.5)), 99),
            (Some(ImageReduction::Random(0.75)), 50),
            (Some(ImageReduction::Random(0.3)), 138),
            (Some(ImageReduction::Resize(160)), 101),
            (Some(ImageReduction::Resize(112)), 50),
            (Some(ImageReduction::Resize(96)), 37),
            (Some(ImageReduction::Resize(64)), 17),
        ];
        for (r, n) in cases {
            assert_eq!(kept_token_count(224, 16, r.as_ref()), n, "{r:?}");
        }
    }

    #[test]
    fn parse_forms() {
        assert_eq!("resize:112".parse::<ImageReduction>().unwrap(), ImageReduction::Resize(112));
        assert_eq!("random:0.75".parse::<ImageReduction>().unwrap(), ImageReduction::Random(0.75));
        assert_eq!(ImageReduction::parse_optional("none").unwrap(), None);
        assert!("grid:0.3".parse::<ImageReduction>().is_err());
        assert!("random:1.0".parse::<ImageReduction>().is_err());
        assert!("blur:3".parse::<ImageReduction>().is_err());
        assert_eq!(ImageReduction::Block(0.5).to_string(), "block:0.5");
    }

    #[test]
    fn grid_keeps_one_per_window() {
        let mut rng = SeedStream::new(2).rng();
        let kept = grid_mask(14, 14, 0.75, &mut rng).unwrap();
        assert_eq!(kept.len(), 49);
        let mut per_window = [0usize; 49];
        for i in kept {
            per_window[(i / 14 / 2) * 7 + (i % 14) / 2] += 1;
        }
        assert!(per_window.iter().all(|&c| c == 1));
        assert!(grid_mask(7, 7, 0.75, &mut rng).is_err());
    }

    #[test]
    fn block_mask_hits_exact_count() {
        let mut rng = SeedStream::new(9).rng();
        for keep in [0, 1, 20, 49, 98, 150, 196] {
            let bm = block_mask(14, 14, keep, &mut rng);
            assert_eq!(bm.kept.len(), keep);
            for i in 0..196 {
                let (r, c) = (i / 14, i % 14);
                let covered = bm.rects.iter().any(|rc| rc.contains(r, c));
                let masked = !bm.kept.contains(&i);
                assert_eq!(masked, covered && !bm.restored.contains(&i));
            }
        }
    }

    #[test]
    fn apply_mask_preserves_order_and_content() {
        let mut img = Image::zeros(32, 32);
        for (i, v) in img.data.iter_mut().enumerate() {
            *v = i as f32;
        }
        let full = patchify(&img, 8).unwrap();
        let mut rng = SeedStream::new(4).rng();
        let out = apply_mask(&full, &ImageReduction::Random(0.5), &mut rng).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.indices.windows(2).all(|w| w[0] < w[1]));
        for (k, &i) in out.indices.iter().enumerate() {
            assert_eq!(out.patch(k), full.patch(i));
        }
    }
}
