//! Separable triangle-filter resampling.
//!
//! When shrinking, the filter support widens with the scale factor so every
//! source pixel contributes (anti-aliasing). When enlarging, it is plain
//! bilinear interpolation.

use super::image::Image;
use super::ImageError;

/// Contributions of source pixels to one output pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct Taps {
    pub start: usize,
    pub weights: Vec<f64>,
}

pub fn resize_weights(src: usize, dst: usize) -> Vec<Taps> {
    let scale = src as f64 / dst as f64;
    let filter_scale = scale.max(1.0);
    let support = filter_scale;
    (0..dst)
        .map(|i| {
            let center = (i as f64 + 0.5) * scale;
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(src);
            let mut weights: Vec<f64> = (lo..hi)
                .map(|j| (1.0 - ((j as f64 + 0.5 - center) / filter_scale).abs()).max(0.0))
                .collect();
            let sum: f64 = weights.iter().sum();
            weights.iter_mut().for_each(|w| *w /= sum);
            let first = weights.iter().position(|&w| w > 0.0).unwrap_or(0);
            let last = weights.iter().rposition(|&w| w > 0.0).map_or(weights.len(), |p| p + 1);
            Taps { start: lo + first, weights: weights[first..last].to_vec() }
        })
        .collect()
}

pub fn resize_antialias(img: &Image, height: usize, width: usize) -> Result<Image, ImageError> {
    if height < 4 || width < 4 {
        return Err(ImageError::Size(format!("resize target {}x{} below 4 px", height, width)));
    }
    if height == img.height && width == img.width {
        return Ok(img.clone());
    }
    // horizontal pass
    let wx = resize_weights(img.width, width);
    let mut tmp = vec![0f64; img.height * width * 3];
    for y in 0..img.height {
        for (x, taps) in wx.iter().enumerate() {
            let mut acc = [0f64; 3];
            for (k, &w) in taps.weights.iter().enumerate() {
                let p = (y * img.width + taps.start + k) * 3;
                for c in 0..3 {
                    acc[c] += w * img.data[p + c] as f64;
                }
            }
            tmp[(y * width + x) * 3..(y * width + x) * 3 + 3].copy_from_slice(&acc);
        }
    }
    // vertical pass
    let wy = resize_weights(img.height, height);
    let mut out = Image::zeros(height, width);
    for (y, taps) in wy.iter().enumerate() {
        for x in 0..width {
            let mut acc = [0f64; 3];
            for (k, &w) in taps.weights.iter().enumerate() {
                let p = ((taps.start + k) * width + x) * 3;
                for c in 0..3 {
                    acc[c] += w * tmp[p + c];
                }
            }
            for c in 0..3 {
                out.data[(y * width + x) * 3 + c] = acc[c] as f32;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checkerboard(n: usize) -> Image {
        let mut img = Image::zeros(n, n);
        for y in 0..n {
            for x in 0..n {
                let v = ((x + y) % 2) as f32;
                img.data[(y * n + x) * 3..(y * n + x) * 3 + 3].fill(v);
            }
        }
        img
    }

    #[test]
    fn same_size_is_identity() {
        let img = checkerboard(8);
        assert_eq!(resize_antialias(&img, 8, 8).unwrap(), img);
        // the weights themselves also reduce to a single unit tap
        for t in resize_weights(8, 8) {
            assert_eq!(t.weights, vec![1.0]);
        }
    }

    #[test]
    fn weights_sum_to_one() {
        for (src, dst) in [(224, 112), (224, 64), (32, 16), (16, 48), (37, 11), (7, 7)] {
            for t in resize_weights(src, dst) {
                let s: f64 = t.weights.iter().sum();
                assert!((s - 1.0).abs() < 1e-6, "{src}->{dst}: {s}");
            }
        }
    }

    #[test]
    fn constant_image_stays_constant() {
        let mut img = Image::zeros(20, 30);
        img.data.fill(0.37);
        for (h, w) in [(10, 15), (40, 60), (7, 9)] {
            let out = resize_antialias(&img, h, w).unwrap();
            assert!(out.data.iter().all(|&v| (v - 0.37).abs() < 1e-6));
        }
    }

    #[test]
    fn checkerboard_downsample_averages_cells() {
        // 8x8 -> 4x4: interior outputs use taps [1, 3, 3, 1] / 8, which land
        // exactly on mid-gray. The edge outputs lose one tap and renormalize
        // to [3, 3, 1] / 7, so the four corners get 24/49 or 25/49.
        let out = resize_antialias(&checkerboard(8), 4, 4).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                let expect = match (y, x) {
                    (0, 0) | (3, 3) => 24.0 / 49.0,
                    (0, 3) | (3, 0) => 25.0 / 49.0,
                    _ => 0.5,
                };
                assert!((out.pixel(y, x)[0] as f64 - expect).abs() < 1e-6, "({y}, {x}): {:?}", out.pixel(y, x));
            }
        }
    }

    #[test]
    fn tiny_target_is_rejected() {
        assert!(resize_antialias(&checkerboard(8), 3, 8).is_err());
    }
}
