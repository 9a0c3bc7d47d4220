use clipa_core::imagepipe::{
    apply_mask, block_mask, grid_mask, kept_patches, kept_token_count, patchify, random_mask, resize_antialias,
    resize_weights, Image, ImageReduction,
};
use clipa_core::numerics::SeedStream;
use proptest::prelude::*;

fn rng(seed: u64) -> clipa_core::numerics::Rng {
    SeedStream::new(seed).rng()
}

/// Keep counts per position over `draws` seeds, plus the chi-square of
/// those counts against a uniform keep probability.
fn random_mask_counts(n: usize, ratio: f64, draws: u64) -> (Vec<usize>, f64, f64) {
    let mut counts = vec![0usize; n];
    for seed in 0..draws {
        for i in random_mask(n, ratio, &mut rng(seed)) {
            counts[i] += 1;
        }
    }
    let p = kept_patches(n, ratio) as f64 / n as f64;
    let mean = draws as f64 * p;
    let var = draws as f64 * p * (1.0 - p);
    let chi2 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / var).sum();
    (counts, mean, chi2)
}

#[test]
fn random_mask_is_uniform_over_ten_thousand_seeds() {
    let n = 196;
    let (counts, mean, chi2) = random_mask_counts(n, 0.75, 10_000);
    // sum of n unit-variance z^2 terms: mean n, sd about sqrt(2n)
    let sd = (2.0 * n as f64).sqrt();
    assert!((chi2 - n as f64).abs() <= 3.0 * sd, "chi2 {chi2} vs {n} ± {}", 3.0 * sd);
    let sigma = (10_000.0 * 0.25 * 0.75f64).sqrt();
    for (i, &c) in counts.iter().enumerate() {
        assert!((c as f64 - mean).abs() <= 4.5 * sigma, "position {i}: {c} vs {mean}");
    }
}

#[test]
fn grid_mask_keeps_the_right_share_of_every_window() {
    for (ratio, per_window) in [(0.75, 1), (0.5, 2)] {
        for seed in 0..2_000 {
            let kept = grid_mask(14, 14, ratio, &mut rng(seed)).unwrap();
            let mut windows = vec![0usize; 49];
            for i in &kept {
                windows[(i / 14 / 2) * 7 + (i % 14) / 2] += 1;
            }
            assert!(windows.iter().all(|&w| w == per_window), "seed {seed}: {windows:?}");
            assert!(kept.windows(2).all(|w| w[0] < w[1]));
        }
    }
    assert!(grid_mask(7, 7, 0.75, &mut rng(0)).is_err());
    assert!(grid_mask(14, 14, 0.3, &mut rng(0)).is_err());
}

#[test]
fn grid_mask_window_choice_is_uniform() {
    // in window 0 each of its 4 cells should be the survivor 1/4 of the time
    let draws = 8_000;
    let mut counts = [0usize; 4];
    for seed in 0..draws {
        let kept = grid_mask(4, 4, 0.75, &mut rng(seed)).unwrap();
        let first = kept.iter().find(|&&i| i / 4 < 2 && i % 4 < 2).unwrap();
        counts[(first / 4) * 2 + first % 4] += 1;
    }
    let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
    for c in counts {
        assert!((c as f64 - draws as f64 / 4.0).abs() <= 3.0 * sigma, "{counts:?}");
    }
}

proptest! {
    #[test]
    fn block_mask_removes_rectangles(h in 1usize..16, w in 1usize..16, share in 0.0f64..1.0, seed in any::<u64>()) {
        let n = h * w;
        let keep = ((n as f64) * share) as usize;
        let m = block_mask(h, w, keep, &mut rng(seed));
        prop_assert_eq!(m.kept.len(), keep);
        prop_assert!(m.kept.windows(2).all(|p| p[0] < p[1]));
        for i in 0..n {
            let (r, c) = (i / w, i % w);
            let covered = m.rects.iter().any(|rect| rect.contains(r, c));
            let kept = m.kept.binary_search(&i).is_ok();
            let restored = m.restored.binary_search(&i).is_ok();
            // a dropped patch lies in some rectangle; a kept one is either
            // outside every rectangle or handed back from the last one
            prop_assert!(kept || covered);
            prop_assert!(!kept || !covered || restored);
        }
        if let Some(last) = m.rects.last() {
            prop_assert!(m.restored.iter().all(|&i| last.contains(i / w, i % w)));
        }
    }

    #[test]
    fn random_mask_keeps_rounded_share(n in 1usize..300, ratio in 0.0f64..0.95, seed in any::<u64>()) {
        let kept = random_mask(n, ratio, &mut rng(seed));
        prop_assert_eq!(kept.len(), ((1.0 - ratio) * n as f64).round() as usize);
        prop_assert!(kept.windows(2).all(|p| p[0] < p[1]));
        prop_assert!(kept.iter().all(|&i| i < n));
    }

    #[test]
    fn masked_patch_sets_keep_their_pixels(seed in any::<u64>(), which in 0usize..3) {
        let data: Vec<f32> = (0..32 * 32 * 3).map(|v| v as f32).collect();
        let full = patchify(&Image::new(32, 32, data).unwrap(), 8).unwrap();
        let red = [ImageReduction::Random(0.5), ImageReduction::Grid(0.75), ImageReduction::Block(0.5)][which];
        let masked = apply_mask(&full, &red, &mut rng(seed)).unwrap();
        prop_assert_eq!(masked.len() + 1, kept_token_count(32, 8, Some(&red)));
        for k in 0..masked.len() {
            prop_assert_eq!(masked.patch(k), full.patch(masked.indices[k]));
        }
        prop_assert!(apply_mask(&masked, &red, &mut rng(seed)).is_err());
    }

    #[test]
    fn resize_weights_are_normalized(src in 1usize..300, dst in 1usize..300) {
        for taps in resize_weights(src, dst) {
            let total: f64 = taps.weights.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-4);
            prop_assert!(taps.start + taps.weights.len() <= src);
        }
    }
}

#[test]
fn resizing_a_constant_image_keeps_it_constant() {
    let img = Image::new(40, 56, [0.2f32, 0.5, 0.9].repeat(40 * 56)).unwrap();
    for (h, w) in [(16, 16), (64, 96), (7, 5)] {
        let out = resize_antialias(&img, h, w).unwrap();
        assert_eq!((out.height, out.width), (h, w));
        for y in 0..h {
            for x in 0..w {
                let p = out.pixel(y, x);
                assert!((p[0] - 0.2).abs() < 1e-5 && (p[1] - 0.5).abs() < 1e-5 && (p[2] - 0.9).abs() < 1e-5);
            }
        }
    }
}

#[test]
fn patchify_lays_out_rows_then_channels() {
    let data: Vec<f32> = (0..4 * 4 * 3).map(|v| v as f32).collect();
    let p = patchify(&Image::new(4, 4, data).unwrap(), 2).unwrap();
    assert_eq!((p.grid_h, p.grid_w, p.len(), p.patch_dim), (2, 2, 4, 12));
    // patch 1 covers rows 0..2, columns 2..4
    assert_eq!(p.patch(1), &[6.0, 7.0, 8.0, 9.0, 10.0, 11.0, 18.0, 19.0, 20.0, 21.0, 22.0, 23.0]);
    assert!(patchify(&Image::zeros(5, 4), 2).is_err());
    assert!(resize_antialias(&Image::zeros(8, 8), 3, 8).is_err());
}
