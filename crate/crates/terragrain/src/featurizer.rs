//! Deterministic patch descriptors.
//!
//! Each crop half contributes 78 values: a 4x4x4 joint RGB histogram (64),
//! per-channel means and population standard deviations on [0, 1] (6), and an
//! 8-bin gradient-orientation histogram over luminance (8). The foreground
//! half captures local appearance, the background half global context; the
//! full vector is fg then bg. Every component lies in [0, 1].

use crate::sampling::{PatchCrop, PixelBlock};

/// Length of one half (per crop block).
pub const HALF_DIM: usize = 78;
/// Length of the full fg+bg descriptor.
pub const FULL_DIM: usize = 2 * HALF_DIM;

const HIST_BINS: usize = 64;
const GRAD_BINS: usize = 8;

fn block_features(block: &PixelBlock, out: &mut Vec<f64>) {
    let s = block.size;
    let n = (s * s) as f64;

    // Sums are accumulated in integers so the color statistics do not depend
    // on pixel traversal order (flips permute pixels without changing them).
    let mut hist = [0u32; HIST_BINS];
    let mut sums = [0u64; 3];
    let mut sq_sums = [0u64; 3];
    let mut lum = vec![0.0f64; s * s];
    for y in 0..s {
        for x in 0..s {
            let px = block.pixel(x, y);
            let idx = (px[0] as usize / 64) * 16 + (px[1] as usize / 64) * 4 + px[2] as usize / 64;
            hist[idx] += 1;
            for c in 0..3 {
                sums[c] += px[c] as u64;
                sq_sums[c] += (px[c] as u64) * (px[c] as u64);
            }
            lum[y * s + x] = (px[0] as u16 + px[1] as u16 + px[2] as u16) as f64 / (3.0 * 255.0);
        }
    }

    for count in hist {
        out.push(count as f64 / n);
    }
    let mut means = [0.0f64; 3];
    for c in 0..3 {
        means[c] = sums[c] as f64 / (255.0 * n);
        out.push(means[c]);
    }
    for c in 0..3 {
        // n * sum(v^2) - (sum v)^2 is exact and non-negative in integers.
        let scaled = (s * s) as u64 * sq_sums[c] - sums[c] * sums[c];
        let var = scaled as f64 / (255.0 * 255.0 * n * n);
        out.push(var.sqrt());
    }

    // Central differences, one-sided at borders; orientation bins of width
    // pi/4 over [0, 2pi), weighted by gradient magnitude.
    let mut grad = [0.0f64; GRAD_BINS];
    let mut total = 0.0f64;
    let at = |x: usize, y: usize| lum[y * s + x];
    for y in 0..s {
        for x in 0..s {
            let gx = if s == 1 {
                0.0
            } else if x == 0 {
                at(1, y) - at(0, y)
            } else if x == s - 1 {
                at(s - 1, y) - at(s - 2, y)
            } else {
                (at(x + 1, y) - at(x - 1, y)) / 2.0
            };
            let gy = if s == 1 {
                0.0
            } else if y == 0 {
                at(x, 1) - at(x, 0)
            } else if y == s - 1 {
                at(x, s - 1) - at(x, s - 2)
            } else {
                (at(x, y + 1) - at(x, y - 1)) / 2.0
            };
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += 2.0 * std::f64::consts::PI;
            }
            let bin = ((theta / (std::f64::consts::PI / 4.0)) as usize).min(GRAD_BINS - 1);
            grad[bin] += mag;
            total += mag;
        }
    }
    if total > 0.0 {
        for g in grad {
            out.push(g / total);
        }
    } else {
        out.extend(std::iter::repeat(0.0).take(GRAD_BINS));
    }
}

/// Full fg+bg descriptor of length [`FULL_DIM`].
pub fn featurize(crop: &PatchCrop) -> Vec<f64> {
    let mut out = Vec::with_capacity(FULL_DIM);
    block_features(&crop.fg, &mut out);
    block_features(&crop.bg, &mut out);
    out
}

/// Foreground-only descriptor of length [`HALF_DIM`] (background ablation).
pub fn featurize_foreground(crop: &PatchCrop) -> Vec<f64> {
    let mut out = Vec::with_capacity(HALF_DIM);
    block_features(&crop.fg, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::RasterImage;
    use crate::rng::Rng64;
    use crate::sampling::{compose_sample, RESIZE_TARGET};
    use proptest::prelude::*;

    fn block_from_fn(f: impl Fn(usize, usize) -> [u8; 3]) -> PixelBlock {
        let s = RESIZE_TARGET;
        let mut data = Vec::with_capacity(s * s * 3);
        for y in 0..s {
            for x in 0..s {
                data.extend_from_slice(&f(x, y));
            }
        }
        PixelBlock { size: s, data }
    }

    fn crop_from_fn(f: impl Fn(usize, usize) -> [u8; 3] + Copy) -> PatchCrop {
        PatchCrop {
            fg: block_from_fn(f),
            bg: block_from_fn(f),
        }
    }

    #[test]
    fn uniform_gray_crop() {
        let crop = crop_from_fn(|_, _| [128, 128, 128]);
        let v = featurize(&crop);
        assert_eq!(v.len(), FULL_DIM);
        // Single histogram bin: (2, 2, 2) -> index 2*16 + 2*4 + 2 = 42.
        assert_eq!(v[42], 1.0);
        assert_eq!(v.iter().take(64).sum::<f64>(), 1.0);
        // Stds exactly zero, gradient bins all zero.
        for c in 0..3 {
            assert_eq!(v[67 + c], 0.0);
        }
        for b in 0..8 {
            assert_eq!(v[70 + b], 0.0);
        }
    }

    #[test]
    fn fg_equals_bg_halves_match() {
        let crop = crop_from_fn(|x, y| [(x * 7) as u8, (y * 5) as u8, 33]);
        let v = featurize(&crop);
        assert_eq!(&v[..HALF_DIM], &v[HALF_DIM..]);
    }

    #[test]
    fn vertical_edge_concentrates_in_horizontal_bins() {
        let crop = crop_from_fn(|x, _| if x < 16 { [0, 0, 0] } else { [255, 255, 255] });
        let v = featurize(&crop);
        let grad = &v[70..78];
        // All gradient mass must lie in the two horizontal-orientation bins
        // (theta = 0 and theta = pi).
        let horizontal = grad[0] + grad[4];
        assert!((horizontal - 1.0).abs() < 1e-12, "bins {grad:?}");
        for b in [1, 2, 3, 5, 6, 7] {
            assert_eq!(grad[b], 0.0);
        }
    }

    #[test]
    fn deterministic_bit_exact() {
        let crop = crop_from_fn(|x, y| [(x * y) as u8, (x + y) as u8, (x ^ y) as u8]);
        let a = featurize(&crop);
        let b = featurize(&crop);
        assert_eq!(a, b);
    }

    #[test]
    fn flip_permutes_gradient_bins_and_keeps_color_stats() {
        // Diagonal ramp: gradients at atan2(2, 1) stay inside bin interiors,
        // so the flip permutation b -> 3 - b (mod 8) is exact.
        let ramp = |x: usize, y: usize| {
            let v = (x * 2 + y * 4) as u8;
            [v, v, v]
        };
        let flipped = |x: usize, y: usize| ramp(RESIZE_TARGET - 1 - x, y);
        let v = featurize(&crop_from_fn(ramp));
        let w = featurize(&crop_from_fn(flipped));
        // Color statistics identical.
        assert_eq!(&v[..70], &w[..70]);
        for b in 0..8usize {
            let mapped = (11 - b) % 8; // theta -> pi - theta
            assert!(
                (v[70 + b] - w[70 + mapped]).abs() < 1e-12,
                "bin {b} -> {mapped}: {} vs {}",
                v[70 + b],
                w[70 + mapped]
            );
        }
    }

    #[test]
    fn flip_keeps_color_statistics_on_random_crops() {
        let mut rng = Rng64::new(99);
        for _ in 0..20 {
            let mut img = RasterImage::new(64, 64);
            for v in 0..64 {
                for u in 0..64 {
                    img.set_pixel(
                        u,
                        v,
                        [
                            rng.below(256) as u8,
                            rng.below(256) as u8,
                            rng.below(256) as u8,
                        ],
                    );
                }
            }
            let crop = compose_sample(&img, (32, 32), 32, 32).unwrap();
            let mut mirrored = img.clone();
            for v in 0..64 {
                for u in 0..64 {
                    mirrored.set_pixel(u, v, img.pixel(63 - u, v));
                }
            }
            let flipped = compose_sample(&mirrored, (32, 32), 32, 32).unwrap();
            let a = featurize(&crop);
            let b = featurize(&flipped);
            // Histogram + means/stds are flip-invariant; gradient mass total too.
            assert_eq!(&a[..70], &b[..70]);
            let ga: f64 = a[70..78].iter().sum();
            let gb: f64 = b[70..78].iter().sum();
            assert!((ga - gb).abs() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn all_components_in_unit_interval(seed in 0u64..500) {
            let mut rng = Rng64::new(seed);
            let crop = crop_from_fn(|_, _| {
                [0u8; 3] // placeholder, replaced below
            });
            // Random block contents.
            let mut fg = crop.fg.clone();
            let mut bg = crop.bg.clone();
            for b in [&mut fg, &mut bg] {
                for byte in b.data.iter_mut() {
                    *byte = rng.below(256) as u8;
                }
            }
            let v = featurize(&PatchCrop { fg, bg });
            prop_assert_eq!(v.len(), FULL_DIM);
            for (i, &x) in v.iter().enumerate() {
                prop_assert!(x.is_finite());
                prop_assert!((0.0..=1.0).contains(&x), "component {} = {}", i, x);
            }
            // Histogram halves sum to one.
            let h1: f64 = v[..64].iter().sum();
            let h2: f64 = v[78..142].iter().sum();
            prop_assert!((h1 - 1.0).abs() < 1e-9);
            prop_assert!((h2 - 1.0).abs() < 1e-9);
        }
    }
}
