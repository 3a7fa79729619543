//! Query/positive/negative patch sampling and sample composition.
//!
//! Anchors are split by label within one frame, crops are drawn from an
//! anchor's neighborhood (the clipped center stays inside the anchor's own
//! rectangle), and every sample pairs a foreground patch with a larger
//! co-centered background patch, both resized to [`RESIZE_TARGET`].

use crate::dataset::AnchorPatch;
use crate::error::{Error, Result};
use crate::image::RasterImage;
use crate::rng::Rng64;

/// Side length every crop is resized to before featurization.
pub const RESIZE_TARGET: usize = 32;

/// Square RGB block of `size` x `size` pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelBlock {
    pub size: usize,
    pub data: Vec<u8>,
}

impl PixelBlock {
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

/// One sample: foreground patch plus co-centered background context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchCrop {
    pub fg: PixelBlock,
    pub bg: PixelBlock,
}

/// Knobs for [`augment`]. The defaults match the training pipeline.
#[derive(Debug, Clone, Copy)]
pub struct AugmentParams {
    pub flip_prob: f64,
    pub grayscale_prob: f64,
    pub jitter_low: f64,
    pub jitter_high: f64,
}

impl Default for AugmentParams {
    fn default() -> Self {
        AugmentParams {
            flip_prob: 0.5,
            grayscale_prob: 0.2,
            jitter_low: 0.6,
            jitter_high: 1.4,
        }
    }
}

/// Partition a frame's anchors by the query's label. The positive set keeps
/// the query itself; the two index sets are disjoint and exhaustive.
pub fn split_by_label(
    anchors: &[AnchorPatch],
    query: usize,
) -> Result<(Vec<usize>, Vec<usize>)> {
    assert!(query < anchors.len(), "query index out of range");
    let label = anchors[query].label_id;
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, a) in anchors.iter().enumerate() {
        if a.label_id == label {
            positives.push(i);
        } else {
            negatives.push(i);
        }
    }
    if negatives.is_empty() {
        return Err(Error::data(
            "no negatives available: frame has a single anchor label",
        ));
    }
    Ok((positives, negatives))
}

/// Shift a `size` footprint centered at `center` so it lies inside `dim`,
/// returning the adjusted center. Assumes size <= dim.
fn clamp_center(center: i64, size: i64, dim: i64) -> i64 {
    let start = (center - size / 2).clamp(0, dim - size);
    start + size / 2
}

/// Draw a same-size region whose center is uniform over the anchor's own
/// rectangle, then shift it into image bounds.
pub fn neighborhood_clip(
    anchor: &AnchorPatch,
    width: usize,
    height: usize,
    rng: &mut Rng64,
) -> (u32, u32) {
    let half = (anchor.size / 2) as i64;
    let cu = anchor.center_u as i64 + rng.range_i64(-half, half);
    let cv = anchor.center_v as i64 + rng.range_i64(-half, half);
    let size = (anchor.size as i64).min(width as i64).min(height as i64);
    let cu = clamp_center(cu, size, width as i64);
    let cv = clamp_center(cv, size, height as i64);
    (cu as u32, cv as u32)
}

fn extract_block(image: &RasterImage, center: (u32, u32), size: u32) -> PixelBlock {
    // Keep the crop square even on small images.
    let size = (size as usize).min(image.width).min(image.height) as i64;
    let cu = clamp_center(center.0 as i64, size, image.width as i64);
    let cv = clamp_center(center.1 as i64, size, image.height as i64);
    let x0 = (cu - size / 2) as usize;
    let y0 = (cv - size / 2) as usize;
    let size = size as usize;
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            data.extend_from_slice(&image.pixel(x0 + x, y0 + y));
        }
    }
    PixelBlock { size, data }
}

/// Nearest-neighbor resize to `RESIZE_TARGET`; source index is
/// `floor(dst * src / dst_size)`.
fn resize_nearest(block: &PixelBlock) -> PixelBlock {
    let s = RESIZE_TARGET;
    if block.size == s {
        return block.clone();
    }
    let mut data = Vec::with_capacity(s * s * 3);
    for y in 0..s {
        let sy = y * block.size / s;
        for x in 0..s {
            let sx = x * block.size / s;
            data.extend_from_slice(&block.pixel(sx, sy));
        }
    }
    PixelBlock { size: s, data }
}

/// Crop the foreground and background windows around `center` and resize both
/// to the featurization scale.
pub fn compose_sample(
    image: &RasterImage,
    center: (u32, u32),
    fg_size: u32,
    bg_size: u32,
) -> Result<PatchCrop> {
    if bg_size < fg_size {
        return Err(Error::data(format!(
            "background size {bg_size} smaller than foreground size {fg_size}"
        )));
    }
    if center.0 as usize >= image.width || center.1 as usize >= image.height {
        return Err(Error::data(format!(
            "crop center ({}, {}) outside {}x{} image",
            center.0, center.1, image.width, image.height
        )));
    }
    let fg = resize_nearest(&extract_block(image, center, fg_size));
    let bg = resize_nearest(&extract_block(image, center, bg_size));
    Ok(PatchCrop { fg, bg })
}

/// Random horizontal flip, random grayscale and brightness/contrast/saturation
/// jitter, applied with the same draws to both halves of the crop.
///
/// Exactly five RNG values are consumed regardless of which branches fire, so
/// downstream draw order never depends on augmentation outcomes.
pub fn augment(crop: &PatchCrop, rng: &mut Rng64, params: &AugmentParams) -> PatchCrop {
    let flip = rng.chance(params.flip_prob);
    let grayscale = rng.chance(params.grayscale_prob);
    let brightness = rng.uniform(params.jitter_low, params.jitter_high);
    let contrast = rng.uniform(params.jitter_low, params.jitter_high);
    let saturation = rng.uniform(params.jitter_low, params.jitter_high);

    let apply = |block: &PixelBlock| -> PixelBlock {
        let s = block.size;
        let mut vals = vec![0f64; s * s * 3];
        for y in 0..s {
            for x in 0..s {
                let src_x = if flip { s - 1 - x } else { x };
                let px = block.pixel(src_x, y);
                let i = (y * s + x) * 3;
                vals[i] = px[0] as f64;
                vals[i + 1] = px[1] as f64;
                vals[i + 2] = px[2] as f64;
            }
        }
        for p in vals.chunks_exact_mut(3) {
            if grayscale {
                let mean = (p[0] + p[1] + p[2]) / 3.0;
                p[0] = mean;
                p[1] = mean;
                p[2] = mean;
            }
            for c in p.iter_mut() {
                *c *= brightness;
                *c = 127.5 + contrast * (*c - 127.5);
            }
            let lum = (p[0] + p[1] + p[2]) / 3.0;
            for c in p.iter_mut() {
                *c = lum + saturation * (*c - lum);
            }
        }
        let data = vals
            .iter()
            .map(|&v| v.clamp(0.0, 255.0).round() as u8)
            .collect();
        PixelBlock { size: s, data }
    };

    PatchCrop {
        fg: apply(&crop.fg),
        bg: apply(&crop.bg),
    }
}
