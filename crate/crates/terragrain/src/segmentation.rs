//! Sliding-window nearest-prototype segmentation of the region of interest
//! (the bottom half of the frame, where ground is expected).
//!
//! Window centers sit on a `step x step` block lattice that tiles the ROI
//! exactly, with boundary blocks truncated at the edges; every window is
//! composed, featurized and projected like a training sample (but without
//! augmentation) and its label is written to the whole block. Windows are
//! independent, so with the `parallel` feature they are classified with
//! rayon and written back in deterministic row-major order; the sequential
//! path produces bit-identical output.

use crate::clustering::{assign_embedding, ClusterModel};
use crate::embed::{embed_patch, EmbedSpec};
use crate::encoder::EncoderParams;
use crate::error::{Error, Result};
use crate::image::{GrayImage, RasterImage};

/// Label value for pixels outside the ROI (never inside it after a full pass).
pub const SENTINEL: u8 = 255;

/// Fixed palette for colorized label maps (16 entries).
pub const LABEL_PALETTE: [[u8; 3]; 16] = [
    [46, 204, 64],   // green
    [255, 220, 0],   // yellow
    [0, 116, 217],   // blue
    [255, 65, 54],   // red
    [127, 219, 255], // cyan
    [177, 13, 201],  // purple
    [255, 133, 27],  // orange
    [57, 204, 204],  // teal
    [240, 18, 190],  // fuchsia
    [1, 255, 112],   // lime
    [133, 20, 75],   // maroon
    [255, 255, 255], // white
    [170, 170, 170], // silver
    [0, 31, 63],     // navy
    [61, 153, 112],  // olive
    [136, 84, 24],   // brown
];

#[derive(Debug, Clone, Copy)]
pub struct SegmentationConfig {
    pub fg_size: u32,
    pub bg_size: u32,
    pub step: usize,
}

impl Default for SegmentationConfig {
    fn default() -> Self {
        SegmentationConfig {
            fg_size: 64,
            bg_size: 320,
            step: 3,
        }
    }
}

/// Dense per-pixel labels and winning similarities for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMap {
    pub width: usize,
    pub height: usize,
    pub roi_top: usize,
    pub labels: Vec<u8>,
    /// Winning exponential cosine similarity per pixel (auxiliary channel).
    pub similarities: Vec<f64>,
}

impl LabelMap {
    #[inline]
    pub fn label(&self, u: usize, v: usize) -> u8 {
        self.labels[v * self.width + u]
    }

    /// Raw label image (sentinel stays 255).
    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_raw(self.width, self.height, self.labels.clone()).unwrap()
    }

    pub fn sentinel_pixels_in_roi(&self) -> usize {
        (self.roi_top..self.height)
            .flat_map(|v| (0..self.width).map(move |u| (u, v)))
            .filter(|&(u, v)| self.label(u, v) == SENTINEL)
            .count()
    }
}

/// One classified window, in block lattice order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowResult {
    pub center_u: u32,
    pub center_v: u32,
    pub label: u8,
    pub similarity: f64,
}

#[derive(Debug, Clone, Copy)]
struct Block {
    x0: usize,
    y0: usize,
    w: usize,
    h: usize,
}

impl Block {
    fn center(&self) -> (u32, u32) {
        ((self.x0 + self.w / 2) as u32, (self.y0 + self.h / 2) as u32)
    }
}

fn block_lattice(width: usize, height: usize, roi_top: usize, step: usize) -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut y = roi_top;
    while y < height {
        let h = step.min(height - y);
        let mut x = 0;
        while x < width {
            let w = step.min(width - x);
            blocks.push(Block { x0: x, y0: y, w, h });
            x += step;
        }
        y += h;
    }
    blocks
}

fn classify_block(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    spec: &EmbedSpec,
    block: &Block,
) -> Result<WindowResult> {
    let center = block.center();
    let z = embed_patch(params, image, center, spec)?;
    let (label, similarity) = assign_embedding(clusters, &z)?;
    Ok(WindowResult {
        center_u: center.0,
        center_v: center.1,
        label: label as u8,
        similarity,
    })
}

#[cfg(feature = "parallel")]
fn classify_blocks(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    spec: &EmbedSpec,
    blocks: &[Block],
) -> Result<Vec<WindowResult>> {
    use rayon::prelude::*;
    blocks
        .par_iter()
        .map(|b| classify_block(image, params, clusters, spec, b))
        .collect()
}

#[cfg(not(feature = "parallel"))]
fn classify_blocks(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    spec: &EmbedSpec,
    blocks: &[Block],
) -> Result<Vec<WindowResult>> {
    classify_blocks_seq(image, params, clusters, spec, blocks)
}

fn classify_blocks_seq(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    spec: &EmbedSpec,
    blocks: &[Block],
) -> Result<Vec<WindowResult>> {
    blocks
        .iter()
        .map(|b| classify_block(image, params, clusters, spec, b))
        .collect()
}

fn validate(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    config: &SegmentationConfig,
    spec: &EmbedSpec,
) -> Result<()> {
    if config.step == 0 {
        return Err(Error::data("step must be at least 1"));
    }
    if config.fg_size as usize > image.height / 2 {
        return Err(Error::data(format!(
            "fg_size {} exceeds half the image height {}",
            config.fg_size,
            image.height / 2
        )));
    }
    if config.bg_size < config.fg_size {
        return Err(Error::data("bg_size must be at least fg_size"));
    }
    if clusters.k > SENTINEL as usize {
        return Err(Error::data("too many clusters for 8-bit label maps"));
    }
    spec.check_params(params)?;
    if clusters.dim != params.output_dim() {
        return Err(Error::data("cluster dimension does not match encoder output"));
    }
    Ok(())
}

fn write_blocks(
    blocks: &[Block],
    results: &[WindowResult],
    width: usize,
    height: usize,
    roi_top: usize,
) -> LabelMap {
    let mut labels = vec![SENTINEL; width * height];
    let mut similarities = vec![0.0f64; width * height];
    for (block, res) in blocks.iter().zip(results) {
        for y in block.y0..block.y0 + block.h {
            for x in block.x0..block.x0 + block.w {
                labels[y * width + x] = res.label;
                similarities[y * width + x] = res.similarity;
            }
        }
    }
    LabelMap {
        width,
        height,
        roi_top,
        labels,
        similarities,
    }
}

/// Classify every window on the block lattice and paint the ROI.
pub fn segment_frame(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    config: &SegmentationConfig,
    spec: &EmbedSpec,
) -> Result<LabelMap> {
    validate(image, params, clusters, config, spec)?;
    let roi_top = image.height / 2;
    let blocks = block_lattice(image.width, image.height, roi_top, config.step);
    let results = classify_blocks(image, params, clusters, spec, &blocks)?;
    Ok(write_blocks(&blocks, &results, image.width, image.height, roi_top))
}

/// Reference single-threaded path; used by the benchmarks and to check that
/// the parallel path is bit-identical.
pub fn segment_frame_sequential(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    config: &SegmentationConfig,
    spec: &EmbedSpec,
) -> Result<LabelMap> {
    validate(image, params, clusters, config, spec)?;
    let roi_top = image.height / 2;
    let blocks = block_lattice(image.width, image.height, roi_top, config.step);
    let results = classify_blocks_seq(image, params, clusters, spec, &blocks)?;
    Ok(write_blocks(&blocks, &results, image.width, image.height, roi_top))
}

/// Window-level results in lattice order, for the optional CSV output.
pub fn window_results(
    image: &RasterImage,
    params: &EncoderParams,
    clusters: &ClusterModel,
    config: &SegmentationConfig,
    spec: &EmbedSpec,
) -> Result<Vec<WindowResult>> {
    validate(image, params, clusters, config, spec)?;
    let roi_top = image.height / 2;
    let blocks = block_lattice(image.width, image.height, roi_top, config.step);
    classify_blocks(image, params, clusters, spec, &blocks)
}

/// `cu,cv,label,similarity` CSV of window-level results.
pub fn write_windows_csv(
    results: &[WindowResult],
    path: impl AsRef<std::path::Path>,
) -> Result<()> {
    use std::fmt::Write as _;
    let path = path.as_ref();
    let mut out = String::from("cu,cv,label,similarity\n");
    for r in results {
        writeln!(out, "{},{},{},{}", r.center_u, r.center_v, r.label, r.similarity).unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
