//! Procedural off-road-like scenes with ground-truth region masks.
//!
//! Scenes come in two layout families: vertical bands that drift smoothly
//! from frame to frame (narrow-road-like) and drifting Voronoi cells
//! (open, diverse scenarios). Each region type is filled with its base color
//! plus per-pixel uniform noise; an optional per-frame shade offset of
//! `+/- shade_delta` per (frame, type) emulates appearance changes along a
//! drive (lighting, moisture) without touching region identity.
//!
//! Masks are emitted next to the frames for verification only; the pipeline
//! itself never reads them.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::{
    write_anchors, write_manifest, write_poses, AnchorPatch, AnchorsByFrame, DatasetManifest,
    FrameRecord, PoseRecord,
};
use crate::error::{Error, Result};
use crate::image::{write_pgm, write_ppm, GrayImage, RasterImage};
use crate::rng::Rng64;

/// Maximum number of region types per scene.
pub const MAX_REGION_TYPES: usize = 16;

/// Default per-type base colors. Channel values sit at the centers of the
/// 64-wide histogram bins and every pair differs by at least 40 in some
/// channel.
pub const DEFAULT_BASE_COLORS: [[u8; 3]; MAX_REGION_TYPES] = [
    [32, 160, 32],   // vegetation green
    [160, 96, 32],   // earth brown
    [160, 160, 160], // paved gray
    [32, 96, 224],   // water blue
    [224, 192, 96],  // dry grass
    [96, 32, 32],    // red stone
    [32, 224, 224],  // cyan
    [224, 96, 224],  // magenta
    [96, 96, 224],   // slate
    [224, 224, 32],  // yellow
    [32, 32, 96],    // deep blue
    [96, 224, 96],   // light green
    [224, 32, 32],   // bright red
    [96, 160, 224],  // sky
    [160, 32, 160],  // plum
    [224, 224, 224], // chalk
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Bands,
    Voronoi,
}

impl std::str::FromStr for Layout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bands" => Ok(Layout::Bands),
            "voronoi" => Ok(Layout::Voronoi),
            other => Err(Error::Usage(format!("unknown layout {other:?}"))),
        }
    }
}

/// Per-type appearance parameters.
#[derive(Debug, Clone)]
pub struct TextureParams {
    pub base_colors: Vec<[u8; 3]>,
    /// Uniform per-pixel, per-channel noise in [-amplitude, amplitude].
    pub noise_amplitude: u8,
    /// Per-(frame, type) brightness offset of +/- this value; 0 disables.
    pub shade_delta: u8,
}

impl TextureParams {
    pub fn default_for(num_types: usize) -> Self {
        TextureParams {
            base_colors: DEFAULT_BASE_COLORS[..num_types].to_vec(),
            noise_amplitude: 8,
            shade_delta: 12,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub num_region_types: usize,
    pub frames: usize,
    pub layout: Layout,
    pub texture: TextureParams,
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_region_types < 2 || self.num_region_types > MAX_REGION_TYPES {
            return Err(Error::data(format!(
                "num_region_types must be in 2..={MAX_REGION_TYPES}"
            )));
        }
        if self.frames == 0 {
            return Err(Error::data("scene needs at least one frame"));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::data("scene frames must be at least 32x32"));
        }
        if self.texture.base_colors.len() < self.num_region_types {
            return Err(Error::data("not enough base colors for region types"));
        }
        let colors = &self.texture.base_colors[..self.num_region_types];
        for i in 0..colors.len() {
            for j in i + 1..colors.len() {
                let dist = (0..3)
                    .map(|c| (colors[i][c] as i32 - colors[j][c] as i32).abs())
                    .max()
                    .unwrap();
                if dist < 40 {
                    return Err(Error::data(format!(
                        "base colors {i} and {j} are closer than 40 in every channel"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// One generated frame: image, ground-truth mask and pose.
#[derive(Debug, Clone)]
pub struct SceneFrame {
    pub frame_id: u32,
    pub image: RasterImage,
    pub mask: GrayImage,
    pub pose: PoseRecord,
}

// Stream ids for Rng64::derive; frames get NOISE_STREAM_BASE + frame_id.
const LAYOUT_STREAM: u64 = 1;
const NOISE_STREAM_BASE: u64 = 0x1_0000;

fn shade_sign(seed: u64, frame_id: u32, region: u8) -> i32 {
    let mut r = Rng64::derive(seed, 0x2_0000 + frame_id as u64 * 64 + region as u64);
    if r.next_u64() & 1 == 0 {
        -1
    } else {
        1
    }
}

fn bands_mask(spec: &SceneSpec, frame_id: u32) -> GrayImage {
    let g = spec.num_region_types;
    let w = spec.width as f64;
    let amplitude = w / (4.0 * g as f64);
    // Boundary i drifts sinusoidally; amplitude < spacing/2 keeps them sorted.
    let boundaries: Vec<f64> = (1..g)
        .map(|i| {
            let base = w * i as f64 / g as f64;
            base + amplitude * (frame_id as f64 * 0.35 + i as f64 * 1.7).sin()
        })
        .collect();
    let mut mask = GrayImage::new(spec.width, spec.height, 0);
    for u in 0..spec.width {
        let x = u as f64;
        let t = boundaries.iter().filter(|&&b| b <= x).count() as u8;
        for v in 0..spec.height {
            mask.set(u, v, t);
        }
    }
    mask
}

fn voronoi_mask(spec: &SceneSpec, frame_id: u32) -> GrayImage {
    let g = spec.num_region_types;
    let sites = 3 * g;
    let mut rng = Rng64::derive(spec.seed, LAYOUT_STREAM);
    let base_sites: Vec<(f64, f64, u8)> = (0..sites)
        .map(|i| {
            (
                rng.uniform(0.0, spec.width as f64),
                rng.uniform(0.0, spec.height as f64),
                (i % g) as u8,
            )
        })
        .collect();
    let k = frame_id as f64;
    let drift = spec.width as f64 / 24.0;
    let moved: Vec<(f64, f64, u8)> = base_sites
        .iter()
        .enumerate()
        .map(|(i, &(x, y, t))| {
            (
                x + drift * (k * 0.3 + i as f64).sin(),
                y + drift * (k * 0.23 + i as f64 * 1.3).cos(),
                t,
            )
        })
        .collect();
    let mut mask = GrayImage::new(spec.width, spec.height, 0);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (i, &(x, y, _)) in moved.iter().enumerate() {
                let dx = u as f64 - x;
                let dy = v as f64 - y;
                let d = dx * dx + dy * dy;
                if d < best_d {
                    best_d = d;
                    best = i;
                }
            }
            mask.set(u, v, moved[best].2);
        }
    }
    mask
}

fn render_frame(spec: &SceneSpec, frame_id: u32, mask: &GrayImage) -> RasterImage {
    let mut rng = Rng64::derive(spec.seed, NOISE_STREAM_BASE + frame_id as u64);
    let amp = spec.texture.noise_amplitude as i64;
    let shade = spec.texture.shade_delta as i32;
    let shades: Vec<i32> = (0..spec.num_region_types)
        .map(|t| {
            if shade == 0 {
                0
            } else {
                shade * shade_sign(spec.seed, frame_id, t as u8)
            }
        })
        .collect();
    let mut image = RasterImage::new(spec.width, spec.height);
    for v in 0..spec.height {
        for u in 0..spec.width {
            let t = mask.get(u, v) as usize;
            let base = spec.texture.base_colors[t];
            let mut rgb = [0u8; 3];
            for c in 0..3 {
                let noise = if amp == 0 { 0 } else { rng.range_i64(-amp, amp) };
                let value = base[c] as i64 + shades[t] as i64 + noise;
                rgb[c] = value.clamp(0, 255) as u8;
            }
            image.set_pixel(u, v, rgb);
        }
    }
    image
}

fn make_frame(spec: &SceneSpec, frame_id: u32) -> SceneFrame {
    let mask = match spec.layout {
        Layout::Bands => bands_mask(spec, frame_id),
        Layout::Voronoi => voronoi_mask(spec, frame_id),
    };
    let image = render_frame(spec, frame_id, &mask);
    let pose = PoseRecord {
        frame_id,
        x: 0.5 * frame_id as f64,
        y: 0.0,
        heading: 0.0,
    };
    SceneFrame {
        frame_id,
        image,
        mask,
        pose,
    }
}

/// Generate all frames of a scene. Deterministic per spec; frames draw from
/// independent (seed, frame) RNG streams so they can be produced in parallel.
pub fn generate_scene(spec: &SceneSpec) -> Result<Vec<SceneFrame>> {
    spec.validate()?;
    let ids: Vec<u32> = (0..spec.frames as u32).collect();
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        Ok(ids.par_iter().map(|&id| make_frame(spec, id)).collect())
    }
    #[cfg(not(feature = "parallel"))]
    {
        Ok(ids.iter().map(|&id| make_frame(spec, id)).collect())
    }
}

/// Sample anchors whose full `patch_size` footprint lies inside a single
/// ground-truth region; the anchor label is the region type id. Returns an
/// empty list when the frame cannot provide two distinct labels (the frame
/// is then skipped by callers).
pub fn derive_anchors(
    mask: &GrayImage,
    frame_id: u32,
    per_frame_count: usize,
    min_margin: u32,
    patch_size: u32,
    seed: u64,
) -> Result<Vec<AnchorPatch>> {
    if per_frame_count < 2 {
        return Err(Error::data("per_frame_count must be at least 2"));
    }
    if min_margin < patch_size / 2 {
        return Err(Error::data("min_margin must be at least patch_size / 2"));
    }
    let (w, h) = (mask.width as i64, mask.height as i64);
    let m = min_margin as i64;
    if 2 * m >= w || 2 * m >= h {
        return Err(Error::data("margin leaves no valid anchor positions"));
    }
    let half = (patch_size / 2) as i64;
    let mut rng = Rng64::derive(seed, frame_id as u64);
    let mut anchors = Vec::with_capacity(per_frame_count);
    for _ in 0..per_frame_count {
        let mut placed = false;
        for _attempt in 0..1000 {
            let cu = rng.range_i64(m, w - 1 - m);
            let cv = rng.range_i64(m, h - 1 - m);
            let x0 = cu - half;
            let y0 = cv - half;
            let region = mask.get(x0 as usize, y0 as usize);
            let mut pure = true;
            'scan: for y in y0..y0 + patch_size as i64 {
                for x in x0..x0 + patch_size as i64 {
                    if mask.get(x as usize, y as usize) != region {
                        pure = false;
                        break 'scan;
                    }
                }
            }
            if pure {
                anchors.push(AnchorPatch {
                    frame_id,
                    center_u: cu as u32,
                    center_v: cv as u32,
                    size: patch_size,
                    label_id: region as u32,
                });
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::data(format!(
                "no valid anchor placement after 1000 attempts on frame {frame_id}"
            )));
        }
    }
    let mut labels: Vec<u32> = anchors.iter().map(|a| a.label_id).collect();
    labels.sort_unstable();
    labels.dedup();
    if labels.len() < 2 {
        return Ok(Vec::new()); // frame skipped: cannot form negative pairs
    }
    Ok(anchors)
}

/// Anchor sampling knobs for [`write_scene_dataset`].
#[derive(Debug, Clone, Copy)]
pub struct AnchorSpec {
    pub per_frame: usize,
    pub min_margin: u32,
    pub patch_size: u32,
}

impl Default for AnchorSpec {
    fn default() -> Self {
        AnchorSpec {
            per_frame: 20,
            min_margin: 32,
            patch_size: 64,
        }
    }
}

/// Summary of a dataset written to disk.
#[derive(Debug, Clone)]
pub struct SceneSummary {
    pub manifest_path: std::path::PathBuf,
    pub mask_paths: Vec<std::path::PathBuf>,
    pub frames: usize,
    pub training_frames: usize,
    pub anchors: usize,
}

/// Generate a scene and write a complete dataset directory: manifest, P6
/// frames, P5 masks, anchors CSV and poses CSV. The first `train_count`
/// frames that kept anchors become the training split.
pub fn write_scene_dataset(
    dir: impl AsRef<Path>,
    spec: &SceneSpec,
    subset_name: &str,
    train_count: usize,
    anchor_spec: &AnchorSpec,
) -> Result<SceneSummary> {
    let dir = dir.as_ref();
    let frames_dir = dir.join("frames");
    let masks_dir = dir.join("masks");
    std::fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    std::fs::create_dir_all(&masks_dir).map_err(|e| Error::io(&masks_dir, e))?;

    let scene = generate_scene(spec)?;
    let mut records = Vec::with_capacity(scene.len());
    let mut poses = Vec::with_capacity(scene.len());
    let mut anchors: AnchorsByFrame = Default::default();
    let mut mask_paths = Vec::with_capacity(scene.len());

    for frame in &scene {
        let image_rel = format!("frames/frame_{:05}.ppm", frame.frame_id);
        let mask_rel = format!("masks/mask_{:05}.pgm", frame.frame_id);
        write_ppm(&frame.image, dir.join(&image_rel))?;
        write_pgm(&frame.mask, dir.join(&mask_rel))?;
        mask_paths.push(dir.join(&mask_rel));
        records.push(FrameRecord {
            frame_id: frame.frame_id,
            image_path: image_rel,
            pose_index: Some(frame.frame_id as usize),
        });
        poses.push(frame.pose);
        let frame_anchors = derive_anchors(
            &frame.mask,
            frame.frame_id,
            anchor_spec.per_frame,
            anchor_spec.min_margin,
            anchor_spec.patch_size,
            spec.seed,
        )?;
        if !frame_anchors.is_empty() {
            anchors.insert(frame.frame_id, frame_anchors);
        }
    }

    let training_frame_ids: Vec<u32> = anchors.keys().copied().take(train_count).collect();
    if training_frame_ids.len() < train_count {
        return Err(Error::data(format!(
            "requested {train_count} training frames but only {} frames kept anchors",
            training_frame_ids.len()
        )));
    }

    let manifest = DatasetManifest {
        subset_name: subset_name.to_string(),
        frames: records,
        training_frame_ids,
        anchor_file: "anchors.csv".to_string(),
        pose_file: Some("poses.csv".to_string()),
        root: dir.to_path_buf(),
    };
    write_anchors(&anchors, dir.join("anchors.csv"))?;
    write_poses(&poses, dir.join("poses.csv"))?;
    let manifest_path = dir.join("manifest.txt");
    write_manifest(&manifest, &manifest_path)?;

    Ok(SceneSummary {
        manifest_path,
        mask_paths,
        frames: scene.len(),
        training_frames: manifest.training_frame_ids.len(),
        anchors: anchors.values().map(Vec::len).sum(),
    })
}

/// Render the dataset statistics in the usual three-row table shape.
pub fn stats_table(rows: &[(String, usize, usize, usize)]) -> String {
    let mut out = String::new();
    write!(out, "{:<20}", "").unwrap();
    for (name, ..) in rows {
        write!(out, " {name:>10}").unwrap();
    }
    out.push('\n');
    for (label, pick) in [
        ("total frames", 0usize),
        ("frames for training", 1),
        ("anchors", 2),
    ] {
        write!(out, "{label:<20}").unwrap();
        for row in rows {
            let v = match pick {
                0 => row.1,
                1 => row.2,
                _ => row.3,
            };
            write!(out, " {v:>10}").unwrap();
        }
        out.push('\n');
    }
    out
}
