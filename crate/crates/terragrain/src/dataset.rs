//! Dataset manifests, anchor annotations and planar poses.
//!
//! All three artifacts are line-oriented UTF-8 text. Paths inside a manifest
//! are resolved relative to the manifest's directory. Anchor labels are
//! identifiers scoped to their frame: the per-frame grouping returned by
//! [`load_anchors`] is the only way anchors reach downstream stages, which is
//! what keeps labels from ever being compared across frames.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::ppm_dimensions;

/// One annotated square patch: center pixel, side length and a per-frame label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnchorPatch {
    pub frame_id: u32,
    pub center_u: u32,
    pub center_v: u32,
    pub size: u32,
    pub label_id: u32,
}

/// Anchors grouped by owning frame. Label ids are only meaningful per key.
pub type AnchorsByFrame = BTreeMap<u32, Vec<AnchorPatch>>;

#[derive(Debug, Clone)]
pub struct FrameRecord {
    pub frame_id: u32,
    pub image_path: String,
    pub pose_index: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub subset_name: String,
    pub frames: Vec<FrameRecord>,
    pub training_frame_ids: Vec<u32>,
    pub anchor_file: String,
    pub pose_file: Option<String>,
    /// Directory the manifest was loaded from; all paths resolve against it.
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn image_path(&self, frame: &FrameRecord) -> PathBuf {
        self.root.join(&frame.image_path)
    }

    pub fn frame(&self, frame_id: u32) -> Option<&FrameRecord> {
        self.frames.iter().find(|f| f.frame_id == frame_id)
    }

    pub fn is_training_frame(&self, frame_id: u32) -> bool {
        self.training_frame_ids.contains(&frame_id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseRecord {
    pub frame_id: u32,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Headline counts in the shape of the usual dataset statistics table.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetStats {
    pub total_frames: usize,
    pub training_frames: usize,
    pub anchors: usize,
}

/// Fully loaded and validated dataset: manifest + anchors + poses.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub anchors: AnchorsByFrame,
    pub poses: Vec<PoseRecord>,
}

impl Dataset {
    /// Load everything a manifest references and cross-validate:
    /// anchor frame ids must exist, anchor centers must be inside their
    /// frame, pose indices must be in range.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Dataset> {
        let manifest = load_manifest(manifest_path)?;
        let anchors = load_anchors(manifest.root.join(&manifest.anchor_file))?;
        let poses = match &manifest.pose_file {
            Some(p) => load_poses(manifest.root.join(p))?,
            None => Vec::new(),
        };

        let frame_ids: BTreeSet<u32> = manifest.frames.iter().map(|f| f.frame_id).collect();
        for frame_id in anchors.keys() {
            if !frame_ids.contains(frame_id) {
                return Err(Error::data(format!(
                    "anchor references unknown frame {frame_id}"
                )));
            }
        }
        for frame in &manifest.frames {
            if let Some(list) = anchors.get(&frame.frame_id) {
                let (w, h) = ppm_dimensions(manifest.image_path(frame))?;
                for a in list {
                    if a.center_u as usize >= w || a.center_v as usize >= h {
                        return Err(Error::data(format!(
                            "anchor center ({}, {}) outside image bounds {}x{} on frame {}",
                            a.center_u, a.center_v, w, h, frame.frame_id
                        )));
                    }
                }
            }
            if let Some(idx) = frame.pose_index {
                if idx >= poses.len() {
                    return Err(Error::data(format!(
                        "frame {} pose_index {} out of range ({} poses)",
                        frame.frame_id,
                        idx,
                        poses.len()
                    )));
                }
            }
        }
        Ok(Dataset {
            manifest,
            anchors,
            poses,
        })
    }

    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            total_frames: self.manifest.frames.len(),
            training_frames: self.manifest.training_frame_ids.len(),
            anchors: self.anchors.values().map(Vec::len).sum(),
        }
    }

    pub fn pose_for(&self, frame: &FrameRecord) -> Option<PoseRecord> {
        frame.pose_index.map(|i| self.poses[i])
    }
}

/// Parse and validate a manifest. Every referenced file is checked for
/// existence (images, anchor file, pose file).
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();

    let mut subset_name = None;
    let mut frames: Vec<FrameRecord> = Vec::new();
    let mut training: Option<Vec<u32>> = None;
    let mut anchor_file = None;
    let mut pose_file = None;

    for (lineno, raw) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let keyword = parts.next().unwrap();
        let err = |msg: String| Error::parse(path, lineno, msg);
        match keyword {
            "subset" => {
                let name = parts
                    .next()
                    .ok_or_else(|| err("subset requires a name".into()))?;
                subset_name = Some(name.to_string());
            }
            "frame" => {
                if subset_name.is_none() {
                    return Err(err("frame line before subset line".into()));
                }
                if training.is_some() {
                    return Err(err("frame line after train line".into()));
                }
                let id: u32 = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| err("frame requires a non-negative integer id".into()))?;
                let image_path = parts
                    .next()
                    .ok_or_else(|| err("frame requires an image path".into()))?
                    .to_string();
                let pose_index = match parts.next() {
                    Some(t) => Some(
                        t.parse::<usize>()
                            .map_err(|_| err(format!("invalid pose index {t:?}")))?,
                    ),
                    None => None,
                };
                frames.push(FrameRecord {
                    frame_id: id,
                    image_path,
                    pose_index,
                });
            }
            "train" => {
                let list = match parts.next() {
                    None => Vec::new(),
                    Some(tok) => tok
                        .split(',')
                        .filter(|s| !s.is_empty())
                        .map(|s| {
                            s.parse::<u32>()
                                .map_err(|_| err(format!("invalid training frame id {s:?}")))
                        })
                        .collect::<Result<Vec<u32>>>()?,
                };
                training = Some(list);
            }
            "anchors" => {
                let p = parts
                    .next()
                    .ok_or_else(|| err("anchors requires a path".into()))?;
                anchor_file = Some(p.to_string());
            }
            "poses" => {
                let p = parts
                    .next()
                    .ok_or_else(|| err("poses requires a path".into()))?;
                pose_file = Some(p.to_string());
            }
            other => return Err(err(format!("unknown keyword {other:?}"))),
        }
    }

    let subset_name =
        subset_name.ok_or_else(|| Error::parse(path, 1, "missing subset line".to_string()))?;
    if frames.is_empty() {
        return Err(Error::data("manifest has no frames"));
    }
    let training_frame_ids =
        training.ok_or_else(|| Error::data("manifest has no train line"))?;
    let anchor_file = anchor_file.ok_or_else(|| Error::data("manifest has no anchors line"))?;

    let mut seen = BTreeSet::new();
    for f in &frames {
        if !seen.insert(f.frame_id) {
            return Err(Error::data(format!("duplicate frame_id {}", f.frame_id)));
        }
    }
    for id in &training_frame_ids {
        if !seen.contains(id) {
            return Err(Error::data(format!(
                "training frame {id} is not in the frame list"
            )));
        }
    }

    let manifest = DatasetManifest {
        subset_name,
        frames,
        training_frame_ids,
        anchor_file,
        pose_file,
        root,
    };

    for frame in &manifest.frames {
        let p = manifest.image_path(frame);
        if !p.is_file() {
            return Err(Error::data(format!("missing file {}", p.display())));
        }
    }
    let anchors_path = manifest.root.join(&manifest.anchor_file);
    if !anchors_path.is_file() {
        return Err(Error::data(format!("missing file {}", anchors_path.display())));
    }
    if let Some(p) = &manifest.pose_file {
        let pose_path = manifest.root.join(p);
        if !pose_path.is_file() {
            return Err(Error::data(format!("missing file {}", pose_path.display())));
        }
    }
    Ok(manifest)
}

const ANCHOR_HEADER: &str = "frame_id,center_u,center_v,patch_size,label_id";
const POSE_HEADER: &str = "frame_id,x,y,heading";

/// Parse an anchor CSV into per-frame groups.
pub fn load_anchors(path: impl AsRef<Path>) -> Result<AnchorsByFrame> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == ANCHOR_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header {ANCHOR_HEADER:?}"),
            ))
        }
    }
    let mut grouped: AnchorsByFrame = BTreeMap::new();
    for (lineno, raw) in lines {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 5 fields, found {}", fields.len()),
            ));
        }
        let int = |i: usize, what: &str| -> Result<i64> {
            fields[i]
                .trim()
                .parse::<i64>()
                .map_err(|_| Error::parse(path, lineno, format!("invalid {what} {:?}", fields[i])))
        };
        let frame_id = int(0, "frame_id")?;
        let center_u = int(1, "center_u")?;
        let center_v = int(2, "center_v")?;
        let size = int(3, "patch_size")?;
        let label_id = int(4, "label_id")?;
        if frame_id < 0 || center_u < 0 || center_v < 0 || label_id < 0 {
            return Err(Error::parse(path, lineno, "negative field".to_string()));
        }
        if size < 1 {
            return Err(Error::parse(
                path,
                lineno,
                format!("patch_size must be positive, got {size}"),
            ));
        }
        grouped.entry(frame_id as u32).or_default().push(AnchorPatch {
            frame_id: frame_id as u32,
            center_u: center_u as u32,
            center_v: center_v as u32,
            size: size as u32,
            label_id: label_id as u32,
        });
    }
    Ok(grouped)
}

pub fn write_anchors(anchors: &AnchorsByFrame, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(ANCHOR_HEADER);
    out.push('\n');
    for list in anchors.values() {
        for a in list {
            writeln!(
                out,
                "{},{},{},{},{}",
                a.frame_id, a.center_u, a.center_v, a.size, a.label_id
            )
            .unwrap();
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Parse a pose CSV. Headings must lie in [-pi, pi).
pub fn load_poses(path: impl AsRef<Path>) -> Result<Vec<PoseRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == POSE_HEADER => {}
        _ => {
            return Err(Error::parse(
                path,
                1,
                format!("expected header {POSE_HEADER:?}"),
            ))
        }
    }
    let mut poses = Vec::new();
    for (lineno, raw) in lines {
        let lineno = lineno + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::parse(
                path,
                lineno,
                format!("expected 4 fields, found {}", fields.len()),
            ));
        }
        let frame_id = fields[0]
            .trim()
            .parse::<u32>()
            .map_err(|_| Error::parse(path, lineno, "invalid frame_id".to_string()))?;
        let num = |i: usize, what: &str| -> Result<f64> {
            fields[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(path, lineno, format!("invalid {what}")))
        };
        let x = num(1, "x")?;
        let y = num(2, "y")?;
        let heading = num(3, "heading")?;
        if !(-std::f64::consts::PI..std::f64::consts::PI).contains(&heading) {
            return Err(Error::parse(
                path,
                lineno,
                format!("heading {heading} outside [-pi, pi)"),
            ));
        }
        poses.push(PoseRecord {
            frame_id,
            x,
            y,
            heading,
        });
    }
    Ok(poses)
}

pub fn write_poses(poses: &[PoseRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(POSE_HEADER);
    out.push('\n');
    for p in poses {
        writeln!(out, "{},{},{},{}", p.frame_id, p.x, p.y, p.heading).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Serialize a manifest in the canonical line order.
pub fn write_manifest(manifest: &DatasetManifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    writeln!(out, "subset {}", manifest.subset_name).unwrap();
    for f in &manifest.frames {
        match f.pose_index {
            Some(i) => writeln!(out, "frame {} {} {}", f.frame_id, f.image_path, i).unwrap(),
            None => writeln!(out, "frame {} {}", f.frame_id, f.image_path).unwrap(),
        }
    }
    let ids: Vec<String> = manifest
        .training_frame_ids
        .iter()
        .map(|i| i.to_string())
        .collect();
    if ids.is_empty() {
        writeln!(out, "train").unwrap();
    } else {
        writeln!(out, "train {}", ids.join(",")).unwrap();
    }
    writeln!(out, "anchors {}", manifest.anchor_file).unwrap();
    if let Some(p) = &manifest.pose_file {
        writeln!(out, "poses {}", p).unwrap();
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{write_ppm, RasterImage};

    fn write_tiny_image(path: &Path, w: usize, h: usize) {
        write_ppm(&RasterImage::new(w, h), path).unwrap();
    }

    fn basic_dataset(dir: &Path) -> PathBuf {
        write_tiny_image(&dir.join("f0.ppm"), 8, 8);
        write_tiny_image(&dir.join("f1.ppm"), 8, 8);
        fs::write(
            dir.join("anchors.csv"),
            "frame_id,center_u,center_v,patch_size,label_id\n0,2,2,2,0\n0,5,5,2,1\n1,3,3,2,0\n",
        )
        .unwrap();
        fs::write(
            dir.join("poses.csv"),
            "frame_id,x,y,heading\n0,0,0,0\n1,0.5,0,0\n",
        )
        .unwrap();
        let manifest = dir.join("manifest.txt");
        fs::write(
            &manifest,
            "subset tiny\nframe 0 f0.ppm 0\nframe 1 f1.ppm 1\ntrain 0\nanchors anchors.csv\nposes poses.csv\n",
        )
        .unwrap();
        manifest
    }

    #[test]
    fn loads_and_counts() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = basic_dataset(dir.path());
        let ds = Dataset::load(&manifest).unwrap();
        let stats = ds.stats();
        assert_eq!(stats.total_frames, 2);
        assert_eq!(stats.training_frames, 1);
        assert_eq!(stats.anchors, 3);
    }

    #[test]
    fn table_shaped_counts_scale() {
        // Large manifest in the shape of the usual statistics table:
        // 5064 frames, 50 training frames, 973 anchors.
        let dir = tempfile::tempdir().unwrap();
        write_tiny_image(&dir.path().join("shared.ppm"), 4, 4);
        let mut manifest_text = String::from("subset a\n");
        for id in 0..5064u32 {
            let name = format!("img_{id}.ppm");
            fs::hard_link(dir.path().join("shared.ppm"), dir.path().join(&name))
                .or_else(|_| {
                    fs::copy(dir.path().join("shared.ppm"), dir.path().join(&name)).map(|_| ())
                })
                .unwrap();
            writeln!(manifest_text, "frame {id} {name}").unwrap();
        }
        let train_ids: Vec<String> = (0..50u32).map(|i| i.to_string()).collect();
        writeln!(manifest_text, "train {}", train_ids.join(",")).unwrap();
        writeln!(manifest_text, "anchors anchors.csv").unwrap();
        let mut anchors_text = String::from(ANCHOR_HEADER);
        anchors_text.push('\n');
        for i in 0..973 {
            writeln!(anchors_text, "{},1,1,1,{}", i % 50, i % 3).unwrap();
        }
        fs::write(dir.path().join("anchors.csv"), anchors_text).unwrap();
        let manifest_path = dir.path().join("manifest.txt");
        fs::write(&manifest_path, manifest_text).unwrap();

        let ds = Dataset::load(&manifest_path).unwrap();
        let stats = ds.stats();
        assert_eq!(stats.total_frames, 5064);
        assert_eq!(stats.training_frames, 50);
        assert_eq!(stats.anchors, 973);
    }

    #[test]
    fn empty_frame_list_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.txt");
        fs::write(&manifest, "subset x\ntrain\nanchors a.csv\n").unwrap();
        let err = load_manifest(&manifest).unwrap_err();
        assert!(err.to_string().contains("manifest has no frames"), "{err}");
    }

    #[test]
    fn duplicate_frame_id_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_image(&dir.path().join("f.ppm"), 2, 2);
        let manifest = dir.path().join("m.txt");
        fs::write(
            &manifest,
            "subset x\nframe 3 f.ppm\nframe 3 f.ppm\ntrain\nanchors a.csv\n",
        )
        .unwrap();
        let err = load_manifest(&manifest).unwrap_err();
        assert!(err.to_string().contains("duplicate frame_id 3"), "{err}");
    }

    #[test]
    fn missing_image_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let manifest = dir.path().join("m.txt");
        fs::write(
            &manifest,
            "subset x\nframe 0 nowhere.ppm\ntrain\nanchors a.csv\n",
        )
        .unwrap();
        let err = load_manifest(&manifest).unwrap_err();
        assert!(err.to_string().contains("nowhere.ppm"), "{err}");
    }

    #[test]
    fn training_id_must_exist() {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_image(&dir.path().join("f.ppm"), 2, 2);
        fs::write(dir.path().join("a.csv"), format!("{ANCHOR_HEADER}\n")).unwrap();
        let manifest = dir.path().join("m.txt");
        fs::write(
            &manifest,
            "subset x\nframe 0 f.ppm\ntrain 9\nanchors a.csv\n",
        )
        .unwrap();
        let err = load_manifest(&manifest).unwrap_err();
        assert!(err.to_string().contains("training frame 9"), "{err}");
    }

    #[test]
    fn anchor_record_parses() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, format!("{ANCHOR_HEADER}\n7,100,200,64,2\n")).unwrap();
        let anchors = load_anchors(&path).unwrap();
        assert_eq!(
            anchors[&7],
            vec![AnchorPatch {
                frame_id: 7,
                center_u: 100,
                center_v: 200,
                size: 64,
                label_id: 2
            }]
        );
    }

    #[test]
    fn labels_group_per_frame() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, format!("{ANCHOR_HEADER}\n0,1,1,2,0\n1,1,1,2,0\n")).unwrap();
        let anchors = load_anchors(&path).unwrap();
        // Same label id on two frames stays in two separate groups.
        assert_eq!(anchors.len(), 2);
        assert_eq!(anchors[&0][0].label_id, anchors[&1][0].label_id);
    }

    #[test]
    fn negative_patch_size_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.csv");
        fs::write(&path, format!("{ANCHOR_HEADER}\n0,1,1,-4,0\n")).unwrap();
        let err = load_anchors(&path).unwrap_err();
        assert!(err.to_string().contains("patch_size"), "{err}");
    }

    #[test]
    fn out_of_bounds_anchor_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        write_tiny_image(&dir.path().join("f.ppm"), 8, 8);
        fs::write(
            dir.path().join("a.csv"),
            format!("{ANCHOR_HEADER}\n0,18,2,2,0\n"),
        )
        .unwrap();
        let manifest = dir.path().join("m.txt");
        fs::write(&manifest, "subset x\nframe 0 f.ppm\ntrain\nanchors a.csv\n").unwrap();
        let err = Dataset::load(&manifest).unwrap_err();
        assert!(err.to_string().contains("outside image bounds"), "{err}");
    }

    #[test]
    fn heading_domain_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        fs::write(&path, format!("{POSE_HEADER}\n0,0,0,3.15\n")).unwrap();
        let err = load_poses(&path).unwrap_err();
        assert!(err.to_string().contains("outside [-pi, pi)"), "{err}");
    }

    #[test]
    fn manifest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let manifest_path = basic_dataset(dir.path());
        let manifest = load_manifest(&manifest_path).unwrap();
        let copy_path = dir.path().join("copy.txt");
        write_manifest(&manifest, &copy_path).unwrap();
        let back = load_manifest(&copy_path).unwrap();
        assert_eq!(back.subset_name, manifest.subset_name);
        assert_eq!(back.frames.len(), manifest.frames.len());
        assert_eq!(back.training_frame_ids, manifest.training_frame_ids);
    }
}
