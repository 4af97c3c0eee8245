//! JSON dataset manifests: clip metadata plus per-frame file references.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::camera::CameraModel;
use crate::data::clips::{ClipMeta, ClipPair};
use crate::data::frame::Frame;
use crate::data::layout::Layout;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipRecord {
    #[serde(flatten)]
    pub meta: ClipMeta,
    pub exo_frames: Vec<PathBuf>,
    #[serde(default)]
    pub ego_frames: Vec<PathBuf>,
    #[serde(default)]
    pub exo_layouts: Vec<PathBuf>,
    #[serde(default)]
    pub ego_layouts: Vec<PathBuf>,
}

impl ClipRecord {
    pub fn has_exo_layouts(&self) -> bool {
        !self.exo_layouts.is_empty() && self.exo_layouts.len() == self.exo_frames.len()
    }

    pub fn has_ego(&self) -> bool {
        self.ego_frames.len() == self.exo_frames.len() && self.ego_layouts.len() == self.exo_frames.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub dataset_name: String,
    pub clips: Vec<ClipRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cameras: Option<BTreeMap<String, CameraModel>>,
    /// Directory relative paths resolve against; set by [`DatasetManifest::load`].
    #[serde(skip)]
    pub root: PathBuf,
}

impl DatasetManifest {
    pub fn new(dataset_name: impl Into<String>, root: impl Into<PathBuf>) -> Self {
        Self {
            dataset_name: dataset_name.into(),
            clips: Vec::new(),
            cameras: None,
            root: root.into(),
        }
    }

    /// Clips ordered by `(video_id, clip_index)`.
    pub fn sort(&mut self) {
        self.clips
            .sort_by(|a, b| (&a.meta.video_id, a.meta.clip_index).cmp(&(&b.meta.video_id, b.meta.clip_index)));
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(!self.dataset_name.is_empty(), InvalidInput, "manifest has an empty dataset_name");
        let mut seen = BTreeSet::new();
        for c in &self.clips {
            c.meta.validate()?;
            ensure!(
                seen.insert((&c.meta.video_id, c.meta.clip_index)),
                InvalidInput,
                "duplicate clip {}",
                c.meta.clip_id()
            );
            let t = c.exo_frames.len();
            ensure!(t > 0, InvalidInput, "clip {} has no exo frames", c.meta.clip_id());
            for (name, list) in [
                ("ego_frames", &c.ego_frames),
                ("exo_layouts", &c.exo_layouts),
                ("ego_layouts", &c.ego_layouts),
            ] {
                ensure!(
                    list.is_empty() || list.len() == t,
                    InvalidInput,
                    "clip {}: {name} has {} entries, expected {t}",
                    c.meta.clip_id(),
                    list.len()
                );
            }
        }
        if let Some(cams) = &self.cameras {
            for (view, cam) in cams {
                cam.validate()
                    .map_err(|e| Error::Config(format!("camera {view}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut m: DatasetManifest = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        m.root = path
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_default();
        m.sort();
        m.validate()?;
        Ok(m)
    }

    /// Writes the manifest with paths expressed relative to the output file's
    /// directory where possible (absolute otherwise).
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let rebased = self.rebased(&dir);
        let text = serde_json::to_string_pretty(&rebased).expect("manifest serializes");
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// The same manifest with every path rewritten to resolve from `new_root`.
    pub fn rebased(&self, new_root: &Path) -> DatasetManifest {
        let old = absolute(&self.root);
        let new = absolute(new_root);
        let fix = |p: &PathBuf| -> PathBuf {
            if p.is_absolute() {
                return p.clone();
            }
            if old == new {
                return p.clone();
            }
            let full = old.join(p);
            match full.strip_prefix(&new) {
                Ok(rel) => rel.to_path_buf(),
                Err(_) => full,
            }
        };
        let mut out = self.clone();
        for c in &mut out.clips {
            for list in [
                &mut c.exo_frames,
                &mut c.ego_frames,
                &mut c.exo_layouts,
                &mut c.ego_layouts,
            ] {
                *list = list.iter().map(fix).collect();
            }
        }
        out.root = new_root.to_path_buf();
        out
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    /// Loads pixels and layouts for one clip. Ego streams are required.
    pub fn load_clip(&self, record: &ClipRecord) -> Result<ClipPair> {
        let load = || -> Result<ClipPair> {
            ensure!(
                record.has_exo_layouts() && record.has_ego(),
                InvalidInput,
                "clip is missing exo layouts or ego streams"
            );
            let frames = |list: &[PathBuf]| -> Result<Vec<Frame>> {
                list.iter().map(|p| Frame::load_png(&self.resolve(p))).collect()
            };
            let layouts = |list: &[PathBuf]| -> Result<Vec<Layout>> {
                list.iter().map(|p| Layout::load(&self.resolve(p))).collect()
            };
            let clip = ClipPair {
                meta: record.meta.clone(),
                exo_frames: frames(&record.exo_frames)?,
                ego_frames: frames(&record.ego_frames)?,
                exo_layouts: layouts(&record.exo_layouts)?,
                ego_layouts: layouts(&record.ego_layouts)?,
            };
            clip.validate()?;
            Ok(clip)
        };
        load().map_err(|e| Error::Clip {
            clip: record.meta.clip_id(),
            source: Box::new(e),
        })
    }

    /// Loads every clip (in parallel); output order follows the manifest.
    pub fn load_clips(&self) -> Result<Vec<ClipPair>> {
        self.clips.par_iter().map(|r| self.load_clip(r)).collect()
    }

    /// Loads only exo frames and exo layouts (no ego ground truth).
    pub fn load_exo(&self, record: &ClipRecord) -> Result<(Vec<Frame>, Vec<Layout>)> {
        let load = || -> Result<(Vec<Frame>, Vec<Layout>)> {
            ensure!(
                record.has_exo_layouts(),
                InvalidInput,
                "manifest provides no exo layouts for this clip; inference needs one exo layout per exo frame"
            );
            let frames = record
                .exo_frames
                .iter()
                .map(|p| Frame::load_png(&self.resolve(p)))
                .collect::<Result<_>>()?;
            let layouts = record
                .exo_layouts
                .iter()
                .map(|p| Layout::load(&self.resolve(p)))
                .collect::<Result<_>>()?;
            Ok((frames, layouts))
        };
        load().map_err(|e| Error::Clip {
            clip: record.meta.clip_id(),
            source: Box::new(e),
        })
    }
}

/// Identifiers stored as `meta.json` in each video directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub subject_id: String,
    pub object_id: String,
    pub scene_id: String,
}

/// Per-video stream subdirectories read by [`scan_dataset`].
pub const STREAM_DIRS: [&str; 4] = ["exo", "ego", "exo_layout", "ego_layout"];

/// Files in `dir` with one of the extensions, sorted by name; empty when `dir` is absent.
pub fn sorted_files(dir: &Path, ext: &[&str]) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| ext.contains(&e)) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// One unlabelled clip from `dir/exo/*.png` and `dir/exo_layout/*`, for
/// inference on a bare frame directory.
pub fn frame_dir_manifest(dir: &Path) -> Result<DatasetManifest> {
    let exo = sorted_files(&dir.join("exo"), &["png"])?;
    ensure!(!exo.is_empty(), InvalidInput, "{}: no exo/*.png frames", dir.display());
    let layouts = sorted_files(&dir.join("exo_layout"), &["json", "png"])?;
    let rel = |p: &PathBuf| p.strip_prefix(dir).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
    let name = dir.file_name().and_then(|n| n.to_str()).unwrap_or("frames").to_string();
    let mut manifest = DatasetManifest::new(name.clone(), dir);
    manifest.clips.push(ClipRecord {
        meta: ClipMeta {
            video_id: name,
            subject_id: "unknown".into(),
            object_id: "unknown".into(),
            scene_id: "unknown".into(),
            clip_index: 0,
        },
        exo_frames: exo.iter().map(rel).collect(),
        ego_frames: Vec::new(),
        exo_layouts: layouts.iter().map(rel).collect(),
        ego_layouts: Vec::new(),
    });
    Ok(manifest)
}

/// Builds a manifest from a directory tree:
///
/// ```text
/// root/<video_id>/meta.json
/// root/<video_id>/exo/*.png         ego/*.png
/// root/<video_id>/exo_layout/*.json ego_layout/*.json   (or *.png masks)
/// ```
///
/// Files are ordered by name and each video is cut into `clip_len` clips.
/// Missing ego or layout directories yield empty lists.
pub fn scan_dataset(root: &Path, dataset_name: &str, clip_len: usize) -> Result<DatasetManifest> {
    ensure!(clip_len >= 1, InvalidInput, "clip length must be at least 1");
    let mut videos = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.join("meta.json").is_file() {
            videos.push(path);
        }
    }
    videos.sort();
    let mut manifest = DatasetManifest::new(dataset_name, root);
    for dir in videos {
        let video_id = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        let meta_path = dir.join("meta.json");
        let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: VideoMeta = serde_json::from_str(&text).map_err(|e| Error::json(&meta_path, e))?;
        let exo = sorted_files(&dir.join("exo"), &["png"])?;
        let ego = sorted_files(&dir.join("ego"), &["png"])?;
        let exo_l = sorted_files(&dir.join("exo_layout"), &["json", "png"])?;
        let ego_l = sorted_files(&dir.join("ego_layout"), &["json", "png"])?;
        let rel = |p: &PathBuf| p.strip_prefix(root).map(Path::to_path_buf).unwrap_or_else(|_| p.clone());
        let part = |list: &[PathBuf], r: &std::ops::Range<usize>| -> Vec<PathBuf> {
            if list.len() == exo.len() {
                list[r.clone()].iter().map(rel).collect()
            } else {
                Vec::new()
            }
        };
        for (i, r) in crate::data::clips::clip_ranges(exo.len(), clip_len).into_iter().enumerate() {
            manifest.clips.push(ClipRecord {
                meta: ClipMeta {
                    video_id: video_id.clone(),
                    subject_id: meta.subject_id.clone(),
                    object_id: meta.object_id.clone(),
                    scene_id: meta.scene_id.clone(),
                    clip_index: i,
                },
                exo_frames: part(&exo, &r),
                ego_frames: part(&ego, &r),
                exo_layouts: part(&exo_l, &r),
                ego_layouts: part(&ego_l, &r),
            });
        }
    }
    manifest.sort();
    manifest.validate()?;
    Ok(manifest)
}

fn absolute(p: &Path) -> PathBuf {
    let p = if p.as_os_str().is_empty() { Path::new(".") } else { p };
    std::fs::canonicalize(p).unwrap_or_else(|_| {
        std::env::current_dir()
            .map(|d| d.join(p))
            .unwrap_or_else(|_| p.to_path_buf())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(video: &str, idx: usize) -> ClipRecord {
        ClipRecord {
            meta: ClipMeta {
                video_id: video.into(),
                subject_id: "s1".into(),
                object_id: "o1".into(),
                scene_id: "k1".into(),
                clip_index: idx,
            },
            exo_frames: vec![PathBuf::from(format!("{video}/exo/{idx}.png"))],
            ego_frames: vec![PathBuf::from(format!("{video}/ego/{idx}.png"))],
            exo_layouts: vec![PathBuf::from(format!("{video}/exo/{idx}.json"))],
            ego_layouts: vec![PathBuf::from(format!("{video}/ego/{idx}.json"))],
        }
    }

    #[test]
    fn json_schema_field_names() {
        let mut m = DatasetManifest::new("toy", "");
        m.clips.push(record("v1", 0));
        let v: serde_json::Value = serde_json::to_value(&m).unwrap();
        let clip = &v["clips"][0];
        for key in [
            "video_id",
            "subject_id",
            "object_id",
            "scene_id",
            "clip_index",
            "exo_frames",
            "ego_frames",
            "exo_layouts",
            "ego_layouts",
        ] {
            assert!(clip.get(key).is_some(), "missing {key}");
        }
        assert_eq!(v["dataset_name"], "toy");
        assert!(v.get("cameras").is_none());
    }

    #[test]
    fn load_sorts_and_save_rebases() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = DatasetManifest::new("toy", dir.path());
        m.clips = vec![record("v2", 0), record("v1", 1), record("v1", 0)];
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        let back = DatasetManifest::load(&path).unwrap();
        let order: Vec<_> = back.clips.iter().map(|c| c.meta.clip_id()).collect();
        assert_eq!(order, ["v1#0", "v1#1", "v2#0"]);

        let sub = dir.path().join("splits");
        back.save(&sub.join("train.json")).unwrap();
        let moved = DatasetManifest::load(&sub.join("train.json")).unwrap();
        assert_eq!(
            moved.resolve(&moved.clips[0].exo_frames[0]),
            absolute(dir.path()).join("v1/exo/0.png")
        );
    }

    #[test]
    fn empty_metadata_and_duplicates_are_rejected() {
        let mut m = DatasetManifest::new("toy", "");
        let mut r = record("v1", 0);
        r.meta.subject_id.clear();
        m.clips.push(r);
        assert!(m.validate().is_err());
        let mut m = DatasetManifest::new("toy", "");
        m.clips = vec![record("v1", 0), record("v1", 0)];
        assert!(m.validate().is_err());
    }

    #[test]
    fn scan_segments_videos_and_drops_remainders() {
        let dir = tempfile::tempdir().unwrap();
        for (v, n) in [("b", 5), ("a", 7)] {
            let vd = dir.path().join(v);
            for s in STREAM_DIRS {
                std::fs::create_dir_all(vd.join(s)).unwrap();
            }
            let meta = VideoMeta {
                subject_id: "s".into(),
                object_id: "o".into(),
                scene_id: "k".into(),
            };
            std::fs::write(vd.join("meta.json"), serde_json::to_string(&meta).unwrap()).unwrap();
            for i in 0..n {
                Frame::zeros(2, 2, 3).save_png(&vd.join(format!("exo/{i:06}.png"))).unwrap();
                Frame::zeros(2, 2, 3).save_png(&vd.join(format!("ego/{i:06}.png"))).unwrap();
                crate::data::layout::PoseLayout::empty().save_json(&vd.join(format!("exo_layout/{i:06}.json"))).unwrap();
            }
        }
        std::fs::create_dir_all(dir.path().join("not_a_video")).unwrap();
        let m = scan_dataset(dir.path(), "toy", 2).unwrap();
        let ids: Vec<_> = m.clips.iter().map(|c| c.meta.clip_id()).collect();
        assert_eq!(ids, ["a#0", "a#1", "a#2", "b#0", "b#1"]);
        assert_eq!(m.clips[1].exo_frames, [PathBuf::from("a/exo/000002.png"), PathBuf::from("a/exo/000003.png")]);
        assert!(m.clips[0].has_exo_layouts());
        assert!(m.clips[0].ego_layouts.is_empty());
        assert!(scan_dataset(dir.path(), "toy", 0).is_err());
    }

    #[test]
    fn missing_exo_layouts_are_reported_with_clip_id() {
        let mut r = record("v9", 3);
        r.exo_layouts.clear();
        let m = DatasetManifest::new("toy", "");
        let err = m.load_exo(&r).unwrap_err().to_string();
        assert!(err.contains("v9#3") && err.contains("exo layouts"), "{err}");
    }
}
