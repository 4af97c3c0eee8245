//! Deterministic synthetic exo/ego videos of a moving two-hand skeleton.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::clips::ClipMeta;
use crate::data::frame::Frame;
use crate::data::layout::{render_pose_layout, Hand, Layout, PoseLayout, JOINTS_PER_HAND};
use crate::data::manifest::{scan_dataset, DatasetManifest, VideoMeta, STREAM_DIRS};
use crate::data::clips::VideoStream;
use crate::error::{ensure, Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FixtureSpec {
    /// Square frame side in pixels.
    pub size: usize,
    pub videos: usize,
    pub frames: usize,
    pub clip_len: usize,
    /// Wrist swing amplitude in normalized exo coordinates.
    pub amplitude: f64,
    /// Swing cycles per 30 frames.
    pub frequency: f64,
    /// Std of Gaussian pixel noise added to exo frames.
    pub noise: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            size: 32,
            videos: 4,
            frames: 60,
            clip_len: 30,
            amplitude: 0.05,
            frequency: 1.0,
            noise: 0.02,
            seed: 0,
        }
    }
}

pub const FIXTURE_DATASET: &str = "fixtures";

/// Scale of the exo-to-ego joint map.
pub const EGO_SCALE: f64 = 1.6;
const EXO_ANCHOR: [f64; 2] = [0.5, 0.6];
const EGO_ANCHOR: [f64; 2] = [0.5, 0.55];

const SCENE_COLORS: [[f32; 3]; 4] = [
    [0.22, 0.32, 0.52],
    [0.52, 0.44, 0.28],
    [0.30, 0.50, 0.34],
    [0.46, 0.30, 0.46],
];
const EGO_SKIN: [[f32; 3]; 2] = [[0.93, 0.74, 0.60], [0.80, 0.58, 0.44]];
const EXO_SKIN: [f32; 3] = [0.72, 0.52, 0.40];

/// Metadata for video `v`: two videos per subject, alternating objects, mixed scenes.
pub fn video_meta(v: usize) -> ClipMeta {
    ClipMeta {
        video_id: format!("v{v}"),
        subject_id: format!("s{}", v / 2),
        object_id: format!("o{}", v % 2),
        scene_id: format!("k{}", (v + v / 2) % 2),
        clip_index: 0,
    }
}

fn scene_index(meta: &ClipMeta) -> usize {
    meta.scene_id[1..].parse::<usize>().unwrap_or(0) % SCENE_COLORS.len()
}

/// Joints of one hand relative to its wrist, fingers pointing up (`-v`).
fn hand_shape(tilt: f64, curl: f64, mirror: bool) -> Vec<[f64; 2]> {
    const ANGLES: [f64; 5] = [-0.95, -0.35, -0.08, 0.18, 0.42];
    const LENGTHS: [f64; 4] = [0.018, 0.016, 0.013, 0.011];
    let mut joints = vec![[0.0, 0.0]];
    for (f, &a) in ANGLES.iter().enumerate() {
        let base = if f == 0 { 0.014 } else { 0.024 };
        let mut angle = a + tilt;
        let mut p = [base * angle.sin(), -base * angle.cos()];
        for &len in &LENGTHS {
            joints.push(p);
            angle += curl * if f == 0 { -0.6 } else { 1.0 };
            p = [p[0] + len * angle.sin(), p[1] - len * angle.cos()];
        }
    }
    joints.truncate(JOINTS_PER_HAND);
    if mirror {
        for j in &mut joints {
            j[0] = -j[0];
        }
    }
    joints
}

/// Exo pose layout of video `v` at frame `t`.
pub fn exo_pose(spec: &FixtureSpec, v: usize, t: usize) -> PoseLayout {
    let hands = (0..2)
        .map(|h| {
            let theta = std::f64::consts::TAU * spec.frequency * t as f64 / 30.0 + 0.9 * v as f64 + 1.3 * h as f64;
            let base_u = if h == 0 { 0.38 } else { 0.62 };
            let wrist = [
                base_u + spec.amplitude * theta.sin(),
                0.64 + 0.6 * spec.amplitude * theta.cos(),
            ];
            let tilt = 0.25 * (theta + 0.5).sin() * if h == 0 { 1.0 } else { -1.0 };
            let curl = 0.15 + 0.12 * (1.7 * theta).sin();
            let joints = hand_shape(tilt, curl, h == 1)
                .into_iter()
                .map(|j| [wrist[0] + j[0], wrist[1] + j[1]])
                .collect();
            Hand::all_visible(joints)
        })
        .collect();
    PoseLayout { hands }
}

/// The viewpoint change: an enlargement about a shifted anchor.
pub fn exo_to_ego(exo: &PoseLayout) -> PoseLayout {
    PoseLayout {
        hands: exo
            .hands
            .iter()
            .map(|hand| Hand {
                joints: hand
                    .joints
                    .iter()
                    .map(|p| {
                        [
                            EGO_ANCHOR[0] + EGO_SCALE * (p[0] - EXO_ANCHOR[0]),
                            EGO_ANCHOR[1] + EGO_SCALE * (p[1] - EXO_ANCHOR[1]),
                        ]
                    })
                    .collect(),
                visible: hand.visible.clone(),
            })
            .collect(),
    }
}

/// Exo frame: textured scene background, small hands, pixel noise.
fn exo_frame(spec: &FixtureSpec, meta: &ClipMeta, pose: &PoseLayout, rng: &mut ChaCha8Rng) -> Result<Frame> {
    let n = spec.size;
    let render = render_pose_layout(pose, n, n)?;
    let color = SCENE_COLORS[scene_index(meta)];
    let phase = scene_index(meta) as f32 * 1.7;
    let noise = Normal::new(0.0, spec.noise.max(0.0)).map_err(|e| Error::Config(e.to_string()))?;
    let s = n as f32 / 32.0;
    Ok(Frame::from_fn(n, n, 3, |y, x, c| {
        let (yf, xf) = (y as f32 / s, x as f32 / s);
        let bg = color[c] + 0.06 * (0.5 * xf + 0.3 * yf + phase + c as f32).sin();
        let a = render.get(y, x, 0).max(render.get(y, x, 1));
        let v = bg * (1.0 - a) + EXO_SKIN[c] * a;
        v + noise.sample(rng) as f32
    }))
}

/// Ego frame: a function of the ego layout render and the scene color only.
pub fn ego_frame_from_render(render: &Frame, scene: usize) -> Frame {
    let color = SCENE_COLORS[scene % SCENE_COLORS.len()];
    let (h, w) = (render.height(), render.width());
    Frame::from_fn(h, w, 3, |y, x, c| {
        let bg = color[c] + 0.1 * (y as f32 / h as f32 - 0.5);
        let a0 = render.get(y, x, 0);
        let a1 = render.get(y, x, 1);
        let v = bg * (1.0 - a0.max(a1));
        v + EGO_SKIN[0][c] * a0 * (1.0 - a1) + EGO_SKIN[1][c] * a1
    })
}

/// Generates video `v` in memory.
pub fn fixture_video(spec: &FixtureSpec, v: usize) -> Result<VideoStream> {
    let meta = video_meta(v);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ v as u64);
    let mut video = VideoStream {
        meta: meta.clone(),
        exo_frames: Vec::with_capacity(spec.frames),
        ego_frames: Vec::with_capacity(spec.frames),
        exo_layouts: Vec::with_capacity(spec.frames),
        ego_layouts: Vec::with_capacity(spec.frames),
    };
    for t in 0..spec.frames {
        let exo = exo_pose(spec, v, t);
        let ego = exo_to_ego(&exo);
        ego.validate()?;
        video.exo_frames.push(exo_frame(spec, &meta, &exo, &mut rng)?);
        let render = render_pose_layout(&ego, spec.size, spec.size)?;
        video.ego_frames.push(ego_frame_from_render(&render, scene_index(&meta)));
        video.exo_layouts.push(Layout::Pose(exo));
        video.ego_layouts.push(Layout::Pose(ego));
    }
    Ok(video)
}

/// Writes `spec.videos` fixture videos under `out` plus `out/manifest.json`.
pub fn make_fixtures(spec: &FixtureSpec, out: &Path) -> Result<DatasetManifest> {
    ensure!(spec.size >= 8, Config, "fixture frames must be at least 8 pixels");
    ensure!(spec.videos >= 1 && spec.clip_len >= 1, Config, "need at least one video and clip_len >= 1");
    ensure!(spec.noise >= 0.0 && spec.noise.is_finite(), Config, "noise level must be non-negative");
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    for v in 0..spec.videos {
        let video = fixture_video(spec, v)?;
        let dir = out.join(&video.meta.video_id);
        for s in STREAM_DIRS {
            let d = dir.join(s);
            std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        let meta = VideoMeta {
            subject_id: video.meta.subject_id.clone(),
            object_id: video.meta.object_id.clone(),
            scene_id: video.meta.scene_id.clone(),
        };
        let meta_path = dir.join("meta.json");
        std::fs::write(&meta_path, serde_json::to_string_pretty(&meta).expect("meta serializes") + "\n")
            .map_err(|e| Error::io(&meta_path, e))?;
        for t in 0..spec.frames {
            video.exo_frames[t].save_png(&dir.join(format!("exo/{t:06}.png")))?;
            video.ego_frames[t].save_png(&dir.join(format!("ego/{t:06}.png")))?;
            video.exo_layouts[t].save(&dir.join(format!("exo_layout/{t:06}.json")))?;
            video.ego_layouts[t].save(&dir.join(format!("ego_layout/{t:06}.json")))?;
        }
    }
    let manifest = scan_dataset(out, FIXTURE_DATASET, spec.clip_len)?;
    manifest.save(&out.join("manifest.json"))?;
    Ok(manifest)
}
