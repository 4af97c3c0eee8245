use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::data::frame::Frame;
use crate::data::layout::Layout;
use crate::error::{ensure, Result};

/// Frames per clip used throughout the benchmark.
pub const DEFAULT_CLIP_LEN: usize = 30;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClipMeta {
    pub video_id: String,
    pub subject_id: String,
    pub object_id: String,
    pub scene_id: String,
    pub clip_index: usize,
}

impl ClipMeta {
    /// `video_id#clip_index`, used in diagnostics and output paths.
    pub fn clip_id(&self) -> String {
        format!("{}#{}", self.video_id, self.clip_index)
    }

    pub fn validate(&self) -> Result<()> {
        for (field, value) in [
            ("video_id", &self.video_id),
            ("subject_id", &self.subject_id),
            ("object_id", &self.object_id),
            ("scene_id", &self.scene_id),
        ] {
            ensure!(!value.is_empty(), InvalidInput, "clip {}: empty {field}", self.clip_id());
        }
        Ok(())
    }
}

/// Time-synchronized exo/ego frames and layouts for one clip.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipPair {
    pub meta: ClipMeta,
    pub exo_frames: Vec<Frame>,
    pub ego_frames: Vec<Frame>,
    pub exo_layouts: Vec<Layout>,
    pub ego_layouts: Vec<Layout>,
}

impl ClipPair {
    pub fn len(&self) -> usize {
        self.exo_frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exo_frames.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        self.meta.validate()?;
        let t = self.exo_frames.len();
        ensure!(
            self.ego_frames.len() == t && self.exo_layouts.len() == t && self.ego_layouts.len() == t,
            InvalidInput,
            "clip {}: stream lengths differ (exo {t}, ego {}, exo layouts {}, ego layouts {})",
            self.meta.clip_id(),
            self.ego_frames.len(),
            self.exo_layouts.len(),
            self.ego_layouts.len()
        );
        Ok(())
    }
}

/// A whole synchronized recording before segmentation. The metadata's
/// `clip_index` is ignored.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoStream {
    pub meta: ClipMeta,
    pub exo_frames: Vec<Frame>,
    pub ego_frames: Vec<Frame>,
    pub exo_layouts: Vec<Layout>,
    pub ego_layouts: Vec<Layout>,
}

/// Contiguous, non-overlapping `clip_len` windows over `n` frames; the
/// trailing remainder is dropped.
pub fn clip_ranges(n: usize, clip_len: usize) -> Vec<Range<usize>> {
    if clip_len == 0 {
        return Vec::new();
    }
    (0..n / clip_len).map(|i| i * clip_len..(i + 1) * clip_len).collect()
}

/// Cuts a video into `floor(T / clip_len)` clips in temporal order.
pub fn segment_clips(video: &VideoStream, clip_len: usize) -> Result<Vec<ClipPair>> {
    ensure!(clip_len >= 1, InvalidInput, "clip length must be at least 1");
    let t = video.exo_frames.len();
    ensure!(
        video.ego_frames.len() == t && video.exo_layouts.len() == t && video.ego_layouts.len() == t,
        InvalidInput,
        "video {}: stream lengths differ",
        video.meta.video_id
    );
    Ok(clip_ranges(t, clip_len)
        .into_iter()
        .enumerate()
        .map(|(i, r)| ClipPair {
            meta: ClipMeta {
                clip_index: i,
                ..video.meta.clone()
            },
            exo_frames: video.exo_frames[r.clone()].to_vec(),
            ego_frames: video.ego_frames[r.clone()].to_vec(),
            exo_layouts: video.exo_layouts[r.clone()].to_vec(),
            ego_layouts: video.ego_layouts[r].to_vec(),
        })
        .collect())
}
