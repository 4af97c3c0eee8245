//! Frames, layouts, clips, manifests and benchmark splits.

pub mod camera;
pub mod clips;
pub mod frame;
pub mod layout;
pub mod manifest;
pub mod split;

pub use camera::{project_3d_to_2d, CameraModel};
pub use clips::{clip_ranges, segment_clips, ClipMeta, ClipPair, VideoStream, DEFAULT_CLIP_LEN};
pub use frame::{crop_resize, Frame, Rect};
pub use layout::{
    render_mask_layout, render_pose_layout, render_pose_layout_with, Hand, Layout, MaskLayout,
    PoseLayout, RenderStyle, Skeleton, JOINTS_PER_HAND, LAYOUT_CHANNELS, MAX_HANDS,
};
pub use manifest::{frame_dir_manifest, scan_dataset, sorted_files, ClipRecord, DatasetManifest, VideoMeta, STREAM_DIRS};
pub use split::{generate_split, Split, SplitSpec};
