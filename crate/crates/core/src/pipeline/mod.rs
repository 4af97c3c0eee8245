//! Training, inference and synthetic fixtures.

pub mod config;
pub mod fixtures;
pub mod infer;
pub mod train;

pub use config::{derive_seed, sha256_hex, InferConfig, PipelineConfig, SeedMode, StageConfig};
pub use fixtures::{make_fixtures, FixtureSpec, FIXTURE_DATASET};
pub use infer::{
    clip_dir, content_seed, evaluate_predictions, frame_seed, infer_clip, infer_frame, infer_manifest, write_prediction,
    ClipPrediction, RunMetadata, RUN_METADATA_FILE,
};
pub use train::{
    diffusion_examples, layout_examples, load_states, matched_joint_error, train, train_diffusion, train_layout, CheckpointPolicy, Stage,
    StageSelection, TrainOutcome,
};
