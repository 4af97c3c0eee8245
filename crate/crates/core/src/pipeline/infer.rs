//! Exo clip in, ego clip out; output files and run metadata.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::frame::Frame;
use crate::data::layout::Layout;
use crate::data::manifest::{ClipRecord, DatasetManifest};
use crate::diffusion::denoiser::DenoiserState;
use crate::diffusion::latent::Condition;
use crate::diffusion::sampler::sample;
use crate::error::{ensure, Error, Result};
use crate::metrics::report::{evaluate, Backends, MetricReport};
use crate::pipeline::config::{derive_seed, sha256_hex, InferConfig, PipelineConfig, SeedMode};
use crate::pipeline::train::{fit_frame, frame_size};
use crate::translator::TranslatorState;

/// Sampling seed for frame `index` of `clip_id`.
pub fn frame_seed(seed: u64, clip_id: &str, index: usize) -> u64 {
    derive_seed(seed, &[b"frame", clip_id.as_bytes(), &(index as u64).to_le_bytes()])
}

/// Sampling seed from the quantized pixels of an exo frame.
pub fn content_seed(seed: u64, frame: &Frame) -> u64 {
    derive_seed(seed, &[b"content", &frame.to_u8()])
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClipPrediction {
    pub frames: Vec<Frame>,
    pub layouts: Vec<Layout>,
    pub seeds: Vec<u64>,
}

/// Predicts one ego frame: layout first, then the conditioned sample.
pub fn infer_frame(
    exo_frame: &Frame,
    exo_layout: &Layout,
    translator: &TranslatorState,
    denoiser: &DenoiserState,
    config: &InferConfig,
    seed: u64,
) -> Result<(Frame, Layout)> {
    let tc = translator.config();
    let small = fit_frame(exo_frame, tc.height, tc.width)?;
    let layout = translator.predict_layout(&small, exo_layout)?;
    let (h, w) = frame_size(&denoiser.config);
    let codec = denoiser.config.codec.build();
    let exo = fit_frame(exo_frame, h, w)?;
    let d = Condition::build(codec.as_ref(), &exo, &layout.render(h, w)?)?;
    let dc = &denoiser.config.denoiser;
    let z = sample(
        denoiser,
        &d,
        (dc.latent_height, dc.latent_width, dc.latent_channels),
        &denoiser.schedule,
        seed,
        config.sampler,
    )?;
    Ok((codec.decode(&z)?, layout))
}

/// Runs both stages over every frame of a clip in parallel.
///
/// Each frame has its own seed, so the output does not depend on thread count.
pub fn infer_clip(
    exo_frames: &[Frame],
    exo_layouts: &[Layout],
    translator: &TranslatorState,
    denoiser: &DenoiserState,
    clip_id: &str,
    config: &InferConfig,
) -> Result<ClipPrediction> {
    ensure!(
        exo_frames.len() == exo_layouts.len(),
        InvalidInput,
        "{} exo frames but {} exo layouts",
        exo_frames.len(),
        exo_layouts.len()
    );
    let seeds: Vec<u64> = exo_frames
        .iter()
        .enumerate()
        .map(|(t, f)| match config.seed_mode {
            SeedMode::FrameIndex => frame_seed(config.seed, clip_id, t),
            SeedMode::FrameContent => content_seed(config.seed, f),
        })
        .collect();
    let out: Vec<(Frame, Layout)> = (0..exo_frames.len())
        .into_par_iter()
        .map(|t| {
            infer_frame(&exo_frames[t], &exo_layouts[t], translator, denoiser, config, seeds[t]).map_err(|e| {
                Error::Frame {
                    index: t,
                    source: Box::new(e),
                }
            })
        })
        .collect::<Result<_>>()?;
    let (frames, layouts) = out.into_iter().unzip();
    Ok(ClipPrediction { frames, layouts, seeds })
}

/// `<out>/<video_id>/<clip_index>`.
pub fn clip_dir(out: &Path, record: &ClipRecord) -> PathBuf {
    out.join(&record.meta.video_id).join(format!("{:04}", record.meta.clip_index))
}

fn layout_ext(layout: &Layout) -> &'static str {
    match layout {
        Layout::Pose(_) => "json",
        Layout::Mask(_) => "png",
    }
}

/// Writes `ego/NNNNNN.png` and `ego_layout/NNNNNN.{json,png}` under `dir`.
pub fn write_prediction(dir: &Path, prediction: &ClipPrediction) -> Result<()> {
    for sub in ["ego", "ego_layout"] {
        let d = dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (t, (frame, layout)) in prediction.frames.iter().zip(&prediction.layouts).enumerate() {
        frame.save_png(&dir.join(format!("ego/{t:06}.png")))?;
        layout.save(&dir.join(format!("ego_layout/{t:06}.{}", layout_ext(layout))))?;
    }
    Ok(())
}

/// Loads the frames [`write_prediction`] wrote.
pub fn read_prediction_frames(dir: &Path, count: usize) -> Result<Vec<Frame>> {
    (0..count)
        .map(|t| Frame::load_png(&dir.join(format!("ego/{t:06}.png"))))
        .collect()
}

/// Identifies what produced an inference run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_hash: String,
    pub seed: u64,
    pub infer: InferConfig,
    pub translator_checkpoint: PathBuf,
    pub translator_sha256: String,
    pub denoiser_checkpoint: PathBuf,
    pub denoiser_sha256: String,
    pub clips: Vec<ClipSeeds>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipSeeds {
    pub clip_id: String,
    pub seeds: Vec<u64>,
}

pub const RUN_METADATA_FILE: &str = "run.json";

fn file_sha256(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path).map_err(|e| Error::io(path, e))?))
}

/// Loads the checkpoints named by `config`, predicts every clip of
/// `manifest`, and writes frames, layouts and `run.json` under `out`.
pub fn infer_manifest(manifest: &DatasetManifest, config: &PipelineConfig, out: &Path) -> Result<RunMetadata> {
    let (tp, dp) = (config.translator_path(), config.denoiser_path());
    let (translator, denoiser) = crate::pipeline::train::load_states(&tp, &dp)?;
    let mut meta = RunMetadata {
        config_hash: config.hash(),
        seed: config.infer.seed,
        infer: config.infer.clone(),
        translator_sha256: file_sha256(&tp)?,
        translator_checkpoint: tp,
        denoiser_sha256: file_sha256(&dp)?,
        denoiser_checkpoint: dp,
        clips: Vec::new(),
    };
    for record in &manifest.clips {
        let clip_id = record.meta.clip_id();
        let (frames, layouts) = manifest.load_exo(record)?;
        let wrap = |e: Error| Error::Clip {
            clip: clip_id.clone(),
            source: Box::new(e),
        };
        let pred = infer_clip(&frames, &layouts, &translator, &denoiser, &clip_id, &config.infer).map_err(wrap)?;
        write_prediction(&clip_dir(out, record), &pred).map_err(wrap)?;
        log::info!("predicted {} frames for clip {clip_id}", pred.frames.len());
        meta.clips.push(ClipSeeds {
            clip_id,
            seeds: pred.seeds,
        });
    }
    let path = out.join(RUN_METADATA_FILE);
    std::fs::write(&path, serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n")
        .map_err(|e| Error::io(&path, e))?;
    Ok(meta)
}

/// Scores predictions under `pred_dir` against the ego ground truth of `manifest`.
pub fn evaluate_predictions(
    manifest: &DatasetManifest,
    pred_dir: &Path,
    backends: &Backends,
    split: &str,
) -> Result<MetricReport> {
    let mut pred = Vec::new();
    let mut gt = Vec::new();
    for record in &manifest.clips {
        ensure!(
            record.has_ego(),
            InvalidInput,
            "clip {} has no ego ground truth",
            record.meta.clip_id()
        );
        let wrap = |e: Error| Error::Clip {
            clip: record.meta.clip_id(),
            source: Box::new(e),
        };
        let frames = read_prediction_frames(&clip_dir(pred_dir, record), record.exo_frames.len()).map_err(wrap)?;
        for (p, path) in frames.into_iter().zip(&record.ego_frames) {
            let g = Frame::load_png(&manifest.resolve(path)).map_err(wrap)?;
            pred.push(fit_frame(&p, g.height(), g.width()).map_err(wrap)?);
            gt.push(g);
        }
    }
    Ok(evaluate(&pred, &gt, backends)?.with_labels(manifest.dataset_name.clone(), split))
}
