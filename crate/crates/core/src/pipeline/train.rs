//! Two independent training stages with periodic checkpoints and exact resume.

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::clips::ClipPair;
use crate::data::frame::{crop_resize, Frame, Rect};
use crate::data::manifest::DatasetManifest;
use crate::diffusion::denoiser::{DenoiserState, DiffusionConfig, DiffusionExample};
use crate::diffusion::latent::Condition;
use crate::error::{ensure, Error, Result};
use crate::pipeline::config::{derive_seed, PipelineConfig, StageConfig, DENOISER_FILE, TRANSLATOR_FILE};
use crate::data::layout::Layout;
use crate::translator::{bipartite_match_loss, LayoutExample, TranslatorState};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Layout,
    Diffusion,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Layout => "layout",
            Stage::Diffusion => "diffusion",
        }
    }
}

/// Resizes square frames to `size x size`; other frames must already match.
pub fn fit_frame(frame: &Frame, height: usize, width: usize) -> Result<Frame> {
    if frame.height() == height && frame.width() == width {
        return Ok(frame.clone());
    }
    ensure!(
        height == width && frame.height() == frame.width(),
        InvalidInput,
        "cannot fit a {}x{} frame to {height}x{width}",
        frame.height(),
        frame.width()
    );
    crop_resize(frame, Rect::full(frame), height)
}

pub fn layout_examples(state: &TranslatorState, clips: &[ClipPair]) -> Result<Vec<LayoutExample>> {
    let c = state.config();
    let mut out = Vec::new();
    for clip in clips {
        for t in 0..clip.len() {
            let wrap = |e: Error| Error::Clip {
                clip: clip.meta.clip_id(),
                source: Box::new(Error::Frame {
                    index: t,
                    source: Box::new(e),
                }),
            };
            let frame = fit_frame(&clip.exo_frames[t], c.height, c.width).map_err(wrap)?;
            out.push(
                state
                    .prepare(&frame, &clip.exo_layouts[t], &clip.ego_layouts[t])
                    .map_err(wrap)?,
            );
        }
    }
    Ok(out)
}

/// Pixel size decoded from the configured latent.
pub fn frame_size(config: &DiffusionConfig) -> (usize, usize) {
    let f = config.codec.factor();
    (config.denoiser.latent_height * f, config.denoiser.latent_width * f)
}

/// Clean ego latents conditioned on the exo frame and the ground-truth ego layout.
pub fn diffusion_examples(config: &DiffusionConfig, clips: &[ClipPair]) -> Result<Vec<DiffusionExample>> {
    let codec = config.codec.build();
    let (h, w) = frame_size(config);
    let mut out = Vec::new();
    for clip in clips {
        for t in 0..clip.len() {
            let build = || -> Result<DiffusionExample> {
                let ego = fit_frame(&clip.ego_frames[t], h, w)?;
                let exo = fit_frame(&clip.exo_frames[t], h, w)?;
                let render = clip.ego_layouts[t].render(h, w)?;
                let z = codec.encode(&ego)?;
                let d = Condition::build(codec.as_ref(), &exo, &render)?;
                Ok(DiffusionExample { z, d })
            };
            out.push(build().map_err(|e| Error::Clip {
                clip: clip.meta.clip_id(),
                source: Box::new(Error::Frame {
                    index: t,
                    source: Box::new(e),
                }),
            })?);
        }
    }
    Ok(out)
}

/// State that one stage trains.
trait StageState {
    fn step(&self) -> u64;
    fn checkpoint(&self) -> Checkpoint;
}

impl StageState for TranslatorState {
    fn step(&self) -> u64 {
        self.step
    }

    fn checkpoint(&self) -> Checkpoint {
        self.to_checkpoint()
    }
}

impl StageState for DenoiserState {
    fn step(&self) -> u64 {
        self.step
    }

    fn checkpoint(&self) -> Checkpoint {
        self.to_checkpoint()
    }
}

/// Where periodic checkpoints go and how many are kept.
#[derive(Clone, Debug)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
    pub every: u64,
    pub keep: usize,
}

impl CheckpointPolicy {
    pub fn from_config(config: &PipelineConfig) -> Self {
        Self {
            dir: config.output_dir.join("checkpoints"),
            every: config.checkpoint_every,
            keep: config.keep_checkpoints,
        }
    }

    pub fn path(&self, stage: Stage, step: u64) -> PathBuf {
        self.dir.join(format!("{}-{step:08}.ckpt", stage.name()))
    }

    /// Periodic checkpoints of `stage`, oldest first.
    pub fn list(&self, stage: Stage) -> Result<Vec<(u64, PathBuf)>> {
        if !self.dir.is_dir() {
            return Ok(Vec::new());
        }
        let prefix = format!("{}-", stage.name());
        let mut out = Vec::new();
        for entry in std::fs::read_dir(&self.dir).map_err(|e| Error::io(&self.dir, e))? {
            let path = entry.map_err(|e| Error::io(&self.dir, e))?.path();
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            if let Some(step) = name
                .strip_prefix(&prefix)
                .and_then(|r| r.strip_suffix(".ckpt"))
                .and_then(|s| s.parse::<u64>().ok())
            {
                out.push((step, path));
            }
        }
        out.sort();
        Ok(out)
    }

    pub fn latest(&self, stage: Stage) -> Result<Option<PathBuf>> {
        Ok(self.list(stage)?.pop().map(|(_, p)| p))
    }

    fn save(&self, stage: Stage, ckpt: &Checkpoint) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io(&self.dir, e))?;
        ckpt.save(&self.path(stage, ckpt.step))?;
        let all = self.list(stage)?;
        if all.len() > self.keep {
            for (_, old) in &all[..all.len() - self.keep] {
                std::fs::remove_file(old).map_err(|e| Error::io(old, e))?;
            }
        }
        Ok(())
    }
}

/// Receives `(stage, step, loss)` after every optimizer step.
pub type LossLog<'a> = &'a mut dyn FnMut(Stage, u64, f64);

fn run_stage<S: StageState>(
    state: &mut S,
    stage: Stage,
    examples: usize,
    cfg: &StageConfig,
    seed: u64,
    policy: Option<&CheckpointPolicy>,
    log: LossLog<'_>,
    mut step_fn: impl FnMut(&mut S, &[usize], &mut ChaCha8Rng) -> Result<f64>,
) -> Result<Vec<f64>> {
    ensure!(examples > 0, InvalidInput, "{} stage has no training examples", stage.name());
    ensure!(cfg.batch_size >= 1, Config, "{} batch size must be positive", stage.name());
    let mut losses = Vec::new();
    while state.step() < cfg.steps {
        let step = state.step();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[stage.name().as_bytes(), &step.to_le_bytes()]));
        let batch = sample(&mut rng, examples, cfg.batch_size.min(examples)).into_vec();
        let loss = match step_fn(state, &batch, &mut rng) {
            Ok(l) => l,
            Err(e @ Error::NonFiniteLoss { .. }) => {
                if let Some(p) = policy {
                    let dump = p.dir.join(format!("diverged-{}-{step:08}.ckpt", stage.name()));
                    std::fs::create_dir_all(&p.dir).map_err(|err| Error::io(&p.dir, err))?;
                    state.checkpoint().save(&dump)?;
                    warn!("{} training diverged at step {step}; state written to {}", stage.name(), dump.display());
                }
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        log(stage, state.step(), loss);
        losses.push(loss);
        if let Some(p) = policy {
            if p.every > 0 && state.step() % p.every == 0 {
                p.save(stage, &state.checkpoint())?;
            }
        }
    }
    Ok(losses)
}

/// Trains stage 1 until `cfg.steps`; resumes from whatever step `state` holds.
pub fn train_layout(
    state: &mut TranslatorState,
    examples: &[LayoutExample],
    cfg: &StageConfig,
    seed: u64,
    policy: Option<&CheckpointPolicy>,
    log: LossLog<'_>,
) -> Result<Vec<f64>> {
    run_stage(state, Stage::Layout, examples.len(), cfg, seed, policy, log, |s, idx, _| {
        let batch: Vec<&LayoutExample> = idx.iter().map(|&i| &examples[i]).collect();
        s.train_step(&batch, &cfg.optim)
    })
}

/// Trains stage 2 until `cfg.steps`; resumes from whatever step `state` holds.
pub fn train_diffusion(
    state: &mut DenoiserState,
    examples: &[DiffusionExample],
    cfg: &StageConfig,
    seed: u64,
    policy: Option<&CheckpointPolicy>,
    log: LossLog<'_>,
) -> Result<Vec<f64>> {
    run_stage(state, Stage::Diffusion, examples.len(), cfg, seed, policy, log, |s, idx, rng| {
        let batch: Vec<&DiffusionExample> = idx.iter().map(|&i| &examples[i]).collect();
        s.train_step(&batch, &cfg.optim, rng)
    })
}

pub struct TrainOutcome {
    pub translator: Option<TranslatorState>,
    pub denoiser: Option<DenoiserState>,
    pub layout_losses: Vec<f64>,
    pub diffusion_losses: Vec<f64>,
}

/// Which stages [`train`] runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageSelection {
    Layout,
    Diffusion,
    All,
}

/// Latest state for `stage`: the newest periodic checkpoint or the final
/// stage file, whichever holds the higher step.
fn resume_checkpoint(policy: &CheckpointPolicy, stage: Stage, final_file: &Path) -> Result<Option<Checkpoint>> {
    let mut best: Option<Checkpoint> = None;
    let periodic = policy.latest(stage)?;
    for path in periodic.iter().map(PathBuf::as_path).chain(final_file.is_file().then_some(final_file)) {
        let ckpt = Checkpoint::load(path)?;
        if best.as_ref().is_none_or(|b| ckpt.step > b.step) {
            best = Some(ckpt);
        }
    }
    Ok(best)
}

fn load_or_new<S>(
    resume: bool,
    policy: &CheckpointPolicy,
    stage: Stage,
    final_file: &Path,
    new: impl FnOnce() -> Result<S>,
    load: impl FnOnce(Checkpoint) -> Result<S>,
) -> Result<S> {
    if resume {
        if let Some(ckpt) = resume_checkpoint(policy, stage, final_file)? {
            info!("resuming {} stage at step {}", stage.name(), ckpt.step);
            return load(ckpt);
        }
    }
    new()
}

/// Trains the selected stages on every clip of `manifest`, writing
/// `translator.ckpt` / `denoiser.ckpt` and periodic checkpoints under
/// `config.output_dir`. With `resume`, each stage restarts from its latest
/// saved state.
pub fn train(
    manifest: &DatasetManifest,
    config: &PipelineConfig,
    stages: StageSelection,
    resume: bool,
    log: LossLog<'_>,
) -> Result<TrainOutcome> {
    let clips = manifest.load_clips()?;
    ensure!(!clips.is_empty(), InvalidInput, "training manifest has no clips");
    let out = &config.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let policy = CheckpointPolicy::from_config(config);
    let mut outcome = TrainOutcome {
        translator: None,
        denoiser: None,
        layout_losses: Vec::new(),
        diffusion_losses: Vec::new(),
    };
    if stages != StageSelection::Diffusion {
        let mut state = load_or_new(
            resume,
            &policy,
            Stage::Layout,
            &out.join(TRANSLATOR_FILE),
            || TranslatorState::new(config.translator.clone()),
            TranslatorState::from_checkpoint,
        )?;
        let examples = layout_examples(&state, &clips)?;
        info!("layout stage: {} examples, {} steps", examples.len(), config.layout_stage.steps);
        outcome.layout_losses =
            train_layout(&mut state, &examples, &config.layout_stage, config.seed, Some(&policy), log)?;
        state.to_checkpoint().save(&out.join(TRANSLATOR_FILE))?;
        outcome.translator = Some(state);
    }
    if stages != StageSelection::Layout {
        let mut state = load_or_new(
            resume,
            &policy,
            Stage::Diffusion,
            &out.join(DENOISER_FILE),
            || DenoiserState::new(config.diffusion.clone()),
            DenoiserState::from_checkpoint,
        )?;
        let examples = diffusion_examples(&state.config, &clips)?;
        info!("diffusion stage: {} examples, {} steps", examples.len(), config.diffusion_stage.steps);
        outcome.diffusion_losses =
            train_diffusion(&mut state, &examples, &config.diffusion_stage, config.seed, Some(&policy), log)?;
        state.to_checkpoint().save(&out.join(DENOISER_FILE))?;
        outcome.denoiser = Some(state);
    }
    Ok(outcome)
}

/// Loads both trained stages for inference.
pub fn load_states(translator: &Path, denoiser: &Path) -> Result<(TranslatorState, DenoiserState)> {
    Ok((
        TranslatorState::from_checkpoint(Checkpoint::load(translator)?)?,
        DenoiserState::from_checkpoint(Checkpoint::load(denoiser)?)?,
    ))
}

/// Mean matched L1 joint error (`|du| + |dv|` per visible joint) of the
/// raw query predictions over every frame of `clips`.
pub fn matched_joint_error(state: &TranslatorState, clips: &[ClipPair]) -> Result<f64> {
    let c = state.config();
    let mut total = 0.0;
    let mut frames = 0usize;
    for clip in clips {
        for t in 0..clip.len() {
            let Layout::Pose(gt) = &clip.ego_layouts[t] else {
                return Err(Error::InvalidInput("matched joint error needs pose layouts".into()));
            };
            let frame = fit_frame(&clip.exo_frames[t], c.height, c.width)?;
            let pred = state.model.predict_joints(&frame, &clip.exo_layouts[t])?;
            total += bipartite_match_loss(&pred, gt, c.joints_per_hand)?.0;
            frames += 1;
        }
    }
    ensure!(frames > 0, InvalidInput, "no frames to score");
    Ok(total / frames as f64)
}
