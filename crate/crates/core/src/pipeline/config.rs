use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::diffusion::denoiser::DiffusionConfig;
use crate::diffusion::sampler::SamplerKind;
use crate::optim::AdamConfig;
use crate::translator::TranslatorConfig;

/// Step budget, batch size and optimizer for one training stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StageConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub optim: AdamConfig,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            optim: AdamConfig {
                lr: 1e-3,
                ..AdamConfig::default()
            },
        }
    }
}

/// How per-frame sampling seeds are derived at inference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedMode {
    /// From the global seed, clip id and frame index.
    #[default]
    FrameIndex,
    /// From the global seed and the exo frame's pixels.
    FrameContent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferConfig {
    pub seed: u64,
    pub sampler: SamplerKind,
    pub seed_mode: SeedMode,
}

impl Default for InferConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sampler: SamplerKind::Deterministic,
            seed_mode: SeedMode::FrameIndex,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Drives batch order and diffusion noise during training.
    pub seed: u64,
    pub translator: TranslatorConfig,
    pub diffusion: DiffusionConfig,
    pub layout_stage: StageConfig,
    pub diffusion_stage: StageConfig,
    /// Periodic checkpoint cadence in steps; 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
    /// Periodic checkpoints retained per stage.
    pub keep_checkpoints: usize,
    pub infer: InferConfig,
    pub output_dir: PathBuf,
    /// Overrides `<output_dir>/translator.ckpt` for inference.
    pub translator_checkpoint: Option<PathBuf>,
    /// Overrides `<output_dir>/denoiser.ckpt` for inference.
    pub denoiser_checkpoint: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            translator: TranslatorConfig::desk(),
            diffusion: DiffusionConfig::default(),
            layout_stage: StageConfig::default(),
            diffusion_stage: StageConfig {
                batch_size: 4,
                ..StageConfig::default()
            },
            checkpoint_every: 500,
            keep_checkpoints: 3,
            infer: InferConfig::default(),
            output_dir: PathBuf::from("runs/default"),
            translator_checkpoint: None,
            denoiser_checkpoint: None,
        }
    }
}

pub const TRANSLATOR_FILE: &str = "translator.ckpt";
pub const DENOISER_FILE: &str = "denoiser.ckpt";

impl PipelineConfig {
    pub fn translator_path(&self) -> PathBuf {
        self.translator_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join(TRANSLATOR_FILE))
    }

    pub fn denoiser_path(&self) -> PathBuf {
        self.denoiser_checkpoint
            .clone()
            .unwrap_or_else(|| self.output_dir.join(DENOISER_FILE))
    }

    /// SHA-256 of the compact JSON encoding.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A 64-bit seed from a global seed and labelled parts.
pub fn derive_seed(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_separate_parts() {
        let a = derive_seed(1, &[b"ab", b"c"]);
        assert_eq!(a, derive_seed(1, &[b"ab", b"c"]));
        assert_ne!(a, derive_seed(1, &[b"a", b"bc"]));
        assert_ne!(a, derive_seed(2, &[b"ab", b"c"]));
    }

    #[test]
    fn config_json_round_trips_and_hash_tracks_changes() {
        let c = PipelineConfig::default();
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        let partial: PipelineConfig = serde_json::from_str(r#"{"seed": 9}"#).unwrap();
        assert_eq!(partial.seed, 9);
        assert_eq!(partial.translator, c.translator);
        assert_ne!(partial.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn checkpoint_paths_default_under_output_dir() {
        let mut c = PipelineConfig {
            output_dir: "out".into(),
            ..PipelineConfig::default()
        };
        assert_eq!(c.translator_path(), PathBuf::from("out/translator.ckpt"));
        c.denoiser_checkpoint = Some("x.ckpt".into());
        assert_eq!(c.denoiser_path(), PathBuf::from("x.ckpt"));
    }
}
