use serde::{Deserialize, Serialize};

use crate::data::layout::{JOINTS_PER_HAND, LAYOUT_CHANNELS, MAX_HANDS};
use crate::error::{ensure, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// Regress `queries` joints with a sigmoid head.
    Pose,
    /// One query per patch, each decoded into a `P x P x 2` logit tile.
    Mask,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TranslatorConfig {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub encoder_blocks: usize,
    pub decoder_blocks: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    /// Learned query count in pose mode.
    pub queries: usize,
    pub joints_per_hand: usize,
    /// Frame channels plus rendered-layout channels.
    pub input_channels: usize,
    pub mode: LayoutMode,
    /// Parameter initialization seed.
    pub seed: u64,
}

impl Default for TranslatorConfig {
    fn default() -> Self {
        Self {
            height: 256,
            width: 256,
            patch_size: 16,
            dim: 192,
            encoder_blocks: 6,
            decoder_blocks: 6,
            heads: 3,
            mlp_ratio: 4,
            queries: MAX_HANDS * JOINTS_PER_HAND,
            joints_per_hand: JOINTS_PER_HAND,
            input_channels: 3 + LAYOUT_CHANNELS,
            mode: LayoutMode::Pose,
            seed: 0,
        }
    }
}

impl TranslatorConfig {
    /// Small configuration for 32x32 fixture frames.
    pub fn desk() -> Self {
        Self {
            height: 32,
            width: 32,
            patch_size: 8,
            dim: 64,
            encoder_blocks: 2,
            decoder_blocks: 2,
            heads: 4,
            ..Self::default()
        }
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.input_channels
    }

    /// Decoder query count: `queries` in pose mode, one per patch in mask mode.
    pub fn num_queries(&self) -> usize {
        match self.mode {
            LayoutMode::Pose => self.queries,
            LayoutMode::Mask => self.num_patches(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        ensure!(p >= 1, Config, "patch_size must be at least 1");
        ensure!(
            self.height >= p && self.width >= p && self.height % p == 0 && self.width % p == 0,
            Config,
            "frame {}x{} is not divisible into {p}x{p} patches",
            self.height,
            self.width
        );
        ensure!(
            self.dim >= 1 && self.heads >= 1 && self.dim % self.heads == 0,
            Config,
            "dim {} must be a positive multiple of heads {}",
            self.dim,
            self.heads
        );
        ensure!(self.mlp_ratio >= 1, Config, "mlp_ratio must be at least 1");
        ensure!(self.input_channels >= 1, Config, "input_channels must be at least 1");
        ensure!(self.joints_per_hand >= 1, Config, "joints_per_hand must be at least 1");
        if self.mode == LayoutMode::Pose {
            ensure!(
                self.queries >= MAX_HANDS * self.joints_per_hand,
                Config,
                "{} queries cannot cover {} hands of {} joints",
                self.queries,
                MAX_HANDS,
                self.joints_per_hand
            );
        }
        Ok(())
    }
}
