//! Seeded inputs shared by the benchmarks.

use egosynth_core::data::Frame;
use egosynth_core::diffusion::{Condition, DenoiserConfig, Latent};
use egosynth_core::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn cost_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

pub fn frame(size: usize, seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Frame::from_fn(size, size, 3, |_, _, _| rng.random::<f32>())
}

pub fn latent(h: usize, w: usize, c: usize, seed: u64) -> Latent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Latent::new(h, w, c, (0..h * w * c).map(|_| rng.random::<f64>() - 0.5).collect()).expect("shape matches")
}

/// A noisy latent and a condition sized for `config`.
pub fn denoiser_inputs(config: &DenoiserConfig, seed: u64) -> (Latent, Condition) {
    let (h, w) = (config.latent_height, config.latent_width);
    (
        latent(h, w, config.latent_channels, seed),
        Condition(latent(h, w, config.cond_channels, seed + 1)),
    )
}
