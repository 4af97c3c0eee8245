//! Frame embeddings for perceptual distance and FID.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::frame::Frame;
use crate::error::{Error, Result};
use crate::tensor::Matrix;

pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, frame: &Frame) -> Result<Vec<f64>>;
}

/// Box-averages a frame onto a `grid x grid` raster, keeping channels.
pub fn pool_to_grid(frame: &Frame, grid: usize) -> Vec<f64> {
    let (h, w, c) = (frame.height(), frame.width(), frame.channels());
    let mut sums = vec![0.0; grid * grid * c];
    let mut counts = vec![0usize; grid * grid];
    for y in 0..h {
        let gy = y * grid / h;
        for x in 0..w {
            let gx = x * grid / w;
            counts[gy * grid + gx] += 1;
            for ch in 0..c {
                sums[(gy * grid + gx) * c + ch] += f64::from(frame.get(y, x, ch));
            }
        }
    }
    for (i, s) in sums.iter_mut().enumerate() {
        let n = counts[i / c];
        if n > 0 {
            *s /= n as f64;
        }
    }
    sums
}

/// Fixed Gaussian random projection of the pooled, zero-centered frame.
///
/// Weights are `N(0, 1) / sqrt(input_len)` drawn from a seeded stream, so the
/// extractor is deterministic for a given `(seed, grid, channels, dim)`.
#[derive(Clone, Debug)]
pub struct RandomProjection {
    name: String,
    grid: usize,
    channels: usize,
    weights: Matrix,
}

impl RandomProjection {
    pub const DEFAULT_NAME: &'static str = "random_projection";

    pub fn new(name: impl Into<String>, seed: u64, grid: usize, channels: usize, dim: usize) -> Self {
        let input = grid * grid * channels;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scale = 1.0 / (input as f64).sqrt();
        let weights = Matrix::from_fn(dim, input, |_, _| {
            let v: f64 = StandardNormal.sample(&mut rng);
            v * scale
        });
        Self {
            name: name.into(),
            grid,
            channels,
            weights,
        }
    }

    /// 16x16x3 input, 64 features.
    pub fn standard(seed: u64) -> Self {
        Self::new(Self::DEFAULT_NAME, seed, 16, 3, 64)
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    pub fn grid(&self) -> usize {
        self.grid
    }
}

impl FeatureExtractor for RandomProjection {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        self.weights.rows()
    }

    fn embed(&self, frame: &Frame) -> Result<Vec<f64>> {
        if frame.channels() != self.channels {
            return Err(Error::InvalidInput(format!(
                "extractor {} expects {} channels, got {}",
                self.name,
                self.channels,
                frame.channels()
            )));
        }
        let x = pool_to_grid(frame, self.grid);
        let centered = Matrix::from_vec(x.len(), 1, x.iter().map(|v| v - 0.5).collect());
        Ok(self.weights.matmul(&centered).into_vec())
    }
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        v.to_vec()
    } else {
        v.iter().map(|x| x / n).collect()
    }
}

/// L2 distance between unit-normalized embeddings, in `[0, 2]`.
pub fn perceptual_distance(a: &Frame, b: &Frame, extractor: &dyn FeatureExtractor) -> Result<f64> {
    let wrap = |e: Error| Error::InvalidInput(format!("extractor {}: {e}", extractor.name()));
    let fa = unit(&extractor.embed(a).map_err(wrap)?);
    let fb = unit(&extractor.embed(b).map_err(wrap)?);
    Ok(fa.iter().zip(&fb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_frame(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Frame {
        Frame::from_fn(h, w, 3, |_, _, _| rng.random::<f32>())
    }

    #[test]
    fn identical_frames_have_zero_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let f = random_frame(&mut rng, 32, 32);
        assert_eq!(perceptual_distance(&f, &f, &RandomProjection::standard(0)).unwrap(), 0.0);
    }

    #[test]
    fn distance_is_symmetric() {
        let ex = RandomProjection::standard(3);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..50 {
            let a = random_frame(&mut rng, 20, 24);
            let b = random_frame(&mut rng, 20, 24);
            let (x, y) = (perceptual_distance(&a, &b, &ex).unwrap(), perceptual_distance(&b, &a, &ex).unwrap());
            assert!((x - y).abs() < 1e-12);
            assert!((0.0..=2.0).contains(&x));
        }
    }

    #[test]
    fn pooling_averages_blocks() {
        let f = Frame::from_fn(4, 4, 1, |y, x, _| if y < 2 && x < 2 { 1.0 } else { 0.0 });
        assert_eq!(pool_to_grid(&f, 2), [1.0, 0.0, 0.0, 0.0]);
        assert_eq!(pool_to_grid(&f, 1), [0.25]);
    }

    #[test]
    fn projection_matches_explicit_loops() {
        let ex = RandomProjection::new("t", 9, 4, 3, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a = random_frame(&mut rng, 8, 8);
        let b = random_frame(&mut rng, 8, 8);
        // independent pooling (2x2 blocks) and dot products
        let embed = |f: &Frame| -> Vec<f64> {
            let mut x = Vec::new();
            for gy in 0..4 {
                for gx in 0..4 {
                    for c in 0..3 {
                        let mut s = 0.0;
                        for dy in 0..2 {
                            for dx in 0..2 {
                                s += f64::from(f.get(gy * 2 + dy, gx * 2 + dx, c));
                            }
                        }
                        x.push(s / 4.0 - 0.5);
                    }
                }
            }
            (0..5)
                .map(|r| (0..48).map(|k| ex.weights().get(r, k) * x[k]).sum())
                .collect()
        };
        let (ea, eb) = (embed(&a), embed(&b));
        let na = ea.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = eb.iter().map(|v| v * v).sum::<f64>().sqrt();
        let oracle = ea.iter().zip(&eb).map(|(x, y)| (x / na - y / nb).powi(2)).sum::<f64>().sqrt();
        assert!((perceptual_distance(&a, &b, &ex).unwrap() - oracle).abs() < 1e-12);
        let got = ex.embed(&a).unwrap();
        assert!(got.iter().zip(&ea).all(|(p, q)| (p - q).abs() < 1e-12));
    }

    #[test]
    fn seeded_weights_are_reproducible() {
        assert_eq!(RandomProjection::standard(7).weights(), RandomProjection::standard(7).weights());
        assert_ne!(RandomProjection::standard(7).weights(), RandomProjection::standard(8).weights());
    }

    #[test]
    fn channel_mismatch_names_the_extractor() {
        let ex = RandomProjection::new("probe", 0, 4, 3, 4);
        let err = perceptual_distance(&Frame::zeros(8, 8, 1), &Frame::zeros(8, 8, 1), &ex).unwrap_err();
        assert!(err.to_string().contains("probe"));
    }
}
