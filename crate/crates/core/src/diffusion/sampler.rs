use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffusion::latent::{Condition, Latent};
use crate::diffusion::schedule::{forward_diffuse, NoiseSchedule};
use crate::error::{ensure, Error, Result};

/// Anything that predicts a clean latent from a noisy one.
pub trait Denoise: Sync {
    fn predict(&self, z_n: &Latent, d: &Condition, n: usize) -> Result<Latent>;
}

impl<F> Denoise for F
where
    F: Fn(&Latent, &Condition, usize) -> Latent + Sync,
{
    fn predict(&self, z_n: &Latent, d: &Condition, n: usize) -> Result<Latent> {
        Ok(self(z_n, d, n))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplerKind {
    /// Posterior mean plus noise with the lower-bound variance.
    Ancestral,
    /// Deterministic update with no injected noise.
    #[default]
    Deterministic,
}

/// Squared error between `z` and the prediction from `alpha_n z + sigma_n eps`, averaged over elements.
pub fn diffusion_loss(
    model: &dyn Denoise,
    z: &Latent,
    d: &Condition,
    n: usize,
    eps: &Latent,
    schedule: &NoiseSchedule,
) -> Result<f64> {
    let z_n = forward_diffuse(z, n, eps, schedule)?;
    let z_hat = model.predict(&z_n, d, n)?;
    let loss = z.mse(&z_hat)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("diffusion loss is {loss} at step {n}")));
    }
    Ok(loss)
}

fn implied_noise(z_n: &Latent, z_hat: &Latent, n: usize, schedule: &NoiseSchedule) -> Result<Vec<f64>> {
    let (a, s) = (schedule.alpha[n], schedule.sigma[n]);
    if s <= 0.0 {
        return Err(Error::Schedule(format!("sigma is {s} at step {n}, cannot recover the noise")));
    }
    Ok(z_n.data.iter().zip(&z_hat.data).map(|(z, x)| (z - a * x) / s).collect())
}

/// One reverse step from `z_n` to `z_{n-1}`. `noise` is consumed only by the ancestral sampler.
pub fn reverse_step(
    kind: SamplerKind,
    z_n: &Latent,
    z_hat: &Latent,
    n: usize,
    schedule: &NoiseSchedule,
    noise: impl FnMut() -> f64,
) -> Result<Latent> {
    ensure!(n >= 1 && n <= schedule.steps(), InvalidInput, "reverse step {n} outside [1, {}]", schedule.steps());
    ensure!(z_n.same_shape(z_hat), InvalidInput, "prediction shape {:?} differs from latent {:?}", z_hat.shape(), z_n.shape());
    let eps_hat = implied_noise(z_n, z_hat, n, schedule)?;
    let data = match kind {
        SamplerKind::Deterministic => {
            let (a, s) = (schedule.alpha[n - 1], schedule.sigma[n - 1]);
            z_hat.data.iter().zip(&eps_hat).map(|(x, e)| a * x + s * e).collect()
        }
        SamplerKind::Ancestral => {
            let mut noise = noise;
            let (ab, ab_prev, beta) = (schedule.alpha_bar[n], schedule.alpha_bar[n - 1], schedule.beta[n]);
            let c_x = ab_prev.sqrt() * beta / (1.0 - ab);
            let c_z = (1.0 - beta).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
            let std = posterior_variance(schedule, n).sqrt();
            z_hat
                .data
                .iter()
                .zip(&z_n.data)
                .map(|(x, z)| {
                    let mean = c_x * x + c_z * z;
                    if std > 0.0 {
                        mean + std * noise()
                    } else {
                        mean
                    }
                })
                .collect()
        }
    };
    Ok(Latent { data, ..z_n.clone() })
}

/// `(1 - alpha_bar_{n-1}) / (1 - alpha_bar_n) * beta_n`.
pub fn posterior_variance(schedule: &NoiseSchedule, n: usize) -> f64 {
    (1.0 - schedule.alpha_bar[n - 1]) / (1.0 - schedule.alpha_bar[n]) * schedule.beta[n]
}

/// Draws `z^N` from a unit Gaussian and denoises it down to step 0.
pub fn sample(
    model: &dyn Denoise,
    d: &Condition,
    shape: (usize, usize, usize),
    schedule: &NoiseSchedule,
    seed: u64,
    kind: SamplerKind,
) -> Result<Latent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w, c) = shape;
    let mut z = Latent {
        height: h,
        width: w,
        channels: c,
        data: (0..h * w * c).map(|_| StandardNormal.sample(&mut rng)).collect(),
    };
    for n in (1..=schedule.steps()).rev() {
        let z_hat = model.predict(&z, d, n)?;
        z = reverse_step(kind, &z, &z_hat, n, schedule, || StandardNormal.sample(&mut rng))?;
    }
    Ok(z)
}
