use serde::{Deserialize, Serialize};

use crate::diffusion::latent::Latent;
use crate::error::{ensure, Result};

/// Largest per-step beta the cosine construction may produce.
pub const COSINE_MAX_BETA: f64 = 0.999;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScheduleKind {
    /// Betas linearly spaced from `beta_min` (step 1) to `beta_max` (step N).
    LinearBeta { beta_min: f64, beta_max: f64 },
    /// Squared-cosine cumulative signal with a small offset `s`.
    Cosine { offset: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    #[serde(flatten)]
    pub kind: ScheduleKind,
    pub steps: usize,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self {
            kind: ScheduleKind::Cosine { offset: 0.008 },
            steps: 100,
        }
    }
}

impl ScheduleConfig {
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Self {
        Self {
            kind: ScheduleKind::LinearBeta { beta_min, beta_max },
            steps,
        }
    }

    pub fn cosine(steps: usize) -> Self {
        Self {
            kind: ScheduleKind::Cosine { offset: 0.008 },
            steps,
        }
    }
}

/// Variance-preserving tables indexed by step `n = 0..=N`.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseSchedule {
    pub config: ScheduleConfig,
    /// `beta[0] = 0`.
    pub beta: Vec<f64>,
    /// Cumulative product of `1 - beta`; `alpha_bar[0] = 1`.
    pub alpha_bar: Vec<f64>,
    pub alpha: Vec<f64>,
    pub sigma: Vec<f64>,
}

pub fn build_schedule(config: &ScheduleConfig) -> Result<NoiseSchedule> {
    let n = config.steps;
    ensure!(n >= 1, Config, "a schedule needs at least one step");
    let mut beta = vec![0.0; n + 1];
    match config.kind {
        ScheduleKind::LinearBeta { beta_min, beta_max } => {
            ensure!(
                beta_min > 0.0 && beta_max < 1.0 && beta_min <= beta_max,
                Config,
                "linear betas need 0 < beta_min <= beta_max < 1, got [{beta_min}, {beta_max}]"
            );
            for (k, b) in beta.iter_mut().enumerate().skip(1) {
                *b = if n == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * (k - 1) as f64 / (n - 1) as f64
                };
            }
        }
        ScheduleKind::Cosine { offset } => {
            ensure!(offset > 0.0 && offset.is_finite(), Config, "cosine offset must be positive");
            let f = |t: usize| {
                let x = (t as f64 / n as f64 + offset) / (1.0 + offset) * std::f64::consts::FRAC_PI_2;
                x.cos().powi(2)
            };
            let f0 = f(0);
            for (k, b) in beta.iter_mut().enumerate().skip(1) {
                let prev = f(k - 1) / f0;
                let cur = f(k) / f0;
                *b = (1.0 - cur / prev).min(COSINE_MAX_BETA);
            }
            ensure!(
                beta[1..].iter().all(|b| *b > 0.0 && *b < 1.0),
                Config,
                "cosine schedule with {n} steps produced a beta outside (0, 1)"
            );
        }
    }
    let mut alpha_bar = vec![1.0; n + 1];
    for k in 1..=n {
        alpha_bar[k] = alpha_bar[k - 1] * (1.0 - beta[k]);
    }
    let alpha = alpha_bar.iter().map(|a| a.sqrt()).collect();
    let sigma = alpha_bar.iter().map(|a| (1.0 - a).sqrt()).collect();
    Ok(NoiseSchedule {
        config: config.clone(),
        beta,
        alpha_bar,
        alpha,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.config.steps
    }
}

/// `alpha_n * z + sigma_n * eps`.
pub fn forward_diffuse(z: &Latent, n: usize, eps: &Latent, schedule: &NoiseSchedule) -> Result<Latent> {
    ensure!(z.same_shape(eps), InvalidInput, "latent and noise shapes differ");
    ensure!(n <= schedule.steps(), InvalidInput, "step {n} exceeds schedule length {}", schedule.steps());
    if n == 0 {
        return Ok(z.clone());
    }
    let (a, s) = (schedule.alpha[n], schedule.sigma[n]);
    Ok(Latent {
        data: z.data.iter().zip(&eps.data).map(|(z, e)| a * z + s * e).collect(),
        ..z.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn all_configs() -> Vec<ScheduleConfig> {
        [10, 100, 1000]
            .into_iter()
            .flat_map(|n| [ScheduleConfig::linear(n, 1e-4, 0.02), ScheduleConfig::cosine(n)])
            .collect()
    }

    #[test]
    fn boundary_monotonicity_and_variance_preservation() {
        for cfg in all_configs() {
            let s = build_schedule(&cfg).unwrap();
            assert_eq!((s.alpha[0], s.sigma[0]), (1.0, 0.0));
            for k in 1..=cfg.steps {
                assert!(s.alpha[k] < s.alpha[k - 1], "{cfg:?} alpha at {k}");
                assert!(s.sigma[k] > s.sigma[k - 1], "{cfg:?} sigma at {k}");
            }
            for k in 0..=cfg.steps {
                assert!((s.alpha[k].powi(2) + s.sigma[k].powi(2) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn linear_alpha_bar_matches_cumulative_product() {
        let s = build_schedule(&ScheduleConfig::linear(1000, 1e-4, 0.02)).unwrap();
        let mut prod = 1.0f64;
        for k in 1..=1000 {
            let beta = 1e-4 + (0.02 - 1e-4) * (k as f64 - 1.0) / 999.0;
            prod *= 1.0 - beta;
            assert!((s.alpha_bar[k] - prod).abs() < 1e-9);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        assert!(build_schedule(&ScheduleConfig::linear(0, 1e-4, 0.02)).is_err());
        assert!(build_schedule(&ScheduleConfig::linear(10, 0.0, 0.02)).is_err());
        assert!(build_schedule(&ScheduleConfig::linear(10, 1e-4, 1.0)).is_err());
        let bad = ScheduleConfig {
            kind: ScheduleKind::Cosine { offset: -1.0 },
            steps: 10,
        };
        assert!(build_schedule(&bad).is_err());
    }

    #[test]
    fn forward_diffusion_arithmetic() {
        let s = build_schedule(&ScheduleConfig::cosine(10)).unwrap();
        let z = Latent::filled(2, 2, 1, 1.0);
        let eps = Latent::filled(2, 2, 1, 2.0);
        assert_eq!(forward_diffuse(&z, 0, &eps, &s).unwrap(), z);
        let mut fixed = s.clone();
        fixed.alpha[3] = 0.6;
        fixed.sigma[3] = 0.8;
        let out = forward_diffuse(&z, 3, &eps, &fixed).unwrap();
        assert!(out.data.iter().all(|&v| (v - 2.2).abs() < 1e-15));
        assert!(forward_diffuse(&z, 11, &eps, &s).is_err());
    }

    #[test]
    fn forward_diffusion_preserves_unit_variance() {
        let s = build_schedule(&ScheduleConfig::linear(1000, 1e-4, 0.02)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let mut draw = |k: usize| -> Vec<f64> { (0..k).map(|_| StandardNormal.sample(&mut rng)).collect() };
        let z = Latent::new(1, 1, n, draw(n)).unwrap();
        let eps = Latent::new(1, 1, n, draw(n)).unwrap();
        for step in [1, 250, 600, 1000] {
            let x = forward_diffuse(&z, step, &eps, &s).unwrap();
            let mean = x.data.iter().sum::<f64>() / n as f64;
            let var = x.data.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            assert!((var - 1.0).abs() < 0.02, "step {step}: variance {var}");
        }
    }
}
