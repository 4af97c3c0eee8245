//! Fréchet distance between Gaussian fits of two embedding sets.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::frame::Frame;
use crate::error::{ensure, Error, Result};
use crate::metrics::features::FeatureExtractor;

/// Diagonal loading applied when a set is too small for a full-rank covariance.
pub const FID_RIDGE: f64 = 1e-6;
/// Eigenvalues above `-tol * max|lambda|` are treated as rounding noise and clamped.
const PSD_TOL: f64 = 1e-9;

/// Sample mean and unbiased covariance of the rows of `x`.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

pub fn fit_moments(rows: &[Vec<f64>]) -> Result<Moments> {
    ensure!(rows.len() >= 2, InvalidInput, "need at least 2 embeddings, got {}", rows.len());
    let f = rows[0].len();
    ensure!(rows.iter().all(|r| r.len() == f), InvalidInput, "embeddings have differing dimensions");
    let n = rows.len();
    let mut mean = DVector::zeros(f);
    for r in rows {
        mean += DVector::from_column_slice(r);
    }
    mean /= n as f64;
    let mut cov = DMatrix::zeros(f, f);
    for r in rows {
        let d = DVector::from_column_slice(r) - &mean;
        cov += &d * d.transpose();
    }
    cov /= (n - 1) as f64;
    if n < f + 1 {
        for i in 0..f {
            cov[(i, i)] += FID_RIDGE;
        }
    }
    Ok(Moments { mean, cov })
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v));
    if min < -PSD_TOL * max.max(1.0) {
        return Err(Error::Numerical(format!(
            "{what} is not positive semi-definite: eigenvalues span [{min:e}, {max:e}]"
        )));
    }
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

/// `|mu_a - mu_b|^2 + tr(S_a + S_b - 2 (S_a S_b)^(1/2))`.
///
/// The trace of the product root is taken from the symmetric matrix
/// `S_a^(1/2) S_b S_a^(1/2)`, which has the same spectrum as `S_a S_b`.
pub fn frechet_distance(a: &Moments, b: &Moments) -> Result<f64> {
    ensure!(
        a.mean.len() == b.mean.len() && a.cov.shape() == b.cov.shape(),
        InvalidInput,
        "moment dimensions differ"
    );
    let diff = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.cov, "first covariance")?;
    let inner = &root_a * &b.cov * &root_a;
    let cross = psd_sqrt(&inner, "covariance product")?.trace();
    let d = diff + a.cov.trace() + b.cov.trace() - 2.0 * cross;
    ensure!(d.is_finite(), Numerical, "Fréchet distance is not finite");
    // rounding can push identical sets slightly negative
    Ok(d.max(0.0))
}

pub fn embed_all(frames: &[Frame], extractor: &dyn FeatureExtractor) -> Result<Vec<Vec<f64>>> {
    frames
        .par_iter()
        .map(|f| extractor.embed(f))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::InvalidInput(format!("extractor {}: {e}", extractor.name())))
}

pub fn fid(set_a: &[Frame], set_b: &[Frame], extractor: &dyn FeatureExtractor) -> Result<f64> {
    let a = fit_moments(&embed_all(set_a, extractor)?)?;
    let b = fit_moments(&embed_all(set_b, extractor)?)?;
    frechet_distance(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::features::RandomProjection;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn moments(mean: &[f64], diag: &[f64]) -> Moments {
        Moments {
            mean: DVector::from_column_slice(mean),
            cov: DMatrix::from_diagonal(&DVector::from_column_slice(diag)),
        }
    }

    #[test]
    fn diagonal_closed_form() {
        let a = moments(&[0.0, 0.0], &[1.0, 4.0]);
        let b = moments(&[0.0, 0.0], &[9.0, 1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 5.0).abs() < 1e-6);
    }

    #[test]
    fn identity_covariance_mean_shift() {
        for d in [0.0, 0.5, 3.0] {
            let mut shift = vec![0.0; 4];
            shift[1] = d * 0.6;
            shift[3] = d * 0.8;
            let a = moments(&[0.0; 4], &[1.0; 4]);
            let b = moments(&shift, &[1.0; 4]);
            assert!((frechet_distance(&a, &b).unwrap() - d * d).abs() < 1e-6);
        }
    }

    #[test]
    fn full_covariance_matches_commuting_case() {
        // rotated diagonal covariances sharing eigenvectors
        let r = DMatrix::from_row_slice(2, 2, &[0.6, -0.8, 0.8, 0.6]);
        let ca = &r * DMatrix::from_diagonal(&DVector::from_column_slice(&[1.0, 4.0])) * r.transpose();
        let cb = &r * DMatrix::from_diagonal(&DVector::from_column_slice(&[9.0, 1.0])) * r.transpose();
        let a = Moments {
            mean: DVector::from_column_slice(&[1.0, 0.0]),
            cov: ca,
        };
        let b = Moments {
            mean: DVector::from_column_slice(&[0.0, 0.0]),
            cov: cb,
        };
        assert!((frechet_distance(&a, &b).unwrap() - 6.0).abs() < 1e-9);
    }

    #[test]
    fn sampled_gaussians_approach_the_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let d = 2.0;
        let draw = |rng: &mut ChaCha8Rng, offset: f64| -> Vec<Vec<f64>> {
            (0..20_000)
                .map(|_| {
                    (0..3)
                        .map(|i| {
                            let v: f64 = StandardNormal.sample(rng);
                            v + if i == 0 { offset } else { 0.0 }
                        })
                        .collect()
                })
                .collect()
        };
        let a = fit_moments(&draw(&mut rng, 0.0)).unwrap();
        let b = fit_moments(&draw(&mut rng, d)).unwrap();
        let got = frechet_distance(&a, &b).unwrap();
        assert!((got - d * d).abs() < 0.1, "{got}");
    }

    #[test]
    fn same_set_is_zero_and_order_is_symmetric() {
        let ex = RandomProjection::new("t", 2, 4, 3, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let set_a: Vec<Frame> = (0..12).map(|_| Frame::from_fn(8, 8, 3, |_, _, _| rng.random::<f32>())).collect();
        let set_b: Vec<Frame> = (0..12).map(|_| Frame::from_fn(8, 8, 3, |_, _, _| rng.random::<f32>() * 0.5)).collect();
        assert!(fid(&set_a, &set_a, &ex).unwrap() < 1e-6);
        let (ab, ba) = (fid(&set_a, &set_b, &ex).unwrap(), fid(&set_b, &set_a, &ex).unwrap());
        assert!((ab - ba).abs() < 1e-6);
        assert!(ab > 0.0);
    }

    #[test]
    fn small_sets_are_regularized() {
        let rows = vec![vec![1.0, 2.0, 3.0], vec![2.0, 2.0, 1.0]];
        let m = fit_moments(&rows).unwrap();
        assert!((m.cov[(1, 1)] - FID_RIDGE).abs() < 1e-18);
        assert!(frechet_distance(&m, &m).unwrap() < 1e-6);
        assert!(fit_moments(&rows[..1]).is_err());
    }

    #[test]
    fn indefinite_covariance_is_reported() {
        let a = moments(&[0.0, 0.0], &[1.0, -2.0]);
        let b = moments(&[0.0, 0.0], &[1.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &b), Err(Error::Numerical(_))));
    }
}
