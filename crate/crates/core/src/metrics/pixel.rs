//! Pixel-level similarity: SSIM and PSNR.

use crate::data::frame::Frame;
use crate::error::{ensure, Result};

/// PSNR reported for identical frames.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_shapes(a: &Frame, b: &Frame) -> Result<()> {
    ensure!(
        a.same_shape(b),
        InvalidInput,
        "frame shapes differ: {}x{}x{} vs {}x{}x{}",
        a.height(),
        a.width(),
        a.channels(),
        b.height(),
        b.width(),
        b.channels()
    );
    Ok(())
}

/// Normalized 1-D Gaussian taps.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable "valid" filtering: output is `(h - k + 1) x (w - k + 1)`.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = (0..n).map(|i| k[i] * img[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..n).map(|i| k[i] * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Window side used for an `h x w` frame: 11, or the largest odd size that fits.
pub fn ssim_window(h: usize, w: usize) -> usize {
    let m = SSIM_WINDOW.min(h).min(w);
    if m % 2 == 0 {
        m - 1
    } else {
        m
    }
}

/// Gaussian-windowed SSIM on the luma channel, averaged over all valid windows.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    let (h, w) = (a.height(), a.width());
    let ga = a.to_gray();
    let gb = b.to_gray();
    let k = gaussian_kernel(ssim_window(h, w), SSIM_SIGMA);
    let prod = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| p * q).collect::<Vec<_>>();
    let mu_a = filter_valid(&ga, h, w, &k);
    let mu_b = filter_valid(&gb, h, w, &k);
    let e_aa = filter_valid(&prod(&ga, &ga), h, w, &k);
    let e_bb = filter_valid(&prod(&gb, &gb), h, w, &k);
    let e_ab = filter_valid(&prod(&ga, &gb), h, w, &k);
    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = e_aa[i] - ma * ma;
        let vb = e_bb[i] - mb * mb;
        let cov = e_ab[i] - ma * mb;
        total += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(total / mu_a.len() as f64)
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    check_shapes(a, b)?;
    let sum: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data().len() as f64)
}

/// `10 log10(1 / MSE)` for unit-range frames, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (1.0 / m).log10()).min(PSNR_CAP_DB))
}
