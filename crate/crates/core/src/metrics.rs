//! Full-reference quality metrics.

use crate::error::{Error, Result};
use crate::image::{Image, PEAK};

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

pub fn mse(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "mse")?;
    let s: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(s / a.len() as f64)
}

/// Peak signal-to-noise ratio in dB. Identical inputs give `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::arg("psnr peak must be positive"));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// Mean SSIM over all 8x8 windows at stride 1 with uniform weights,
/// population statistics, `C1 = (0.01 * 255)^2` and `C2 = (0.03 * 255)^2`.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    a.check_same_shape(b, "ssim")?;
    let (h, w) = a.shape();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::dim(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let c1 = (SSIM_K1 * PEAK).powi(2);
    let c2 = (SSIM_K2 * PEAK).powi(2);

    // summed-area tables of a, b, a^2, b^2, ab
    let stride = w + 1;
    let mut tables = vec![[0.0f64; 5]; (h + 1) * stride];
    for r in 0..h {
        let mut row = [0.0f64; 5];
        for c in 0..w {
            let (x, y) = (a.get(r, c), b.get(r, c));
            let vals = [x, y, x * x, y * y, x * y];
            for i in 0..5 {
                row[i] += vals[i];
                tables[(r + 1) * stride + c + 1][i] = tables[r * stride + c + 1][i] + row[i];
            }
        }
    }
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for r in 0..=h - SSIM_WINDOW {
        for c in 0..=w - SSIM_WINDOW {
            let (r1, c1i) = (r + SSIM_WINDOW, c + SSIM_WINDOW);
            let mut s = [0.0f64; 5];
            for (i, si) in s.iter_mut().enumerate() {
                *si = tables[r1 * stride + c1i][i] - tables[r * stride + c1i][i]
                    - tables[r1 * stride + c][i]
                    + tables[r * stride + c][i];
            }
            let mx = s[0] / n;
            let my = s[1] / n;
            let vx = (s[2] / n - mx * mx).max(0.0);
            let vy = (s[3] / n - my * my).max(0.0);
            let cxy = s[4] / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_ssim(a: &Image, b: &Image) -> f64 {
        let c1 = (0.01 * 255.0f64).powi(2);
        let c2 = (0.03 * 255.0f64).powi(2);
        let (h, w) = a.shape();
        let mut acc = 0.0;
        let mut n = 0.0;
        for r in 0..=h - 8 {
            for c in 0..=w - 8 {
                let wa = a.crop(r, c, 8, 8).unwrap();
                let wb = b.crop(r, c, 8, 8).unwrap();
                let (ma, mb) = (wa.mean(), wb.mean());
                let va = wa.variance();
                let vb = wb.variance();
                let cov = wa.zip_map(&wb, |x, y| (x - ma) * (y - mb)).mean();
                acc += ((2.0 * ma * mb + c1) * (2.0 * cov + c2))
                    / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                n += 1.0;
            }
        }
        acc / n
    }

    fn ramp(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| ((r * 37 + c * 11) % 256) as f64)
    }

    #[test]
    fn psnr_cases() {
        let a = ramp(10, 12);
        assert_eq!(psnr(&a, &a, 255.0).unwrap(), f64::INFINITY);
        let b = a.map(|v| v + 1.0);
        let p = psnr(&a, &b, 255.0).unwrap();
        assert!((p - 20.0 * 255.0f64.log10()).abs() < 1e-12);
        assert!((p - 48.1308).abs() < 1e-4);
        assert_eq!(p, psnr(&b, &a, 255.0).unwrap());
        assert!(psnr(&a, &Image::zeros(3, 3), 255.0).is_err());
        assert!(psnr(&a, &b, 0.0).is_err());
    }

    #[test]
    fn ssim_identity_and_negative() {
        let a = ramp(16, 20);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        let neg = a.map(|v| 255.0 - v);
        let s = ssim(&a, &neg).unwrap();
        assert!(s < 1.0);
        assert!((s - brute_ssim(&a, &neg)).abs() < 1e-6);
        let noisy = a.zip_map(&ramp(16, 20).map(|v| (v * 0.37).sin() * 20.0), |x, y| x + y);
        assert!((ssim(&a, &noisy).unwrap() - brute_ssim(&a, &noisy)).abs() < 1e-6);
    }

    #[test]
    fn ssim_rejects_small_or_mismatched() {
        assert!(ssim(&Image::zeros(7, 10), &Image::zeros(7, 10)).is_err());
        assert!(ssim(&Image::zeros(8, 8), &Image::zeros(9, 8)).is_err());
    }
}
