//! Gradient descent on the MAP objective with the autoencoder residual as
//! the prior gradient:
//!
//! ```text
//! grad = K^T (K x - y) / sigma^2 - (R(x + eta) - x) / sigma_r^2,  eta ~ N(0, sigma_r^2)
//! ```
//!
//! It targets the same objective as the ADMM driver and serves as the
//! slow reference in convergence comparisons.

use std::time::Instant;

use pnp_core::admm::TraceEntry;
use pnp_core::ops::correlate2d_circular;
use pnp_core::rng::gaussian_image;
use pnp_core::solver::estimate_boundary;
use pnp_core::{conv2d_circular, pad_replicate, psnr, BlurKernel, Denoiser, Error, Image, Result, RngSeed, PEAK};

pub const DEFAULT_SCORE_GD_STEP: f64 = 0.1;

#[derive(Clone, Copy)]
pub struct ScoreGdConfig<'a> {
    pub dae: &'a dyn Denoiser,
    pub sigma_r: f64,
    pub step: f64,
    pub iterations: usize,
    /// Seed of the injected noise; `None` evaluates `R(x)` without noise.
    pub noise_seed: Option<RngSeed>,
    pub track_truth: Option<&'a Image>,
    pub record_timing: bool,
}

impl<'a> ScoreGdConfig<'a> {
    pub fn new(dae: &'a dyn Denoiser, sigma_r: f64, iterations: usize) -> Self {
        Self {
            dae,
            sigma_r,
            step: DEFAULT_SCORE_GD_STEP,
            iterations,
            noise_seed: Some(RngSeed(0)),
            track_truth: None,
            record_timing: true,
        }
    }
}

/// Output image plus a trace whose `primal_residual` column holds the
/// update norm `||x_{t+1} - x_t||`.
#[derive(Clone, Debug)]
pub struct ScoreGdRun {
    pub image: Image,
    pub trace: Vec<TraceEntry>,
}

pub fn score_gd_deblur(y: &Image, k: &BlurKernel, sigma: f64, cfg: &ScoreGdConfig<'_>) -> Result<ScoreGdRun> {
    if !(sigma > 0.0) {
        return Err(Error::InvalidArgument("score descent needs sigma > 0".into()));
    }
    if cfg.iterations == 0 || !(cfg.step > 0.0) || !(cfg.sigma_r > 0.0) {
        return Err(Error::InvalidArgument("iterations, step and sigma_r must be positive".into()));
    }
    let (top, bottom, left, right) = k.valid_margins();
    let (vh, vw) = y.shape();
    if let Some(t) = cfg.track_truth {
        if t.shape() != (vh, vw) {
            return Err(Error::Dimension("truth does not match the observation".into()));
        }
    }
    let mut x = pad_replicate(y, top, bottom, left, right);
    let (h, w) = x.shape();
    let mut rng = cfg.noise_seed.map(|s| s.rng());
    let start = Instant::now();
    let mut trace = Vec::with_capacity(cfg.iterations);
    let inv_s2 = 1.0 / (sigma * sigma);
    let inv_r2 = 1.0 / (cfg.sigma_r * cfg.sigma_r);
    for iter in 1..=cfg.iterations {
        let y_full = estimate_boundary(&x, k, y)?;
        let resid = conv2d_circular(&x, k).sub(&y_full);
        let mut grad = correlate2d_circular(&resid, k).scale(inv_s2);
        let probe = match rng.as_mut() {
            Some(r) => x.add(&gaussian_image(h, w, cfg.sigma_r, r)),
            None => x.clone(),
        };
        let prior = cfg.dae.denoise(&probe).sub(&x);
        grad.axpy(-inv_r2, &prior);
        let update = grad.scale(-cfg.step);
        x = x.add(&update);
        if !x.is_finite() {
            return Err(Error::Diverged(format!("score descent diverged at iteration {iter}")));
        }
        let psnr = match cfg.track_truth {
            Some(t) => Some(psnr(&x.crop(top, left, vh, vw)?.clip(0.0, PEAK), t, PEAK)?),
            None => None,
        };
        trace.push(TraceEntry {
            iter,
            primal_residual: update.norm(),
            psnr,
            wall_ms: if cfg.record_timing {
                start.elapsed().as_secs_f64() * 1e3
            } else {
                0.0
            },
        });
    }
    Ok(ScoreGdRun {
        image: x.crop(top, left, vh, vw)?.clip(0.0, PEAK),
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use pnp_core::{degrade_blur, IdentityDenoiser};

    #[test]
    fn pure_data_descent_reduces_error() {
        let k = BlurKernel::uniform(3);
        let truth = Image::from_fn(24, 24, |r, c| 100.0 + 60.0 * ((r / 6 + c / 6) % 2) as f64);
        let y = degrade_blur(&truth, &k, 1.0, RngSeed(1)).unwrap();
        let t = truth.crop(1, 1, 22, 22).unwrap();
        let cfg = ScoreGdConfig {
            step: 0.5,
            track_truth: Some(&t),
            noise_seed: None,
            record_timing: false,
            ..ScoreGdConfig::new(&IdentityDenoiser, 7.0, 60)
        };
        let run = score_gd_deblur(&y, &k, 1.0, &cfg).unwrap();
        assert_eq!(run.trace.len(), 60);
        let first = run.trace[0].psnr.unwrap();
        let last = run.trace[59].psnr.unwrap();
        assert!(last > first, "{first} -> {last}");
        assert!(run.trace.iter().all(|e| e.wall_ms == 0.0));
    }

    #[test]
    fn divergence_and_bad_arguments_are_reported() {
        let k = BlurKernel::uniform(3);
        let y = Image::filled(10, 10, 100.0).map(|v| v + 1.0);
        let mut cfg = ScoreGdConfig::new(&IdentityDenoiser, 7.0, 5);
        assert!(score_gd_deblur(&y, &k, 0.0, &cfg).is_err());
        cfg.iterations = 0;
        assert!(score_gd_deblur(&y, &k, 1.0, &cfg).is_err());
        let noisy = Image::from_fn(10, 10, |r, c| ((r * 7 + c * 3) % 11) as f64 * 20.0);
        let wild = ScoreGdConfig {
            step: 1e6,
            iterations: 400,
            ..ScoreGdConfig::new(&IdentityDenoiser, 7.0, 1)
        };
        assert!(matches!(score_gd_deblur(&noisy, &k, 0.01, &wild), Err(Error::Diverged(_))));
    }
}
