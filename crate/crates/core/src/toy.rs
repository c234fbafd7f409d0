//! A synthetic prior with closed-form density, used to check denoiser theory.
//!
//! Pixels are i.i.d. draws from a discrete distribution on a few intensity
//! atoms. Smoothing with a Gaussian of width `sigma` gives a mixture density
//! `p_sigma` whose log, score and posterior mean are all available exactly.

use rand::RngExt;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::NoiseRng;

#[derive(Clone, Debug, PartialEq)]
pub struct AtomicPrior {
    atoms: Vec<f64>,
    weights: Vec<f64>,
}

impl AtomicPrior {
    pub fn new(atoms: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::arg("atoms and weights must be non-empty and equal length"));
        }
        if weights.iter().any(|&w| !(w > 0.0)) {
            return Err(Error::arg("atom weights must be positive"));
        }
        let total: f64 = weights.iter().sum();
        Ok(Self {
            atoms,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Equal mass on 40 and 200.
    pub fn two_delta() -> Self {
        Self::new(vec![40.0, 200.0], vec![0.5, 0.5]).expect("valid prior")
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn dynamic_range(&self) -> f64 {
        let lo = self.atoms.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = self.atoms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        hi - lo
    }

    /// Unnormalized log responsibilities `log w_i - (y - a_i)^2 / (2 sigma^2)`.
    fn log_terms(&self, y: f64, sigma: f64) -> impl Iterator<Item = f64> + '_ {
        let inv = 1.0 / (2.0 * sigma * sigma);
        self.atoms
            .iter()
            .zip(&self.weights)
            .map(move |(a, w)| w.ln() - (y - a) * (y - a) * inv)
    }

    fn responsibilities(&self, y: f64, sigma: f64) -> Vec<f64> {
        let terms: Vec<f64> = self.log_terms(y, sigma).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = terms.iter().map(|t| (t - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / s).collect()
    }

    /// `log p_sigma(y)` for a single intensity.
    pub fn log_density(&self, y: f64, sigma: f64) -> f64 {
        let terms: Vec<f64> = self.log_terms(y, sigma).collect();
        let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln();
        lse - (2.0 * std::f64::consts::PI * sigma * sigma).ln() * 0.5
    }

    /// `d/dy log p_sigma(y)`.
    pub fn score(&self, y: f64, sigma: f64) -> f64 {
        (self.posterior_mean(y, sigma) - y) / (sigma * sigma)
    }

    /// `E[x | x + n = y]` with `n ~ N(0, sigma^2)`.
    pub fn posterior_mean(&self, y: f64, sigma: f64) -> f64 {
        self.responsibilities(y, sigma)
            .iter()
            .zip(&self.atoms)
            .map(|(r, a)| r * a)
            .sum()
    }

    /// Draws one clean pixel.
    pub fn sample(&self, rng: &mut NoiseRng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (a, w) in self.atoms.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return *a;
            }
        }
        *self.atoms.last().unwrap()
    }

    pub fn sample_image(&self, height: usize, width: usize, rng: &mut NoiseRng) -> Image {
        Image::from_fn(height, width, |_, _| self.sample(rng))
    }

    /// `f(x, v) = -sum log p_sigma(x_i) + (rho / 2) ||x - v||^2`.
    pub fn map_objective(&self, x: &Image, v: &Image, sigma: f64, rho: f64) -> f64 {
        let prior: f64 = x.data().iter().map(|&xi| -self.log_density(xi, sigma)).sum();
        prior + 0.5 * rho * x.sub(v).sum_sq()
    }

    /// Per-pixel optimal denoiser for noise level `sigma`.
    pub fn optimal_denoiser(&self, sigma: f64) -> OptimalDenoiser {
        OptimalDenoiser {
            prior: self.clone(),
            sigma,
        }
    }
}

/// The MMSE denoiser of an [`AtomicPrior`]: `y + sigma^2 * score(y)`.
#[derive(Clone, Debug)]
pub struct OptimalDenoiser {
    prior: AtomicPrior,
    sigma: f64,
}

impl Denoiser for OptimalDenoiser {
    fn denoise(&self, v: &Image) -> Image {
        v.map(|y| self.prior.posterior_mean(y, self.sigma))
    }

    fn descriptor(&self) -> String {
        format!("toy-optimal(sigma={})", self.sigma)
    }

    fn trained_sigma(&self) -> Option<f64> {
        Some(self.sigma)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;

    #[test]
    fn posterior_mean_is_symmetric_sigmoid() {
        let p = AtomicPrior::two_delta();
        assert!((p.posterior_mean(120.0, 20.0) - 120.0).abs() < 1e-12);
        assert!((p.posterior_mean(0.0, 20.0) - 40.0).abs() < 1e-6);
        assert!((p.posterior_mean(250.0, 20.0) - 200.0).abs() < 1e-6);
        // closed form for two equal atoms: 120 + 80 tanh(80 (y - 120) / sigma^2)
        for y in [90.0, 115.0, 121.0, 140.0] {
            let expect = 120.0 + 80.0 * (80.0 * (y - 120.0) / 400.0f64).tanh();
            assert!((p.posterior_mean(y, 20.0) - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn score_matches_derivative_of_log_density() {
        let p = AtomicPrior::new(vec![30.0, 90.0, 210.0], vec![1.0, 2.0, 1.0]).unwrap();
        for y in [-10.0, 50.0, 100.0, 180.0, 260.0] {
            let h = 1e-4;
            let fd = (p.log_density(y + h, 15.0) - p.log_density(y - h, 15.0)) / (2.0 * h);
            assert!((fd - p.score(y, 15.0)).abs() < 1e-6);
        }
    }

    #[test]
    fn density_integrates_to_one() {
        let p = AtomicPrior::two_delta();
        let step = 0.05;
        let total: f64 = (0..12000)
            .map(|i| -150.0 + step * i as f64)
            .map(|y| p.log_density(y, 20.0).exp() * step)
            .sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn sampling_hits_only_atoms() {
        let p = AtomicPrior::two_delta();
        let img = p.sample_image(20, 20, &mut RngSeed(1).rng());
        assert!(img.data().iter().all(|&v| v == 40.0 || v == 200.0));
        let hi = img.data().iter().filter(|&&v| v == 200.0).count();
        assert!((150..250).contains(&hi));
    }
}
