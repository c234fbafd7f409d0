//! Solvers for the quadratic data subproblem
//!
//! ```text
//! x = argmin (1 / (2 sigma^2)) ||K x - y||^2 + (rho / 2) ||x - z + lambda||^2
//! ```
//!
//! For blur, `K` is circular convolution and the minimizer is computed in the
//! Fourier domain; a dense normal-equation solve is kept as an oracle. For
//! inpainting, `K` is the diagonal mask operator.

use nalgebra::{DMatrix, DVector};
use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fourier::{ComplexPlane, Fft2};
use crate::image::{BlurKernel, Image};
use crate::ops::{conv2d_circular, correlate2d_circular};

/// Largest image (in pixels) the dense oracle accepts, i.e. 24 x 24.
pub const DIRECT_SOLVER_MAX_PIXELS: usize = 576;

/// Anything that can solve the blur data subproblem on a full-size grid.
pub trait DataSolver {
    fn shape(&self) -> (usize, usize);

    fn solve(&self, y_full: &Image, z_hat: &Image, lambda: &Image) -> Result<Image>;
}

/// Precomputed spectra for the Fourier-domain closed form.
#[derive(Clone, Debug)]
pub struct FftSolverPlan {
    fft: Fft2,
    kernel: BlurKernel,
    sigma: f64,
    rho: f64,
    kernel_hat: ComplexPlane,
    ktk_hat: ComplexPlane,
    sigma2_rho: f64,
}

/// Prepares the solver for `h x w` images. `K^T K` is realized as the
/// circular embedding of the kernel's autocorrelation.
pub fn build_plan(k: &BlurKernel, h: usize, w: usize, sigma: f64, rho: f64) -> Result<FftSolverPlan> {
    if !(rho > 0.0) || !rho.is_finite() {
        return Err(Error::Numerical(format!("penalty rho must be positive, got {rho}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::arg(format!("sigma must be >= 0, got {sigma}")));
    }
    if k.kh() > h || k.kw() > w {
        return Err(Error::dim(format!(
            "{}x{} kernel does not fit a {h}x{w} grid",
            k.kh(),
            k.kw()
        )));
    }
    let fft = Fft2::new(h, w);
    let kernel_hat = fft.kernel_spectrum(k, k.center());
    let auto = k.autocorrelation();
    let ktk_hat = fft.kernel_spectrum(&auto, (k.kh() - 1, k.kw() - 1));
    let sigma2_rho = sigma * sigma * rho;
    if let Some(bad) = ktk_hat
        .data()
        .iter()
        .map(|c| c.re + sigma2_rho)
        .find(|d| !(*d > 1e-12))
    {
        return Err(Error::Numerical(format!(
            "frequency-domain denominator {bad:e} is not positive"
        )));
    }
    Ok(FftSolverPlan {
        fft,
        kernel: k.clone(),
        sigma,
        rho,
        kernel_hat,
        ktk_hat,
        sigma2_rho,
    })
}

impl FftSolverPlan {
    pub fn kernel(&self) -> &BlurKernel {
        &self.kernel
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn sigma2_rho(&self) -> f64 {
        self.sigma2_rho
    }

    /// Spectrum of the circularly embedded kernel.
    pub fn kernel_spectrum(&self) -> &ComplexPlane {
        &self.kernel_hat
    }

    /// Spectrum of `K^T K`.
    pub fn ktk_spectrum(&self) -> &ComplexPlane {
        &self.ktk_hat
    }

    pub fn solve(&self, y_full: &Image, z_hat: &Image, lambda: &Image) -> Result<Image> {
        let shape = self.fft.shape();
        for (img, name) in [(y_full, "y"), (z_hat, "z"), (lambda, "lambda")] {
            if img.shape() != shape {
                return Err(Error::dim(format!(
                    "{name} is {:?}, plan expects {shape:?}",
                    img.shape()
                )));
            }
        }
        let y_hat = self.fft.forward(y_full);
        let prox_hat = self.fft.forward(&z_hat.sub(lambda));
        let mut num = ComplexPlane::zeros(shape.0, shape.1);
        for (i, out) in num.data_mut().iter_mut().enumerate() {
            let kbar: Complex64 = self.kernel_hat.data()[i].conj();
            let numer = kbar * y_hat.data()[i] + prox_hat.data()[i] * self.sigma2_rho;
            *out = numer / (self.ktk_hat.data()[i].re + self.sigma2_rho);
        }
        Ok(self.fft.inverse(&num))
    }
}

impl DataSolver for FftSolverPlan {
    fn shape(&self) -> (usize, usize) {
        self.fft.shape()
    }

    fn solve(&self, y_full: &Image, z_hat: &Image, lambda: &Image) -> Result<Image> {
        FftSolverPlan::solve(self, y_full, z_hat, lambda)
    }
}

pub fn solve_data_fft(plan: &FftSolverPlan, y_full: &Image, z_hat: &Image, lambda: &Image) -> Result<Image> {
    plan.solve(y_full, z_hat, lambda)
}

/// Dense normal-equation solver. Test oracle only; refuses large images.
#[derive(Clone, Debug)]
pub struct DirectSolver {
    h: usize,
    w: usize,
    k_dense: DMatrix<f64>,
    system: DMatrix<f64>,
    sigma2_rho: f64,
}

impl DirectSolver {
    pub fn new(k: &BlurKernel, h: usize, w: usize, sigma: f64, rho: f64) -> Result<Self> {
        let n = h * w;
        if n > DIRECT_SOLVER_MAX_PIXELS {
            return Err(Error::arg(format!(
                "dense solver limited to {DIRECT_SOLVER_MAX_PIXELS} pixels, got {n}"
            )));
        }
        if !(rho > 0.0) {
            return Err(Error::Numerical("penalty rho must be positive".into()));
        }
        let k_dense = circular_matrix(k, h, w);
        let sigma2_rho = sigma * sigma * rho;
        let system = k_dense.transpose() * &k_dense + DMatrix::identity(n, n) * sigma2_rho;
        Ok(Self {
            h,
            w,
            k_dense,
            system,
            sigma2_rho,
        })
    }

    /// The circular convolution operator as an `N x N` matrix.
    pub fn operator(&self) -> &DMatrix<f64> {
        &self.k_dense
    }
}

impl DataSolver for DirectSolver {
    fn shape(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    fn solve(&self, y_full: &Image, z_hat: &Image, lambda: &Image) -> Result<Image> {
        for img in [y_full, z_hat, lambda] {
            if img.shape() != (self.h, self.w) {
                return Err(Error::dim("image does not match dense solver size"));
            }
        }
        let y = DVector::from_column_slice(y_full.data());
        let prox = DVector::from_column_slice(z_hat.sub(lambda).data());
        let rhs = self.k_dense.transpose() * y + prox * self.sigma2_rho;
        let x = match self.system.clone().cholesky() {
            Some(ch) => ch.solve(&rhs),
            None => self
                .system
                .clone()
                .lu()
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("singular normal equations".into()))?,
        };
        Image::new(self.h, self.w, x.as_slice().to_vec())
    }
}

/// Dense solve of the normal equations `(K^T K + sigma^2 rho) x = K^T y + sigma^2 rho (z - lambda)`.
pub fn solve_data_direct(
    k: &BlurKernel,
    y_full: &Image,
    z_hat: &Image,
    lambda: &Image,
    sigma: f64,
    rho: f64,
) -> Result<Image> {
    DirectSolver::new(k, y_full.height(), y_full.width(), sigma, rho)?.solve(y_full, z_hat, lambda)
}

fn circular_matrix(k: &BlurKernel, h: usize, w: usize) -> DMatrix<f64> {
    let n = h * w;
    let (ch, cw) = k.center();
    let mut m = DMatrix::zeros(n, n);
    for r in 0..h {
        for c in 0..w {
            let p = r * w + c;
            for a in 0..k.kh() {
                for b in 0..k.kw() {
                    let sr = (r as isize - a as isize + ch as isize).rem_euclid(h as isize) as usize;
                    let sc = (c as isize - b as isize + cw as isize).rem_euclid(w as isize) as usize;
                    m[(p, sr * w + sc)] += k.get(a, b);
                }
            }
        }
    }
    m
}

/// Blur data objective with circular `K`.
pub fn data_objective(
    k: &BlurKernel,
    y_full: &Image,
    x: &Image,
    z_hat: &Image,
    lambda: &Image,
    sigma: f64,
    rho: f64,
) -> f64 {
    let fit = conv2d_circular(x, k).sub(y_full).sum_sq() / (2.0 * sigma * sigma);
    let prox = x.sub(z_hat).add(lambda).sum_sq() * 0.5 * rho;
    fit + prox
}

/// Gradient of [`data_objective`]: `K^T (K x - y) / sigma^2 + rho (x - z + lambda)`.
pub fn data_gradient(
    k: &BlurKernel,
    y_full: &Image,
    x: &Image,
    z_hat: &Image,
    lambda: &Image,
    sigma: f64,
    rho: f64,
) -> Image {
    let resid = conv2d_circular(x, k).sub(y_full);
    let mut g = correlate2d_circular(&resid, k).scale(1.0 / (sigma * sigma));
    g.axpy(rho, &x.sub(z_hat).add(lambda));
    g
}

/// Full-size observation whose valid region is `y_valid` and whose margin is
/// synthesized by circularly blurring the current estimate.
pub fn estimate_boundary(x_hat: &Image, k: &BlurKernel, y_valid: &Image) -> Result<Image> {
    let (h, w) = x_hat.shape();
    if y_valid.height() + k.kh() - 1 != h || y_valid.width() + k.kw() - 1 != w {
        return Err(Error::dim(format!(
            "estimate is {h}x{w}, observation {}x{} with {}x{} kernel",
            y_valid.height(),
            y_valid.width(),
            k.kh(),
            k.kw()
        )));
    }
    let mut full = conv2d_circular(x_hat, k);
    let (top, _, left, _) = k.valid_margins();
    full.paste(y_valid, top, left)?;
    Ok(full)
}

/// Masked data objective `(1 / (2 sigma^2)) ||M x - y||^2 + (rho / 2) ||x - z + lambda||^2`.
pub fn mask_objective(
    y: &Image,
    mask: &Image,
    x: &Image,
    z_hat: &Image,
    lambda: &Image,
    sigma: f64,
    rho: f64,
) -> f64 {
    let mut fit = 0.0;
    let mut prox = 0.0;
    for i in 0..x.len() {
        let m = mask.data()[i];
        let r = m * x.data()[i] - y.data()[i];
        fit += r * r;
        let p = x.data()[i] - z_hat.data()[i] + lambda.data()[i];
        prox += p * p;
    }
    fit / (2.0 * sigma * sigma) + 0.5 * rho * prox
}

fn mask_gradient(
    y: &Image,
    mask: &Image,
    x: &Image,
    z_hat: &Image,
    lambda: &Image,
    sigma: f64,
    rho: f64,
) -> Image {
    let inv = 1.0 / (sigma * sigma);
    Image::from_raw(
        x.height(),
        x.width(),
        (0..x.len())
            .map(|i| {
                let m = mask.data()[i];
                let xi = x.data()[i];
                m * (m * xi - y.data()[i]) * inv + rho * (xi - z_hat.data()[i] + lambda.data()[i])
            })
            .collect(),
    )
}

fn check_mask_problem(y: &Image, mask: &Image, z_hat: &Image, lambda: &Image, rho: f64) -> Result<()> {
    y.check_same_shape(mask, "mask")?;
    y.check_same_shape(z_hat, "z")?;
    y.check_same_shape(lambda, "lambda")?;
    crate::degrade::check_mask(mask)?;
    if !(rho > 0.0) {
        return Err(Error::Numerical("penalty rho must be positive".into()));
    }
    Ok(())
}

/// Result of [`solve_data_gd`].
#[derive(Clone, Debug)]
pub struct GdSolve {
    pub x: Image,
    pub initial_gradient_norm: f64,
    pub final_gradient_norm: f64,
    /// Objective after each step; index 0 is the starting point.
    pub energies: Vec<f64>,
}

/// Default inpainting step `1 / (1 / sigma^2 + rho)`, the inverse of the
/// largest curvature of the masked quadratic.
pub fn default_gd_step(sigma: f64, rho: f64) -> f64 {
    1.0 / (1.0 / (sigma * sigma) + rho)
}

/// Gradient descent on the masked data objective starting from `x0`.
///
/// With `sigma == 0` the data term becomes a hard constraint: observed pixels
/// are set to `y` and missing ones to `z - lambda`.
#[allow(clippy::too_many_arguments)]
pub fn solve_data_gd(
    y: &Image,
    mask: &Image,
    sigma: f64,
    rho: f64,
    z_hat: &Image,
    lambda: &Image,
    x0: &Image,
    steps: usize,
    step_size: Option<f64>,
) -> Result<GdSolve> {
    check_mask_problem(y, mask, z_hat, lambda, rho)?;
    y.check_same_shape(x0, "x0")?;
    if steps == 0 {
        return Err(Error::arg("gradient descent needs at least one step"));
    }
    if sigma == 0.0 {
        let x = solve_data_mask_exact(y, mask, sigma, rho, z_hat, lambda)?;
        return Ok(GdSolve {
            x,
            initial_gradient_norm: 0.0,
            final_gradient_norm: 0.0,
            energies: Vec::new(),
        });
    }
    let step = step_size.unwrap_or_else(|| default_gd_step(sigma, rho));
    if !(step > 0.0) {
        return Err(Error::arg("step size must be positive"));
    }
    let mut x = x0.clone();
    let mut energies = Vec::with_capacity(steps + 1);
    energies.push(mask_objective(y, mask, &x, z_hat, lambda, sigma, rho));
    let mut grad = mask_gradient(y, mask, &x, z_hat, lambda, sigma, rho);
    let initial_gradient_norm = grad.norm();
    let mut rising = 0;
    for _ in 0..steps {
        x.axpy(-step, &grad);
        let e = mask_objective(y, mask, &x, z_hat, lambda, sigma, rho);
        if !e.is_finite() {
            return Err(Error::Diverged("masked data objective is not finite".into()));
        }
        rising = if e > *energies.last().unwrap() { rising + 1 } else { 0 };
        energies.push(e);
        if rising >= 10 {
            return Err(Error::Diverged(format!(
                "masked data objective rose for 10 consecutive steps (step size {step})"
            )));
        }
        grad = mask_gradient(y, mask, &x, z_hat, lambda, sigma, rho);
    }
    Ok(GdSolve {
        x,
        initial_gradient_norm,
        final_gradient_norm: grad.norm(),
        energies,
    })
}

/// Per-pixel closed form `x_i = (m_i y_i / sigma^2 + rho (z_i - lambda_i)) / (m_i / sigma^2 + rho)`.
pub fn solve_data_mask_exact(
    y: &Image,
    mask: &Image,
    sigma: f64,
    rho: f64,
    z_hat: &Image,
    lambda: &Image,
) -> Result<Image> {
    check_mask_problem(y, mask, z_hat, lambda, rho)?;
    let data = (0..y.len())
        .map(|i| {
            let m = mask.data()[i];
            let prox = z_hat.data()[i] - lambda.data()[i];
            if sigma == 0.0 {
                if m == 1.0 {
                    y.data()[i]
                } else {
                    prox
                }
            } else {
                let inv = m / (sigma * sigma);
                (inv * y.data()[i] + rho * prox) / (inv + rho)
            }
        })
        .collect();
    Ok(Image::from_raw(y.height(), y.width(), data))
}
