//! Plug-and-play ADMM drivers for deblurring and inpainting.
//!
//! Each iteration runs
//!
//! ```text
//! x      = argmin (1 / (2 sigma^2)) ||K x - y||^2 + (rho / 2) ||x - z + lambda||^2
//! z      = D(x + lambda)
//! lambda = lambda + x - z
//! ```
//!
//! with `rho` held fixed. Deblurring works on a replicate-padded grid whose
//! margin is re-synthesized from the current estimate every iteration.

use std::fmt::Write as _;
use std::time::Instant;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::{BlurKernel, Image, PEAK};
use crate::metrics::psnr;
use crate::ops::pad_replicate;
use crate::solver::{build_plan, estimate_boundary, solve_data_gd, solve_data_mask_exact, DataSolver};

/// One row of a convergence trace.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceEntry {
    pub iter: usize,
    /// `||x - z||_2` after the iteration.
    pub primal_residual: f64,
    /// PSNR of the clipped estimate against the truth, when tracked.
    pub psnr: Option<f64>,
    /// Milliseconds since the run started, 0 when timing is off.
    pub wall_ms: f64,
}

/// ADMM iterates on the working grid.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmState {
    pub x_hat: Image,
    pub z_hat: Image,
    pub lambda: Image,
    pub rho: f64,
    pub iteration: usize,
    pub trace: Vec<TraceEntry>,
}

impl AdmmState {
    /// `x = z = x0`, `lambda = 0`.
    pub fn new(x0: Image, rho: f64) -> Result<Self> {
        if !(rho > 0.0) {
            return Err(Error::arg("rho must be positive"));
        }
        let (h, w) = x0.shape();
        Ok(Self {
            z_hat: x0.clone(),
            x_hat: x0,
            lambda: Image::zeros(h, w),
            rho,
            iteration: 0,
            trace: Vec::new(),
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.x_hat.shape()
    }

    pub fn primal_residual(&self) -> f64 {
        self.x_hat.sub(&self.z_hat).norm()
    }

    /// Denoise and multiplier updates shared by both drivers.
    fn prior_and_dual<D: Denoiser + ?Sized>(&mut self, x: Image, denoiser: &D) -> Result<()> {
        if !x.is_finite() {
            return Err(Error::Diverged(format!(
                "data update produced non-finite values at iteration {}",
                self.iteration + 1
            )));
        }
        let z = denoiser.denoise(&x.add(&self.lambda));
        if z.shape() != x.shape() {
            return Err(Error::dim(format!("denoiser '{}' changed the image size", denoiser.descriptor())));
        }
        if !z.is_finite() {
            return Err(Error::Diverged(format!(
                "denoiser produced non-finite values at iteration {}",
                self.iteration + 1
            )));
        }
        self.lambda.axpy(1.0, &x.sub(&z));
        self.x_hat = x;
        self.z_hat = z;
        self.iteration += 1;
        Ok(())
    }
}

/// How the inpainting data term is minimized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MaskSolve {
    /// Gradient descent warm-started from the previous estimate.
    Gd { steps: usize, step_size: Option<f64> },
    /// Per-pixel closed form.
    Exact,
}

impl Default for MaskSolve {
    fn default() -> Self {
        MaskSolve::Gd {
            steps: crate::DEFAULT_GD_STEPS,
            step_size: None,
        }
    }
}

/// Source of the full-size observation in deblurring.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Boundary {
    /// Margin re-estimated from the current estimate each iteration.
    #[default]
    Reestimate,
    /// Fixed replicate-padded observation treated as circular.
    ReplicateWrap,
}

/// Parameters of a restoration run.
#[derive(Clone, Copy)]
pub struct RestoreConfig<'a> {
    pub sigma_r: f64,
    pub rho: f64,
    pub iterations: usize,
    pub denoiser: &'a dyn Denoiser,
    /// Ground truth at output size, for PSNR tracking.
    pub track_truth: Option<&'a Image>,
    pub mask_solve: MaskSolve,
    pub boundary: Boundary,
    pub record_timing: bool,
}

impl<'a> RestoreConfig<'a> {
    pub fn deblur(denoiser: &'a dyn Denoiser) -> Self {
        let sigma_r = crate::DEFAULT_SIGMA_R;
        Self {
            sigma_r,
            rho: crate::default_rho(sigma_r),
            iterations: crate::DEFAULT_DEBLUR_ITERATIONS,
            denoiser,
            track_truth: None,
            mask_solve: MaskSolve::default(),
            boundary: Boundary::default(),
            record_timing: true,
        }
    }

    pub fn inpaint(denoiser: &'a dyn Denoiser) -> Self {
        Self {
            iterations: crate::DEFAULT_INPAINT_ITERATIONS,
            ..Self::deblur(denoiser)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::arg("at least one iteration is required"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::arg("rho must be positive"));
        }
        if !(self.sigma_r > 0.0) {
            return Err(Error::arg("sigma_r must be positive"));
        }
        if let MaskSolve::Gd { steps: 0, .. } = self.mask_solve {
            return Err(Error::arg("gradient descent needs at least one step"));
        }
        Ok(())
    }
}

/// Output of a restoration.
#[derive(Clone, Debug)]
pub struct Restoration {
    /// Clipped estimate at the observation's size.
    pub image: Image,
    pub state: AdmmState,
}

impl Restoration {
    pub fn trace(&self) -> &[TraceEntry] {
        &self.state.trace
    }
}

struct Tracker<'a> {
    start: Instant,
    truth: Option<&'a Image>,
    timing: bool,
}

impl<'a> Tracker<'a> {
    fn new(cfg: &RestoreConfig<'a>, out_shape: (usize, usize)) -> Result<Self> {
        if let Some(t) = cfg.track_truth {
            if t.shape() != out_shape {
                return Err(Error::dim(format!(
                    "truth is {:?}, restoration output is {out_shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self {
            start: Instant::now(),
            truth: cfg.track_truth,
            timing: cfg.record_timing,
        })
    }

    fn record(&self, state: &mut AdmmState, output: impl FnOnce(&Image) -> Result<Image>) -> Result<()> {
        let psnr = match self.truth {
            Some(t) => Some(psnr(&output(&state.x_hat)?, t, PEAK)?),
            None => None,
        };
        let wall_ms = if self.timing {
            self.start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        };
        let entry = TraceEntry {
            iter: state.iteration,
            primal_residual: state.primal_residual(),
            psnr,
            wall_ms,
        };
        state.trace.push(entry);
        Ok(())
    }
}

/// One deblurring iteration: boundary estimate, data solve, denoise, dual update.
/// `y_fixed` replaces the boundary estimate when given.
pub fn admm_step_deblur<S: DataSolver + ?Sized, D: Denoiser + ?Sized>(
    state: &mut AdmmState,
    solver: &S,
    y_valid: &Image,
    k: &BlurKernel,
    denoiser: &D,
    y_fixed: Option<&Image>,
) -> Result<()> {
    if solver.shape() != state.shape() {
        return Err(Error::dim(format!(
            "solver is {:?}, state is {:?}",
            solver.shape(),
            state.shape()
        )));
    }
    let y_full = match y_fixed {
        Some(y) => y.clone(),
        None => estimate_boundary(&state.x_hat, k, y_valid)?,
    };
    let x = solver.solve(&y_full, &state.z_hat, &state.lambda)?;
    state.prior_and_dual(x, denoiser)
}

fn valid_region(img: &Image, k: &BlurKernel) -> Result<Image> {
    let (top, bottom, left, right) = k.valid_margins();
    img.crop(top, left, img.height() - top - bottom, img.width() - left - right)
}

/// Non-blind deblurring of the valid-area observation `y`.
pub fn restore_deblur(y: &Image, k: &BlurKernel, sigma: f64, cfg: &RestoreConfig<'_>) -> Result<Restoration> {
    cfg.validate()?;
    let (h, w) = (y.height() + k.kh() - 1, y.width() + k.kw() - 1);
    let plan = build_plan(k, h, w, sigma, cfg.rho)?;
    restore_deblur_with(y, k, &plan, cfg)
}

/// [`restore_deblur`] with a caller-supplied data solver sized for the padded grid.
pub fn restore_deblur_with<S: DataSolver + ?Sized>(
    y: &Image,
    k: &BlurKernel,
    solver: &S,
    cfg: &RestoreConfig<'_>,
) -> Result<Restoration> {
    cfg.validate()?;
    let (top, bottom, left, right) = k.valid_margins();
    let padded = pad_replicate(y, top, bottom, left, right);
    let mut state = AdmmState::new(padded.clone(), cfg.rho)?;
    let tracker = Tracker::new(cfg, y.shape())?;
    let fixed = (cfg.boundary == Boundary::ReplicateWrap).then_some(&padded);
    for _ in 0..cfg.iterations {
        admm_step_deblur(&mut state, solver, y, k, cfg.denoiser, fixed)?;
        tracker.record(&mut state, |x| Ok(valid_region(x, k)?.clip(0.0, PEAK)))?;
    }
    Ok(Restoration {
        image: valid_region(&state.x_hat, k)?.clip(0.0, PEAK),
        state,
    })
}

/// Inpainting of `y` where `mask` is 1 on observed pixels.
pub fn restore_inpaint(y: &Image, mask: &Image, sigma: f64, cfg: &RestoreConfig<'_>) -> Result<Restoration> {
    cfg.validate()?;
    y.check_same_shape(mask, "mask")?;
    crate::degrade::check_mask(mask)?;
    let init = median_fill(y, mask, 3, y.height().max(y.width()))?;
    let mut state = AdmmState::new(init, cfg.rho)?;
    let tracker = Tracker::new(cfg, y.shape())?;
    for _ in 0..cfg.iterations {
        let x = match cfg.mask_solve {
            MaskSolve::Exact => solve_data_mask_exact(y, mask, sigma, cfg.rho, &state.z_hat, &state.lambda)?,
            MaskSolve::Gd { steps, step_size } => {
                solve_data_gd(
                    y,
                    mask,
                    sigma,
                    cfg.rho,
                    &state.z_hat,
                    &state.lambda,
                    &state.x_hat,
                    steps,
                    step_size,
                )?
                .x
            }
        };
        state.prior_and_dual(x, cfg.denoiser)?;
        tracker.record(&mut state, |x| Ok(x.clip(0.0, PEAK)))?;
    }
    Ok(Restoration {
        image: state.x_hat.clip(0.0, PEAK),
        state,
    })
}

/// Fills pixels where `mask == 0` with the median of known pixels in a
/// `window x window` neighborhood, growing inward over at most `passes` sweeps.
/// Each sweep reads only values known before it started.
pub fn median_fill(y: &Image, mask: &Image, window: usize, passes: usize) -> Result<Image> {
    y.check_same_shape(mask, "mask")?;
    crate::degrade::check_mask(mask)?;
    if window == 0 || window % 2 == 0 {
        return Err(Error::arg("median window must be odd"));
    }
    let (h, w) = y.shape();
    let mut out = y.clone();
    let mut known: Vec<bool> = mask.data().iter().map(|&m| m == 1.0).collect();
    let half = (window / 2) as isize;
    let mut buf = Vec::with_capacity(window * window);
    for _ in 0..passes {
        if known.iter().all(|&k| k) {
            return Ok(out);
        }
        let mut updates = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if known[r * w + c] {
                    continue;
                }
                buf.clear();
                for dr in -half..=half {
                    for dc in -half..=half {
                        let (sr, sc) = (r as isize + dr, c as isize + dc);
                        if sr < 0 || sc < 0 || sr >= h as isize || sc >= w as isize {
                            continue;
                        }
                        let idx = sr as usize * w + sc as usize;
                        if known[idx] {
                            buf.push(out.data()[idx]);
                        }
                    }
                }
                if !buf.is_empty() {
                    updates.push((r * w + c, median(&mut buf)));
                }
            }
        }
        if updates.is_empty() {
            break;
        }
        for (idx, v) in updates {
            out.data_mut()[idx] = v;
            known[idx] = true;
        }
    }
    if known.iter().all(|&k| k) {
        Ok(out)
    } else {
        Err(Error::arg(format!(
            "median fill left {} pixels unknown after {passes} passes",
            known.iter().filter(|&&k| !k).count()
        )))
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `%g`-style rendering with 6 significant digits.
pub fn format_g(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (5 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub const TRACE_HEADER: &str = "iter,primal_residual,psnr,wall_ms";

/// CSV with header `iter,primal_residual,psnr,wall_ms`; empty psnr when untracked.
pub fn export_trace(trace: &[TraceEntry]) -> String {
    let mut s = String::from(TRACE_HEADER);
    s.push('\n');
    for e in trace {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            e.iter,
            format_g(e.primal_residual),
            e.psnr.map(format_g).unwrap_or_default(),
            format_g(e.wall_ms)
        );
    }
    s
}

pub fn parse_trace(text: &str) -> Result<Vec<TraceEntry>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(Error::format("trace", "missing header"));
    }
    let bad = |line: &str| Error::format("trace", format!("bad row '{line}'"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.trim().split(',').collect();
            if f.len() != 4 {
                return Err(bad(line));
            }
            Ok(TraceEntry {
                iter: f[0].parse().map_err(|_| bad(line))?,
                primal_residual: f[1].parse().map_err(|_| bad(line))?,
                psnr: if f[2].is_empty() {
                    None
                } else {
                    Some(f[2].parse().map_err(|_| bad(line))?)
                },
                wall_ms: f[3].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::{IdentityDenoiser, MedianDenoiser};
    use crate::rng::{gaussian_image, RngSeed};
    use crate::solver::{data_gradient, DirectSolver};

    fn random_kernel(n: usize, seed: u64) -> BlurKernel {
        let img = gaussian_image(n, n, 1.0, &mut RngSeed(seed).rng());
        BlurKernel::new(n, n, img.data().iter().map(|v| v.abs() + 0.05).collect()).unwrap()
    }

    fn smooth(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| 128.0 + 50.0 * (r as f64 * 0.4).sin() + 30.0 * (c as f64 * 0.3).cos())
    }

    #[test]
    fn identity_setup_is_a_fixed_point() {
        let y = smooth(8, 9);
        let k = BlurKernel::identity();
        let plan = build_plan(&k, 8, 9, 2.0, 0.1).unwrap();
        let mut state = AdmmState::new(y.clone(), 0.1).unwrap();
        admm_step_deblur(&mut state, &plan, &y, &k, &IdentityDenoiser, None).unwrap();
        assert!(state.x_hat.sub(&y).max_abs() < 1e-10);
        assert!(state.z_hat.sub(&y).max_abs() < 1e-10);
        assert!(state.lambda.max_abs() < 1e-10);
    }

    #[test]
    fn dual_update_is_exact_and_dense_solver_agrees() {
        let k = random_kernel(3, 1);
        let truth = smooth(12, 12);
        let y = crate::degrade::degrade_blur(&truth, &k, 2.55, RngSeed(2)).unwrap();
        let plan = build_plan(&k, 12, 12, 2.55, 1.0 / 49.0).unwrap();
        let dense = DirectSolver::new(&k, 12, 12, 2.55, 1.0 / 49.0).unwrap();
        let start = AdmmState::new(pad_replicate(&y, 1, 1, 1, 1), 1.0 / 49.0).unwrap();
        let mut a = start.clone();
        let mut b = start;
        for _ in 0..3 {
            let old = a.lambda.clone();
            admm_step_deblur(&mut a, &plan, &y, &k, &MedianDenoiser, None).unwrap();
            let diff = a.lambda.sub(&old).sub(&a.x_hat.sub(&a.z_hat));
            assert!(diff.max_abs() < 1e-12);
            admm_step_deblur(&mut b, &dense, &y, &k, &MedianDenoiser, None).unwrap();
            let scale = a.x_hat.max_abs();
            assert!(a.x_hat.sub(&b.x_hat).max_abs() <= 1e-8 * scale);
            assert!(a.z_hat.sub(&b.z_hat).max_abs() <= 1e-8 * scale);
        }
    }

    #[test]
    fn identity_denoiser_reaches_stationary_point() {
        let k = random_kernel(3, 3);
        let truth = smooth(14, 14);
        let y = crate::degrade::degrade_blur(&truth, &k, 1.0, RngSeed(4)).unwrap();
        let cfg = RestoreConfig {
            iterations: 20,
            ..RestoreConfig::deblur(&IdentityDenoiser)
        };
        let out = restore_deblur(&y, &k, 1.0, &cfg).unwrap();
        let mut s = out.state;
        assert!(s.x_hat.sub(&s.z_hat).max_abs() < 1e-6);
        assert_eq!(s.lambda.max_abs(), 0.0);
        let plan = build_plan(&k, 14, 14, 1.0, cfg.rho).unwrap();
        let y_full = estimate_boundary(&s.x_hat, &k, &y).unwrap();
        let (z_prev, l_prev) = (s.z_hat.clone(), s.lambda.clone());
        admm_step_deblur(&mut s, &plan, &y, &k, &IdentityDenoiser, None).unwrap();
        let g = data_gradient(&k, &y_full, &s.x_hat, &z_prev, &l_prev, 1.0, cfg.rho);
        assert!(g.max_abs() < 1e-6, "{}", g.max_abs());
        assert!(s.x_hat.sub(&s.z_hat).max_abs() < 1e-6);
    }

    #[test]
    fn degenerate_deblur_returns_observation() {
        let y = smooth(10, 10);
        let cfg = RestoreConfig {
            iterations: 5,
            ..RestoreConfig::deblur(&IdentityDenoiser)
        };
        let out = restore_deblur(&y, &BlurKernel::identity(), 1e-6, &cfg).unwrap();
        assert!(out.image.sub(&y).max_abs() < 1e-6);
        assert_eq!(out.trace().len(), 5);
        assert!(out.trace().iter().all(|e| e.psnr.is_none()));
    }

    #[test]
    fn deblur_with_median_prior_improves_and_traces() {
        let k = BlurKernel::uniform(5);
        let truth_full = smooth(40, 40);
        let y = crate::degrade::degrade_blur(&truth_full, &k, 2.55, RngSeed(5)).unwrap();
        let truth = truth_full.crop(2, 2, 36, 36).unwrap();
        let cfg = RestoreConfig {
            iterations: 10,
            track_truth: Some(&truth),
            record_timing: false,
            ..RestoreConfig::deblur(&MedianDenoiser)
        };
        let out = restore_deblur(&y, &k, 2.55, &cfg).unwrap();
        assert_eq!(out.image.shape(), y.shape());
        let before = psnr(&y, &truth, PEAK).unwrap();
        let after = psnr(&out.image, &truth, PEAK).unwrap();
        assert!(after > before, "{before} -> {after}");
        let last = out.trace().last().unwrap();
        assert_eq!(last.iter, 10);
        assert!((last.psnr.unwrap() - after).abs() < 1e-9);
        assert!(out.trace().iter().all(|e| e.wall_ms == 0.0));
    }

    #[test]
    fn inpaint_full_mask_noiseless_returns_observation() {
        let y = smooth(12, 12);
        let mask = Image::filled(12, 12, 1.0);
        let cfg = RestoreConfig {
            iterations: 3,
            ..RestoreConfig::inpaint(&IdentityDenoiser)
        };
        let out = restore_inpaint(&y, &mask, 0.0, &cfg).unwrap();
        assert_eq!(out.image, y);
        let exact = RestoreConfig {
            mask_solve: MaskSolve::Exact,
            ..cfg
        };
        assert_eq!(restore_inpaint(&y, &mask, 0.0, &exact).unwrap().image, y);
    }

    #[test]
    fn inpaint_keeps_observed_pixels_close() {
        let truth = smooth(24, 24);
        let (y, mask) = crate::degrade::degrade_inpaint(&truth, 0.5, 5.0, RngSeed(6)).unwrap();
        let cfg = RestoreConfig {
            iterations: 15,
            mask_solve: MaskSolve::Exact,
            ..RestoreConfig::inpaint(&MedianDenoiser)
        };
        let out = restore_inpaint(&y, &mask, 5.0, &cfg).unwrap();
        let (mut dev, mut n) = (0.0, 0.0);
        for i in 0..y.len() {
            if mask.data()[i] == 1.0 {
                dev += (out.image.data()[i] - y.data()[i]).abs();
                n += 1.0;
            }
        }
        assert!(dev / n <= 15.0);
    }

    #[test]
    fn config_rejects_bad_values() {
        let y = smooth(6, 6);
        let bad = RestoreConfig {
            iterations: 0,
            ..RestoreConfig::deblur(&IdentityDenoiser)
        };
        assert!(restore_deblur(&y, &BlurKernel::identity(), 1.0, &bad).is_err());
        let bad_rho = RestoreConfig {
            rho: 0.0,
            ..RestoreConfig::deblur(&IdentityDenoiser)
        };
        assert!(restore_inpaint(&y, &Image::filled(6, 6, 1.0), 1.0, &bad_rho).is_err());
        let truth = Image::zeros(3, 3);
        let wrong_truth = RestoreConfig {
            track_truth: Some(&truth),
            ..RestoreConfig::deblur(&IdentityDenoiser)
        };
        assert!(restore_deblur(&y, &BlurKernel::identity(), 1.0, &wrong_truth).is_err());
    }

    #[test]
    fn median_fill_cases() {
        let y = smooth(6, 6);
        let ones = Image::filled(6, 6, 1.0);
        assert_eq!(median_fill(&y, &ones, 3, 1).unwrap(), y);

        let mut flat = Image::filled(5, 5, 42.0);
        flat.set(2, 2, 0.0);
        let mut mask = Image::filled(5, 5, 1.0);
        mask.set(2, 2, 0.0);
        assert_eq!(median_fill(&flat, &mask, 3, 1).unwrap().get(2, 2), 42.0);

        assert!(median_fill(&y, &Image::zeros(6, 6), 3, 10).is_err());
        assert!(median_fill(&y, &ones, 2, 1).is_err());
    }

    #[test]
    fn median_fill_checkerboard_matches_brute_force() {
        let step = 3.0;
        let ramp = Image::from_fn(10, 12, |r, c| step * (r + c) as f64);
        let mask = Image::from_fn(10, 12, |r, c| ((r + c) % 2) as f64);
        let y = ramp.zip_map(&mask, |v, m| v * m);
        let filled = median_fill(&y, &mask, 3, 5).unwrap();
        for r in 0..10 {
            for c in 0..12 {
                if mask.get(r, c) == 1.0 {
                    assert_eq!(filled.get(r, c), y.get(r, c));
                    continue;
                }
                let mut vals = Vec::new();
                for sr in r.saturating_sub(1)..=(r + 1).min(9) {
                    for sc in c.saturating_sub(1)..=(c + 1).min(11) {
                        if mask.get(sr, sc) == 1.0 {
                            vals.push(y.get(sr, sc));
                        }
                    }
                }
                vals.sort_by(f64::total_cmp);
                let n = vals.len();
                let oracle = if n % 2 == 1 { vals[n / 2] } else { 0.5 * (vals[n / 2 - 1] + vals[n / 2]) };
                assert_eq!(filled.get(r, c), oracle);
                assert!((filled.get(r, c) - ramp.get(r, c)).abs() < 2.0 * step);
            }
        }
    }

    #[test]
    fn format_g_matches_printf() {
        let cases = [
            (0.0, "0"),
            (1.0, "1"),
            (123456.0, "123456"),
            (1234567.0, "1.23457e+06"),
            (0.0001, "0.0001"),
            (0.00001234567, "1.23457e-05"),
            (3.14159265, "3.14159"),
            (-2.5, "-2.5"),
            (999999.5, "1e+06"),
            (100.0, "100"),
            (f64::INFINITY, "inf"),
        ];
        for (v, s) in cases {
            assert_eq!(format_g(v), s, "{v}");
        }
    }

    #[test]
    fn trace_round_trip() {
        assert_eq!(export_trace(&[]), format!("{TRACE_HEADER}\n"));
        let trace = vec![
            TraceEntry {
                iter: 1,
                primal_residual: 1234.56789,
                psnr: Some(27.123456789),
                wall_ms: 12.5,
            },
            TraceEntry {
                iter: 2,
                primal_residual: 1.0e-7,
                psnr: None,
                wall_ms: 0.0,
            },
        ];
        let text = export_trace(&trace);
        assert!(text.contains("1,1234.57,27.1235,12.5"));
        assert!(text.contains("2,1e-07,,0"));
        let back = parse_trace(&text).unwrap();
        assert_eq!(back.len(), 2);
        for (a, b) in back.iter().zip(&trace) {
            assert_eq!(a.iter, b.iter);
            assert!((a.primal_residual - b.primal_residual).abs() <= 5e-6 * b.primal_residual.abs());
            assert_eq!(a.psnr.is_some(), b.psnr.is_some());
        }
        assert!(parse_trace("nope\n").is_err());
    }
}
