//! Plug-and-play ADMM image restoration with learned MAP denoisers.
//!
//! The crate contains everything needed to simulate degradations, train a
//! denoising autoencoder and a MAP denoiser on top of it, and run ADMM for
//! non-blind deblurring and inpainting:
//!
//! - [`image`], [`ops`], [`fourier`], [`metrics`], [`pgm`]: rasters, convolutions,
//!   transforms, PSNR/SSIM and file formats.
//! - [`degrade`]: the forward model `y = Kx + n`.
//! - [`net`]: a small residual conv net with exact backpropagation.
//! - [`training`]: MMSE autoencoder and MAP denoiser training.
//! - [`solver`]: data-fidelity solvers (FFT closed form, dense oracle, masked GD).
//! - [`admm`]: the restoration drivers and convergence traces.

pub mod admm;
pub mod degrade;
pub mod denoiser;
pub mod error;
pub mod fourier;
pub mod image;
pub mod metrics;
pub mod net;
pub mod ops;
pub mod pgm;
pub mod rng;
pub mod solver;
pub mod toy;
pub mod training;

pub use admm::{
    export_trace, median_fill, parse_trace, restore_deblur, restore_inpaint, AdmmState,
    MaskSolve, RestoreConfig, Restoration, TraceEntry,
};
pub use degrade::{degrade_blur, degrade_inpaint, DegradationSpec};
pub use denoiser::{BlackBox, Denoiser, IdentityDenoiser, MedianDenoiser};
pub use error::{Error, Result};
pub use fourier::{dft2, idft2, ComplexPlane, Fft2};
pub use image::{BlurKernel, Image, PEAK};
pub use metrics::{psnr, ssim};
pub use net::{Architecture, ConvNet, GradientSet};
pub use ops::{conv2d_circular, conv2d_valid, pad_replicate};
pub use rng::RngSeed;
pub use solver::{FftSolverPlan, DataSolver};
pub use training::{PatchDataset, TrainConfig};

/// Default DAE noise level.
pub const DEFAULT_SIGMA_R: f64 = 7.0;
/// ADMM iterations for deblurring.
pub const DEFAULT_DEBLUR_ITERATIONS: usize = 75;
/// ADMM iterations for inpainting.
pub const DEFAULT_INPAINT_ITERATIONS: usize = 300;
/// Gradient steps per inpainting data update.
pub const DEFAULT_GD_STEPS: usize = 200;
/// Side of square training patches.
pub const DEFAULT_PATCH_SIZE: usize = 40;

/// Penalty balanced against the DAE noise level: `1 / sigma_r^2`.
pub fn default_rho(sigma_r: f64) -> f64 {
    1.0 / (sigma_r * sigma_r)
}
