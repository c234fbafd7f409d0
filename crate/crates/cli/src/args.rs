use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "pnp",
    version,
    about = "Plug-and-play ADMM image restoration with learned MAP denoisers",
    args_override_self = true
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic test images and motion-blur kernels
    Synth(SynthArgs),
    /// Blur or mask an image and add Gaussian noise
    Degrade(DegradeArgs),
    /// Train the denoising autoencoder R
    TrainDae(TrainDaeArgs),
    /// Train the MAP denoiser D against a frozen autoencoder
    TrainMap(TrainMapArgs),
    /// Non-blind deblurring with ADMM
    Deblur(DeblurArgs),
    /// Inpainting with ADMM
    Inpaint(InpaintArgs),
    /// Degrade-restore-score sweep over image and kernel manifests
    Bench(BenchArgs),
    /// Compare ADMM against score-based gradient descent on one image
    Convergence(ConvergenceArgs),
}

/// Accepted by every command.
#[derive(Args, Debug, Clone)]
pub struct Common {
    /// `key = value` file with defaults for this command's flags; flags given on the command line win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Seed for every random draw of the command
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Output directory (created if missing)
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of images
    #[arg(long, default_value_t = 10)]
    pub images: usize,
    /// Image side length in pixels
    #[arg(long, default_value_t = 128)]
    pub size: usize,
    /// File name prefix for images
    #[arg(long, default_value = "img")]
    pub prefix: String,
    /// Number of motion kernels (sizes cycle through 11, 13, 15, 17, 19)
    #[arg(long, default_value_t = 5)]
    pub kernels: usize,
}

#[derive(Args, Debug)]
pub struct DegradeArgs {
    #[command(flatten)]
    pub common: Common,
    /// Clean input image (PGM)
    #[arg(long = "in", value_name = "PGM")]
    pub input: PathBuf,
    /// Degraded output image (PGM, values rounded to 8 bits)
    #[arg(long, value_name = "PGM")]
    pub out: PathBuf,
    /// Blur kernel text file; the output is the valid convolution area
    #[arg(long, value_name = "FILE", conflicts_with = "inpaint")]
    pub kernel: Option<PathBuf>,
    /// Noise standard deviation in intensity units
    #[arg(long, default_value_t = 2.55)]
    pub sigma: f64,
    /// Remove pixels instead of blurring
    #[arg(long)]
    pub inpaint: bool,
    /// Fraction of missing pixels when inpainting
    #[arg(long, default_value_t = 0.8)]
    pub missing: f64,
    /// Where to write the observation mask (255 = observed)
    #[arg(long, value_name = "PGM")]
    pub mask_out: Option<PathBuf>,
    /// Where to write the clean image cropped to the valid area
    #[arg(long, value_name = "PGM")]
    pub truth_out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Adam,
    Sgd,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Text file listing training images, one path per line
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    /// Text file listing held-out images (defaults to the training list)
    #[arg(long, value_name = "FILE")]
    pub heldout: Option<PathBuf>,
    /// Output weight file
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Autoencoder noise level
    #[arg(long, default_value_t = 7.0)]
    pub sigma_r: f64,
    /// Training patch side
    #[arg(long, default_value_t = 40)]
    pub patch: usize,
    /// Number of patches cropped from the training images
    #[arg(long, default_value_t = 4000)]
    pub patches: usize,
    /// Number of held-out patches
    #[arg(long, default_value_t = 16)]
    pub heldout_patches: usize,
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Adam)]
    pub optimizer: OptimizerArg,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Decay the learning rate geometrically to this value by the last step
    #[arg(long, value_name = "LR")]
    pub lr_final: Option<f64>,
    /// Global gradient-norm clip
    #[arg(long, default_value_t = 1e3)]
    pub clip: f64,
    /// Convolution layers
    #[arg(long, default_value_t = 7)]
    pub depth: usize,
    /// Feature channels per hidden layer
    #[arg(long, default_value_t = 32)]
    pub features: usize,
    /// Training log CSV (step, loss, held-out loss)
    #[arg(long, value_name = "FILE")]
    pub log: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    pub log_every: usize,
    /// Write `<out>.step<N>` every N steps (0 = never)
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Patch manifest (source, top, left) for regenerating the dataset
    #[arg(long, value_name = "FILE")]
    pub patch_manifest: Option<PathBuf>,
    /// JSON run summary
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainDaeArgs {
    #[command(flatten)]
    pub train: TrainArgs,
}

#[derive(Args, Debug)]
pub struct TrainMapArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Trained autoencoder weights
    #[arg(long, value_name = "FILE")]
    pub dae: PathBuf,
    /// ADMM penalty (default 1 / sigma_r^2)
    #[arg(long)]
    pub rho: Option<f64>,
    /// Noise std of the training inputs v (default 1 / sqrt(rho))
    #[arg(long)]
    pub input_noise: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DenoiserArg {
    Net,
    Identity,
    Median,
}

#[derive(Args, Debug, Clone)]
pub struct RestoreArgs {
    /// Observation (PGM)
    #[arg(long = "in", value_name = "PGM")]
    pub input: PathBuf,
    /// Restored image (PGM)
    #[arg(long, value_name = "PGM")]
    pub out: PathBuf,
    /// Noise std of the observation
    #[arg(long)]
    pub sigma: f64,
    /// MAP denoiser weights (required for --denoiser net)
    #[arg(long, value_name = "FILE")]
    pub weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = DenoiserArg::Net)]
    pub denoiser: DenoiserArg,
    /// Prior noise level; sets the default rho
    #[arg(long, default_value_t = 7.0)]
    pub sigma_r: f64,
    /// ADMM penalty (default 1 / sigma_r^2)
    #[arg(long)]
    pub rho: Option<f64>,
    /// ADMM iterations (default 75 for deblur, 300 for inpaint)
    #[arg(long)]
    pub iterations: Option<usize>,
    /// Convergence trace CSV
    #[arg(long, value_name = "FILE")]
    pub trace: Option<PathBuf>,
    /// Ground truth at output size; enables PSNR/SSIM reporting
    #[arg(long, value_name = "PGM")]
    pub truth: Option<PathBuf>,
    /// JSON run summary
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Record wall-clock times (outputs are then no longer byte-reproducible)
    #[arg(long)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BoundaryArg {
    Reestimate,
    Wrap,
}

#[derive(Args, Debug)]
pub struct DeblurArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub restore: RestoreArgs,
    /// Blur kernel text file
    #[arg(long, value_name = "FILE")]
    pub kernel: PathBuf,
    /// Margin handling of the padded observation
    #[arg(long, value_enum, default_value_t = BoundaryArg::Reestimate)]
    pub boundary: BoundaryArg,
}

#[derive(Args, Debug)]
pub struct InpaintArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub restore: RestoreArgs,
    /// Observation mask (nonzero = observed)
    #[arg(long, value_name = "PGM")]
    pub mask: PathBuf,
    /// Gradient steps per data update
    #[arg(long, default_value_t = 200)]
    pub gd_steps: usize,
    /// Use the per-pixel closed form instead of gradient descent
    #[arg(long)]
    pub exact: bool,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    /// Text file listing test images
    #[arg(long, value_name = "FILE")]
    pub images: PathBuf,
    /// Text file listing kernels (deblurring only)
    #[arg(long, value_name = "FILE")]
    pub kernels: Option<PathBuf>,
    /// Comma-separated noise levels
    #[arg(long, value_delimiter = ',', default_value = "2.55,5.10,7.65,10.2")]
    pub sigmas: Vec<f64>,
    /// Run inpainting instead of deblurring
    #[arg(long)]
    pub inpaint: bool,
    /// Fraction of missing pixels when inpainting
    #[arg(long, default_value_t = 0.8)]
    pub missing: f64,
    /// MAP denoiser weights; one method per file
    #[arg(long, value_name = "FILE")]
    pub weights: Vec<PathBuf>,
    /// Extra baseline denoisers
    #[arg(long, value_enum)]
    pub baseline: Vec<DenoiserArg>,
    /// ADMM iterations (default 75 for deblur, 300 for inpaint)
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long, default_value_t = 7.0)]
    pub sigma_r: f64,
    /// ADMM penalty (default 1 / sigma_r^2)
    #[arg(long)]
    pub rho: Option<f64>,
    /// Allow sigma = 0 for lossless smoke runs
    #[arg(long)]
    pub allow_zero_sigma: bool,
    /// Dataset label in the tables
    #[arg(long, default_value = "desk")]
    pub dataset: String,
    /// Parallel restorations
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Result table CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Aligned text table
    #[arg(long, value_name = "FILE")]
    pub text: Option<PathBuf>,
    /// Per-item CSV
    #[arg(long, value_name = "FILE")]
    pub items: Option<PathBuf>,
    /// Record wall-clock times
    #[arg(long)]
    pub timing: bool,
}

#[derive(Args, Debug)]
pub struct ConvergenceArgs {
    #[command(flatten)]
    pub common: Common,
    /// Clean image (PGM); degraded internally with --seed
    #[arg(long, value_name = "PGM")]
    pub image: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub kernel: PathBuf,
    #[arg(long, default_value_t = 2.55)]
    pub sigma: f64,
    /// MAP denoiser weights for ADMM
    #[arg(long, value_name = "FILE")]
    pub weights: PathBuf,
    /// Autoencoder weights for the gradient-descent baseline
    #[arg(long, value_name = "FILE")]
    pub dae: PathBuf,
    #[arg(long, default_value_t = 75)]
    pub iterations: usize,
    #[arg(long, default_value_t = 500)]
    pub gd_iterations: usize,
    #[arg(long, default_value_t = 0.1)]
    pub gd_step: f64,
    #[arg(long, default_value_t = 7.0)]
    pub sigma_r: f64,
    /// ADMM penalty (default 1 / sigma_r^2)
    #[arg(long)]
    pub rho: Option<f64>,
    /// Multi-method trace CSV
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// JSON summary with iterations-to-threshold
    #[arg(long, value_name = "FILE")]
    pub summary: Option<PathBuf>,
    /// Record wall-clock times
    #[arg(long)]
    pub timing: bool,
}
