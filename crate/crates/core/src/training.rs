//! Training of the denoising autoencoder `R` and the MAP denoiser `D`.
//!
//! `R` minimizes the squared error `||R(x + eta) - x||^2` over clean patches
//! with fresh noise `eta ~ N(0, sigma_r^2)` every step.
//!
//! `D` minimizes, on noisy inputs `v`,
//!
//! ```text
//! L_map = (1 / (2 sigma_r^2)) ||vbar - vbarbar||^2 + (rho / 2) ||vbar - v||^2
//! vbar    = D(v)
//! vbarbar = R(vbar + eta),  eta ~ N(0, sigma_r^2)
//! ```
//!
//! `vbarbar` is a constant for backpropagation, so the gradient with respect
//! to `vbar` is `(vbar - vbarbar) / sigma_r^2 + rho (vbar - v)` and `R` is only
//! ever evaluated, never differentiated. No clean target enters the loss.

use std::fmt::Write as _;
use std::path::Path;

use rand::RngExt;
use rayon::prelude::*;

use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::net::{Architecture, ConvNet, GradientSet};
use crate::rng::{gaussian_image, NoiseRng, RngSeed};

const TAG_INIT: u64 = 1;
const TAG_STEPS: u64 = 2;
const TAG_HELDOUT: u64 = 3;

/// A batch loss this many times the first one counts as divergence.
const EXPLOSION_FACTOR: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
    };

    pub fn name(&self) -> &'static str {
        match self {
            Optimizer::Sgd => "sgd",
            Optimizer::Adam { .. } => "adam",
        }
    }

    pub fn parse(s: &str) -> Result<Optimizer> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::ADAM),
            other => Err(Error::arg(format!("unknown optimizer '{other}' (expected sgd or adam)"))),
        }
    }
}

/// Hyper-parameters shared by both trainings.
///
/// The MAP objective `-log p(x) + alpha ||x - v||^2` that `D` approximates
/// uses `alpha = rho / 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    /// Noise std of the autoencoder, in intensity units.
    pub sigma_r: f64,
    /// ADMM penalty; defaults to `1 / sigma_r^2`.
    pub rho: f64,
    pub patch_size: usize,
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    /// When set, the step size decays geometrically from `learning_rate`
    /// at the first step to this value at the last one.
    pub lr_final: Option<f64>,
    pub optimizer: Optimizer,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: RngSeed,
    pub architecture: Architecture,
    /// Std of the noise added to clean patches to form MAP inputs `v`.
    /// `None` means `1 / sqrt(rho)`.
    pub map_input_noise: Option<f64>,
    /// Number of held-out patches used for progress reporting.
    pub heldout_count: usize,
    pub log_every: usize,
    /// Checkpoint period in steps, 0 disables checkpoints.
    pub checkpoint_every: usize,
}

impl TrainConfig {
    pub fn new(sigma_r: f64) -> Self {
        Self {
            sigma_r,
            rho: crate::default_rho(sigma_r),
            patch_size: crate::DEFAULT_PATCH_SIZE,
            batch_size: 8,
            steps: 2000,
            learning_rate: 1e-4,
            lr_final: None,
            optimizer: Optimizer::Sgd,
            clip_norm: 1e3,
            seed: RngSeed(0),
            architecture: Architecture::DESK,
            map_input_noise: None,
            heldout_count: 32,
            log_every: 50,
            checkpoint_every: 0,
        }
    }

    /// Step size used at `step` (1-based).
    pub fn learning_rate_at(&self, step: usize) -> f64 {
        match self.lr_final {
            Some(f) if self.steps > 1 => {
                let t = (step.clamp(1, self.steps) - 1) as f64 / (self.steps - 1) as f64;
                self.learning_rate * (f / self.learning_rate).powf(t)
            }
            _ => self.learning_rate,
        }
    }

    pub fn map_noise(&self) -> f64 {
        self.map_input_noise.unwrap_or_else(|| 1.0 / self.rho.sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_r > 0.0) || !self.sigma_r.is_finite() {
            return Err(Error::arg("sigma_r must be positive"));
        }
        if !(self.rho > 0.0) || !self.rho.is_finite() {
            return Err(Error::arg("rho must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::arg("batch_size must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::arg("learning_rate must be positive"));
        }
        if let Some(f) = self.lr_final {
            if !(f > 0.0) || !f.is_finite() {
                return Err(Error::arg("final learning rate must be positive"));
            }
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::arg("clip_norm must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::arg("log_every must be positive"));
        }
        if let Some(n) = self.map_input_noise {
            if !(n >= 0.0) {
                return Err(Error::arg("map input noise must be >= 0"));
            }
        }
        let rf = self.architecture.receptive_field();
        if self.patch_size < rf {
            return Err(Error::arg(format!(
                "patch_size {} is smaller than the receptive field {rf}",
                self.patch_size
            )));
        }
        Ok(())
    }
}

/// Where a patch was cropped from.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchOrigin {
    pub source: String,
    pub top: usize,
    pub left: usize,
}

/// Square training patches with the manifest needed to recreate them.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PatchDataset {
    patch_size: usize,
    patches: Vec<Image>,
    manifest: Vec<PatchOrigin>,
}

impl PatchDataset {
    /// Crops `count` random patches from `sources` (name, image), choosing
    /// the source uniformly per patch.
    pub fn extract(sources: &[(String, Image)], patch_size: usize, count: usize, seed: RngSeed) -> Result<Self> {
        if patch_size == 0 {
            return Err(Error::arg("patch size must be positive"));
        }
        let usable: Vec<&(String, Image)> = sources
            .iter()
            .filter(|(_, img)| img.height() >= patch_size && img.width() >= patch_size)
            .collect();
        if usable.is_empty() {
            return Err(Error::arg(format!("no source image is at least {patch_size}x{patch_size}")));
        }
        let mut rng = seed.rng();
        let mut manifest = Vec::with_capacity(count);
        for _ in 0..count {
            let (name, img) = usable[rng.random_range(0..usable.len())];
            manifest.push(PatchOrigin {
                source: name.clone(),
                top: rng.random_range(0..=img.height() - patch_size),
                left: rng.random_range(0..=img.width() - patch_size),
            });
        }
        Self::regenerate(sources, patch_size, manifest)
    }

    /// Rebuilds the patches listed in `manifest`.
    pub fn regenerate(sources: &[(String, Image)], patch_size: usize, manifest: Vec<PatchOrigin>) -> Result<Self> {
        let patches = manifest
            .iter()
            .map(|o| {
                let (_, img) = sources
                    .iter()
                    .find(|(n, _)| *n == o.source)
                    .ok_or_else(|| Error::arg(format!("manifest source '{}' not provided", o.source)))?;
                img.crop(o.top, o.left, patch_size, patch_size)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            patch_size,
            patches,
            manifest,
        })
    }

    /// Wraps patches that do not come from files.
    pub fn from_patches(patches: Vec<Image>) -> Result<Self> {
        let patch_size = patches.first().map_or(0, |p| p.height());
        if patches.iter().any(|p| p.shape() != (patch_size, patch_size)) {
            return Err(Error::dim("patches must all be square and equal size"));
        }
        let manifest = (0..patches.len())
            .map(|i| PatchOrigin {
                source: format!("memory:{i}"),
                top: 0,
                left: 0,
            })
            .collect();
        Ok(Self {
            patch_size,
            patches,
            manifest,
        })
    }

    pub fn patch_size(&self) -> usize {
        self.patch_size
    }

    pub fn patches(&self) -> &[Image] {
        &self.patches
    }

    pub fn manifest(&self) -> &[PatchOrigin] {
        &self.manifest
    }

    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// One `source top left` line per patch.
    pub fn manifest_text(&self) -> String {
        let mut s = format!("# patch_size {}\n", self.patch_size);
        for o in &self.manifest {
            let _ = writeln!(s, "{} {} {}", o.source, o.top, o.left);
        }
        s
    }

    pub fn parse_manifest(text: &str) -> Result<(usize, Vec<PatchOrigin>)> {
        let mut size = None;
        let mut out = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if let Some(rest) = line.strip_prefix("# patch_size") {
                size = Some(rest.trim().parse().map_err(|_| Error::format("manifest", "bad patch size"))?);
                continue;
            }
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.rsplitn(3, ' ');
            let left = parts.next().and_then(|v| v.parse().ok());
            let top = parts.next().and_then(|v| v.parse().ok());
            let source = parts.next();
            match (source, top, left) {
                (Some(source), Some(top), Some(left)) => out.push(PatchOrigin {
                    source: source.to_string(),
                    top,
                    left,
                }),
                _ => return Err(Error::format("manifest", format!("bad line '{line}'"))),
            }
        }
        let size = size.ok_or_else(|| Error::format("manifest", "missing patch size"))?;
        Ok((size, out))
    }
}

/// Draws `n` patches with replacement, each under a random flip/rotation.
pub fn sample_patch_batch(ds: &PatchDataset, n: usize, rng: &mut NoiseRng) -> Result<Vec<Image>> {
    if ds.is_empty() {
        return Err(Error::arg("cannot sample from an empty dataset"));
    }
    Ok((0..n)
        .map(|_| {
            let p = &ds.patches[rng.random_range(0..ds.len())];
            let turns = rng.random_range(0..4u8);
            let mirror = rng.random::<bool>();
            p.dihedral(turns, mirror)
        })
        .collect())
}

/// Sum of squared differences and its gradient `2 (out - clean)`.
pub fn mse_dae_loss(out: &Image, clean: &Image) -> Result<(f64, Image)> {
    out.check_same_shape(clean, "clean target")?;
    let diff = out.sub(clean);
    Ok((diff.sum_sq(), diff.scale(2.0)))
}

/// `L_map` and its gradient with respect to `vbar`, given all three images.
pub fn map_loss_terms(v: &Image, vbar: &Image, vbarbar: &Image, sigma_r: f64, rho: f64) -> Result<(f64, Image)> {
    v.check_same_shape(vbar, "vbar")?;
    v.check_same_shape(vbarbar, "vbarbar")?;
    let inv = 1.0 / (sigma_r * sigma_r);
    let reg = vbar.sub(vbarbar);
    let prox = vbar.sub(v);
    let loss = 0.5 * inv * reg.sum_sq() + 0.5 * rho * prox.sum_sq();
    let mut grad = reg.scale(inv);
    grad.axpy(rho, &prox);
    Ok((loss, grad))
}

/// Everything computed by [`map_loss`].
#[derive(Clone, Debug)]
pub struct MapLoss {
    pub loss: f64,
    pub grads: GradientSet,
    pub grad_vbar: Image,
    pub vbar: Image,
    pub vbarbar: Image,
}

/// Refuses autoencoders that were not trained for `sigma_r`.
pub fn check_dae_compat<R: Denoiser + ?Sized>(r: &R, sigma_r: f64) -> Result<()> {
    match r.trained_sigma() {
        None => Err(Error::IncompatibleModel(format!(
            "'{}' carries no training noise level",
            r.descriptor()
        ))),
        Some(s) if (s - sigma_r).abs() > 1e-3 * sigma_r.max(1.0) => Err(Error::IncompatibleModel(format!(
            "autoencoder trained for sigma_r={s}, configuration asks for {sigma_r}"
        ))),
        Some(_) => Ok(()),
    }
}

/// Evaluates `L_map` for one input and backpropagates into `D` only.
/// `eta` is the noise injected before `R`.
pub fn map_loss<R: Denoiser + ?Sized>(
    v: &Image,
    d: &ConvNet,
    r: &R,
    cfg: &TrainConfig,
    eta: &Image,
) -> Result<MapLoss> {
    check_dae_compat(r, cfg.sigma_r)?;
    v.check_same_shape(eta, "injected noise")?;
    let (vbar, cache) = d.forward_cached(v);
    let vbarbar = r.denoise(&vbar.add(eta));
    let (loss, grad_vbar) = map_loss_terms(v, &vbar, &vbarbar, cfg.sigma_r, cfg.rho)?;
    let mut grads = GradientSet::zeros_like(d);
    d.backward_cached(&cache, &grad_vbar, &mut grads, false)?;
    Ok(MapLoss {
        loss,
        grads,
        grad_vbar,
        vbar,
        vbarbar,
    })
}

/// One progress record.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLogEntry {
    pub step: usize,
    /// Mean batch loss over the steps since the previous record.
    pub loss: f64,
    pub heldout_loss: f64,
}

/// Hooks called while training runs.
pub trait TrainObserver {
    fn on_log(&mut self, _entry: &TrainLogEntry, _net: &ConvNet) -> Result<()> {
        Ok(())
    }

    fn on_checkpoint(&mut self, _step: usize, _net: &ConvNet) -> Result<()> {
        Ok(())
    }
}

/// Observer that does nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub net: ConvNet,
    pub initial_heldout: f64,
    pub final_heldout: f64,
    pub log: Vec<TrainLogEntry>,
    /// Batch loss of every step.
    pub step_losses: Vec<f64>,
}

/// `step,loss,heldout_loss` CSV for a training log.
pub fn train_log_csv(log: &[TrainLogEntry]) -> String {
    let mut s = String::from("step,loss,heldout_loss\n");
    for e in log {
        let _ = writeln!(s, "{},{:.6e},{:.6e}", e.step, e.loss, e.heldout_loss);
    }
    s
}

pub fn write_train_log(path: impl AsRef<Path>, log: &[TrainLogEntry]) -> Result<()> {
    std::fs::write(path, train_log_csv(log))?;
    Ok(())
}

struct OptimizerState {
    kind: Optimizer,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl OptimizerState {
    fn new(kind: Optimizer, net: &ConvNet) -> Self {
        let zeros: Vec<Vec<f64>> = net.param_slices().map(|s| vec![0.0; s.len()]).collect();
        Self {
            kind,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn apply(&mut self, net: &mut ConvNet, grads: &GradientSet, lr: f64) {
        self.t += 1;
        let t = self.t;
        for (i, (p, g)) in net.param_slices_mut().zip(grads.slices()).enumerate() {
            match self.kind {
                Optimizer::Sgd => {
                    for (pj, gj) in p.iter_mut().zip(g) {
                        *pj -= lr * gj;
                    }
                }
                Optimizer::Adam { beta1, beta2, eps } => {
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (j, (pj, gj)) in p.iter_mut().zip(g).enumerate() {
                        let m = &mut self.m[i][j];
                        let v = &mut self.v[i][j];
                        *m = beta1 * *m + (1.0 - beta1) * gj;
                        *v = beta2 * *v + (1.0 - beta2) * gj * gj;
                        *pj -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                    }
                }
            }
        }
    }
}

fn clip(grads: &mut GradientSet, max_norm: f64) {
    let n = grads.norm();
    if n > max_norm {
        grads.scale(max_norm / n);
    }
}

/// Fresh network with an identity-mapping start (zeroed last layer).
pub fn initial_network(cfg: &TrainConfig) -> Result<ConvNet> {
    let mut net = ConvNet::init_weights(cfg.architecture, cfg.seed.derive(TAG_INIT))?;
    if cfg.architecture.residual {
        net.zero_output_layer();
    }
    Ok(net)
}

/// Averages per-sample `(loss, grads)` in sample order, so results do not
/// depend on how the work was scheduled.
fn reduce(parts: Vec<(f64, GradientSet)>, net: &ConvNet) -> (f64, GradientSet) {
    let n = parts.len().max(1) as f64;
    let mut total = GradientSet::zeros_like(net);
    let mut loss = 0.0;
    for (l, g) in &parts {
        loss += l;
        total.add_assign(g);
    }
    total.scale(1.0 / n);
    (loss / n, total)
}

/// Generic loop: `batch_grad(net, step_rng)` returns the mean batch loss
/// and gradient, `heldout(net)` the held-out loss.
fn run_training(
    cfg: &TrainConfig,
    mut net: ConvNet,
    observer: &mut dyn TrainObserver,
    batch_grad: &(dyn Fn(&ConvNet, &mut NoiseRng) -> Result<(f64, GradientSet)> + Sync),
    heldout: &(dyn Fn(&ConvNet) -> f64 + Sync),
) -> Result<TrainOutcome> {
    let mut rng = cfg.seed.derive(TAG_STEPS).rng();
    let mut opt = OptimizerState::new(cfg.optimizer, &net);
    let initial_heldout = heldout(&net);
    let mut log = Vec::new();
    let mut step_losses = Vec::with_capacity(cfg.steps);
    let mut window = 0.0;
    let mut window_len = 0usize;
    let mut last_heldout = initial_heldout;
    for step in 1..=cfg.steps {
        let (loss, mut grads) = batch_grad(&net, &mut rng)?;
        let first = *step_losses.first().unwrap_or(&loss);
        if !loss.is_finite() || !grads.is_finite() || loss > EXPLOSION_FACTOR * first.max(1.0) {
            return Err(Error::Diverged(format!(
                "training loss became {loss} at step {step}; try a smaller learning rate"
            )));
        }
        clip(&mut grads, cfg.clip_norm);
        opt.apply(&mut net, &grads, cfg.learning_rate_at(step));
        step_losses.push(loss);
        window += loss;
        window_len += 1;
        if step % cfg.log_every == 0 || step == cfg.steps {
            last_heldout = heldout(&net);
            if !last_heldout.is_finite() {
                return Err(Error::Diverged(format!("held-out loss became {last_heldout} at step {step}")));
            }
            let entry = TrainLogEntry {
                step,
                loss: window / window_len as f64,
                heldout_loss: last_heldout,
            };
            observer.on_log(&entry, &net)?;
            log.push(entry);
            window = 0.0;
            window_len = 0;
        }
        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 {
            observer.on_checkpoint(step, &net)?;
        }
    }
    Ok(TrainOutcome {
        net,
        initial_heldout,
        final_heldout: last_heldout,
        log,
        step_losses,
    })
}

/// Fixed noisy copies of the held-out patches: `(clean, noise)` pairs.
fn heldout_pairs(ds: &PatchDataset, count: usize, sigma: f64, seed: RngSeed) -> Vec<(Image, Image)> {
    let mut rng = seed.derive(TAG_HELDOUT).rng();
    ds.patches
        .iter()
        .take(count)
        .map(|p| (p.clone(), gaussian_image(p.height(), p.width(), sigma, &mut rng)))
        .collect()
}

/// Mean `||R(x + eta) - x||^2` over fixed `(x, eta)` pairs.
pub fn dae_heldout_loss(net: &ConvNet, pairs: &[(Image, Image)]) -> f64 {
    let total: f64 = pairs
        .par_iter()
        .map(|(clean, noise)| net.forward(&clean.add(noise)).sub(clean).sum_sq())
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / pairs.len().max(1) as f64
}

/// Trains the autoencoder from an identity start. `heldout` supplies the
/// progress-report patches (fixed noise).
pub fn train_dae(
    ds: &PatchDataset,
    heldout: &PatchDataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = initial_network(cfg)?;
    train_dae_from(net, ds, heldout, cfg, observer)
}

/// Continues autoencoder training from `net`.
pub fn train_dae_from(
    net: ConvNet,
    ds: &PatchDataset,
    heldout: &PatchDataset,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_patches(ds, cfg)?;
    let pairs = heldout_pairs(heldout, cfg.heldout_count, cfg.sigma_r, cfg.seed);
    let sigma = cfg.sigma_r;
    let batch = |net: &ConvNet, rng: &mut NoiseRng| -> Result<(f64, GradientSet)> {
        let clean = sample_patch_batch(ds, cfg.batch_size, rng)?;
        let noisy: Vec<Image> = clean
            .iter()
            .map(|c| c.add(&gaussian_image(c.height(), c.width(), sigma, rng)))
            .collect();
        let parts = clean
            .par_iter()
            .zip(noisy.par_iter())
            .map(|(c, y)| {
                let (out, cache) = net.forward_cached(y);
                let (loss, g) = mse_dae_loss(&out, c)?;
                let mut grads = GradientSet::zeros_like(net);
                net.backward_cached(&cache, &g, &mut grads, false)?;
                Ok((loss, grads))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce(parts, net))
    };
    let held = |net: &ConvNet| dae_heldout_loss(net, &pairs);
    let mut out = run_training(cfg, net, observer, &batch, &held)?;
    out.net.set_sigma_r(Some(cfg.sigma_r));
    Ok(out)
}

fn check_patches(ds: &PatchDataset, cfg: &TrainConfig) -> Result<()> {
    if ds.is_empty() {
        return Err(Error::arg("training dataset is empty"));
    }
    if ds.patch_size() < cfg.architecture.receptive_field() {
        return Err(Error::arg("patches are smaller than the receptive field"));
    }
    Ok(())
}

/// Fixed held-out MAP problems: `(v, eta)` pairs.
pub fn map_heldout_pairs(heldout: &PatchDataset, cfg: &TrainConfig) -> Vec<(Image, Image)> {
    let mut rng = cfg.seed.derive(TAG_HELDOUT).derive(1).rng();
    heldout
        .patches
        .iter()
        .take(cfg.heldout_count)
        .map(|p| {
            let v = p.add(&gaussian_image(p.height(), p.width(), cfg.map_noise(), &mut rng));
            let eta = gaussian_image(p.height(), p.width(), cfg.sigma_r, &mut rng);
            (v, eta)
        })
        .collect()
}

/// Mean `L_map` over fixed `(v, eta)` pairs.
pub fn map_heldout_loss<R: Denoiser + ?Sized>(
    d: &ConvNet,
    r: &R,
    pairs: &[(Image, Image)],
    sigma_r: f64,
    rho: f64,
) -> f64 {
    let total: f64 = pairs
        .par_iter()
        .map(|(v, eta)| {
            let vbar = d.forward(v);
            let vbarbar = r.denoise(&vbar.add(eta));
            map_loss_terms(v, &vbar, &vbarbar, sigma_r, rho)
                .map(|(l, _)| l)
                .unwrap_or(f64::NAN)
        })
        .collect::<Vec<_>>()
        .iter()
        .sum();
    total / pairs.len().max(1) as f64
}

/// Trains `D` against a frozen autoencoder `r`, starting from the identity.
pub fn train_map_denoiser<R: Denoiser + ?Sized>(
    ds: &PatchDataset,
    heldout: &PatchDataset,
    r: &R,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let net = initial_network(cfg)?;
    train_map_denoiser_from(net, ds, heldout, r, cfg, observer)
}

/// Continues MAP training from `d`.
pub fn train_map_denoiser_from<R: Denoiser + ?Sized>(
    d: ConvNet,
    ds: &PatchDataset,
    heldout: &PatchDataset,
    r: &R,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_patches(ds, cfg)?;
    check_dae_compat(r, cfg.sigma_r)?;
    let pairs = map_heldout_pairs(heldout, cfg);
    let noise = cfg.map_noise();
    let batch = |net: &ConvNet, rng: &mut NoiseRng| -> Result<(f64, GradientSet)> {
        let clean = sample_patch_batch(ds, cfg.batch_size, rng)?;
        let inputs: Vec<(Image, Image)> = clean
            .iter()
            .map(|c| {
                let (h, w) = c.shape();
                let v = c.add(&gaussian_image(h, w, noise, rng));
                (v, gaussian_image(h, w, cfg.sigma_r, rng))
            })
            .collect();
        let parts = inputs
            .par_iter()
            .map(|(v, eta)| map_loss(v, net, r, cfg, eta).map(|m| (m.loss, m.grads)))
            .collect::<Result<Vec<_>>>()?;
        Ok(reduce(parts, net))
    };
    let held = |net: &ConvNet| map_heldout_loss(net, r, &pairs, cfg.sigma_r, cfg.rho);
    let mut out = run_training(cfg, d, observer, &batch, &held)?;
    out.net.set_sigma_r(Some(cfg.sigma_r));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::BlackBox;
    use crate::toy::AtomicPrior;

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            patch_size: 12,
            batch_size: 4,
            steps: 30,
            learning_rate: 1e-3,
            optimizer: Optimizer::ADAM,
            architecture: Architecture {
                depth: 3,
                features: 6,
                residual: true,
            },
            heldout_count: 4,
            log_every: 10,
            ..TrainConfig::new(7.0)
        }
    }

    fn smooth_sources() -> Vec<(String, Image)> {
        (0..3)
            .map(|k| {
                let img = Image::from_fn(48, 48, |r, c| {
                    128.0 + 60.0 * ((r as f64 * 0.2 + k as f64).sin() * (c as f64 * 0.15).cos())
                });
                (format!("img{k}"), img)
            })
            .collect()
    }

    #[test]
    fn mse_loss_closed_forms() {
        let a = Image::filled(3, 4, 5.0);
        let (l, g) = mse_dae_loss(&a, &a).unwrap();
        assert_eq!(l, 0.0);
        assert_eq!(g.max_abs(), 0.0);
        let (l, g) = mse_dae_loss(&a.map(|v| v + 1.0), &a).unwrap();
        assert_eq!(l, 12.0);
        assert!(g.data().iter().all(|&v| v == 2.0));
        assert!(mse_dae_loss(&a, &Image::zeros(4, 3)).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let mut rng = RngSeed(3).rng();
        let out = gaussian_image(4, 5, 10.0, &mut rng);
        let clean = gaussian_image(4, 5, 10.0, &mut rng);
        let (_, g) = mse_dae_loss(&out, &clean).unwrap();
        let h = 1e-5;
        for i in 0..out.len() {
            let mut p = out.clone();
            p.data_mut()[i] += h;
            let mut m = out.clone();
            m.data_mut()[i] -= h;
            let fd = (mse_dae_loss(&p, &clean).unwrap().0 - mse_dae_loss(&m, &clean).unwrap().0) / (2.0 * h);
            assert!((fd - g.data()[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn map_loss_gradient_is_the_stop_gradient_formula() {
        let cfg = tiny_cfg();
        let mut rng = RngSeed(4).rng();
        let v = gaussian_image(12, 12, 30.0, &mut rng).map(|x| x + 120.0);
        let eta = gaussian_image(12, 12, 7.0, &mut rng);
        let d = ConvNet::init_weights(cfg.architecture, RngSeed(5)).unwrap();
        let r = BlackBox::new("blur", |x: &Image| x.map(|p| 0.9 * p + 10.0)).with_trained_sigma(7.0);
        let out = map_loss(&v, &d, &r, &cfg, &eta).unwrap();
        let vbar = d.forward(&v);
        let vbarbar = vbar.add(&eta).map(|p| 0.9 * p + 10.0);
        let expect = vbar
            .sub(&vbarbar)
            .scale(1.0 / 49.0)
            .add(&vbar.sub(&v).scale(cfg.rho));
        assert_eq!(out.grad_vbar, expect);
        let loss = 0.5 / 49.0 * vbar.sub(&vbarbar).sum_sq() + 0.5 * cfg.rho * vbar.sub(&v).sum_sq();
        assert!((out.loss - loss).abs() <= 1e-12 * loss);
        // the parameter gradient is D's backward of grad_vbar alone
        let (direct, _) = d.backward(&v, &expect).unwrap();
        assert_eq!(out.grads, direct);
    }

    #[test]
    fn map_loss_identity_pair_is_zero() {
        let cfg = tiny_cfg();
        let d = initial_network(&cfg).unwrap();
        let r = BlackBox::new("id", |x: &Image| x.clone()).with_trained_sigma(7.0);
        let v = gaussian_image(12, 12, 30.0, &mut RngSeed(6).rng());
        let out = map_loss(&v, &d, &r, &cfg, &Image::zeros(12, 12)).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.norm() == 0.0);
    }

    #[test]
    fn map_loss_rejects_incompatible_autoencoder() {
        let cfg = tiny_cfg();
        let d = initial_network(&cfg).unwrap();
        let v = Image::zeros(12, 12);
        let wrong = BlackBox::new("id", |x: &Image| x.clone()).with_trained_sigma(15.0);
        assert!(matches!(map_loss(&v, &d, &wrong, &cfg, &v), Err(Error::IncompatibleModel(_))));
        let bare = BlackBox::new("id", |x: &Image| x.clone());
        assert!(matches!(map_loss(&v, &d, &bare, &cfg, &v), Err(Error::IncompatibleModel(_))));
    }

    #[test]
    fn stop_gradient_gives_identical_gradients_for_net_and_black_box() {
        let cfg = tiny_cfg();
        let mut r = ConvNet::init_weights(cfg.architecture, RngSeed(7)).unwrap();
        r.set_sigma_r(Some(7.0));
        let boxed = {
            let r = r.clone();
            BlackBox::new("opaque", move |x: &Image| r.forward(x)).with_trained_sigma(7.0)
        };
        let d = ConvNet::init_weights(cfg.architecture, RngSeed(8)).unwrap();
        let mut rng = RngSeed(9).rng();
        let v = gaussian_image(12, 12, 30.0, &mut rng).map(|x| x + 100.0);
        let eta = gaussian_image(12, 12, 7.0, &mut rng);
        let a = map_loss(&v, &d, &r, &cfg, &eta).unwrap();
        let b = map_loss(&v, &d, &boxed, &cfg, &eta).unwrap();
        assert_eq!(a.grads, b.grads);
        assert_eq!(a.loss.to_bits(), b.loss.to_bits());
    }

    #[test]
    fn config_validation() {
        let cfg = TrainConfig::new(7.0);
        assert!((cfg.rho - 1.0 / 49.0).abs() < 1e-15);
        assert!((cfg.map_noise() - 7.0).abs() < 1e-12);
        cfg.validate().unwrap();
        let small = TrainConfig {
            patch_size: 10,
            ..cfg.clone()
        };
        assert!(small.validate().is_err());
        assert!(TrainConfig { rho: 0.0, ..cfg.clone() }.validate().is_err());
        assert!(TrainConfig { lr_final: Some(0.0), ..cfg }.validate().is_err());
        assert_eq!(Optimizer::parse("adam").unwrap(), Optimizer::ADAM);
        assert!(Optimizer::parse("lbfgs").is_err());
    }

    #[test]
    fn geometric_decay_hits_both_ends() {
        let cfg = TrainConfig {
            steps: 11,
            learning_rate: 1e-3,
            lr_final: Some(1e-5),
            ..TrainConfig::new(7.0)
        };
        assert!((cfg.learning_rate_at(1) - 1e-3).abs() < 1e-18);
        assert!((cfg.learning_rate_at(6) - 1e-4).abs() < 1e-15);
        assert!((cfg.learning_rate_at(11) - 1e-5).abs() < 1e-18);
        let flat = TrainConfig { lr_final: None, ..cfg };
        assert_eq!(flat.learning_rate_at(11), 1e-3);
    }

    #[test]
    fn dataset_extract_regenerate_and_manifest() {
        let sources = smooth_sources();
        let ds = PatchDataset::extract(&sources, 12, 20, RngSeed(1)).unwrap();
        assert_eq!(ds.len(), 20);
        assert!(ds.patches().iter().all(|p| p.shape() == (12, 12)));
        let (size, manifest) = PatchDataset::parse_manifest(&ds.manifest_text()).unwrap();
        assert_eq!(size, 12);
        let again = PatchDataset::regenerate(&sources, size, manifest).unwrap();
        assert_eq!(again, ds);
        assert_eq!(PatchDataset::extract(&sources, 12, 20, RngSeed(1)).unwrap(), ds);
        assert!(PatchDataset::extract(&sources, 100, 2, RngSeed(1)).is_err());
    }

    #[test]
    fn batch_sampling_is_deterministic_and_preserves_means() {
        let ds = PatchDataset::extract(&smooth_sources(), 12, 50, RngSeed(2)).unwrap();
        assert!(sample_patch_batch(&ds, 0, &mut RngSeed(1).rng()).unwrap().is_empty());
        let a = sample_patch_batch(&ds, 10, &mut RngSeed(3).rng()).unwrap();
        let b = sample_patch_batch(&ds, 10, &mut RngSeed(3).rng()).unwrap();
        assert_eq!(a, b);
        assert!(sample_patch_batch(&PatchDataset::default(), 1, &mut RngSeed(1).rng()).is_err());

        // two-sample Kolmogorov-Smirnov statistic on patch means
        let aug: Vec<f64> = sample_patch_batch(&ds, 400, &mut RngSeed(4).rng())
            .unwrap()
            .iter()
            .map(Image::mean)
            .collect();
        let mut rng = RngSeed(4).rng();
        let plain: Vec<f64> = (0..400).map(|_| ds.patches()[rng.random_range(0..ds.len())].mean()).collect();
        assert!(ks_statistic(aug, plain) < 0.12);
    }

    fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        let (mut i, mut j, mut d) = (0, 0, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn short_trainings_are_deterministic_and_learn() {
        let ds = PatchDataset::extract(&smooth_sources(), 12, 40, RngSeed(5)).unwrap();
        let held = PatchDataset::extract(&smooth_sources(), 12, 4, RngSeed(6)).unwrap();
        let cfg = tiny_cfg();
        let a = train_dae(&ds, &held, &cfg, &mut Silent).unwrap();
        let b = train_dae(&ds, &held, &cfg, &mut Silent).unwrap();
        for (x, y) in a.step_losses.iter().zip(&b.step_losses) {
            assert!((x - y).abs() <= 1e-6 * x.abs());
        }
        assert_eq!(a.log.len(), 3);
        assert!(a.final_heldout < a.initial_heldout);
        assert_eq!(a.net.sigma_r(), Some(7.0));

        let map = train_map_denoiser(&ds, &held, &a.net, &cfg, &mut Silent).unwrap();
        assert_eq!(map.step_losses.len(), 30);
        assert!(map.final_heldout.is_finite());
    }

    #[test]
    fn divergence_is_reported() {
        let ds = PatchDataset::extract(&smooth_sources(), 12, 10, RngSeed(5)).unwrap();
        let cfg = TrainConfig {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e6,
            clip_norm: 1e300,
            ..tiny_cfg()
        };
        let err = train_dae(&ds, &ds, &cfg, &mut Silent).unwrap_err();
        assert!(matches!(err, Error::Diverged(_)), "{err}");
    }

    #[test]
    fn descent_property_with_optimal_autoencoder() {
        // f(x, v) = -sum log p(x) + (rho / 2) ||x - v||^2 decreases along -grad L_map
        let prior = AtomicPrior::two_delta();
        let sigma = 20.0;
        let r = prior.optimal_denoiser(sigma);
        let cfg = TrainConfig {
            sigma_r: sigma,
            rho: 1.0 / (sigma * sigma),
            ..tiny_cfg()
        };
        let d = ConvNet::init_weights(cfg.architecture, RngSeed(10)).unwrap();
        let mut rng = RngSeed(11).rng();
        let mut hits = 0;
        for _ in 0..50 {
            let v = prior
                .sample_image(6, 6, &mut rng)
                .add(&gaussian_image(6, 6, sigma, &mut rng));
            let out = map_loss(&v, &d, &r, &cfg, &Image::zeros(6, 6)).unwrap();
            let step = out.vbar.sub(&out.grad_vbar.scale(1e-3));
            if prior.map_objective(&out.vbar, &v, sigma, cfg.rho) > prior.map_objective(&step, &v, sigma, cfg.rho) {
                hits += 1;
            }
        }
        assert_eq!(hits, 50);
    }
}
