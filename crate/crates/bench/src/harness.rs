//! Degrade-restore-score sweeps over image and kernel manifests.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use pnp_core::admm::{export_trace, format_g, MaskSolve, TraceEntry, TRACE_HEADER};
use pnp_core::pgm::{quantize, read_kernel, read_pgm};
use pnp_core::{
    degrade_blur, degrade_inpaint, median_fill, psnr, restore_deblur, restore_inpaint, ssim, BlurKernel, Denoiser,
    Error, Image, RestoreConfig, Result, RngSeed, PEAK,
};

use crate::baseline::{score_gd_deblur, ScoreGdConfig};

/// Noise levels of the standard deblurring sweep.
pub const DEFAULT_SIGMAS: [f64; 4] = [2.55, 5.10, 7.65, 10.2];

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Task {
    Deblur,
    /// Inpainting with the given fraction of missing pixels.
    Inpaint { missing: f64 },
}

/// One restoration method under test.
#[derive(Clone)]
pub struct MethodSpec {
    pub name: String,
    pub denoiser: Arc<dyn Denoiser>,
    pub iterations: usize,
    pub sigma_r: f64,
    pub rho: f64,
    pub mask_solve: MaskSolve,
}

impl MethodSpec {
    pub fn new(name: impl Into<String>, denoiser: Arc<dyn Denoiser>, task: Task) -> Self {
        let sigma_r = pnp_core::DEFAULT_SIGMA_R;
        Self {
            name: name.into(),
            denoiser,
            iterations: match task {
                Task::Deblur => pnp_core::DEFAULT_DEBLUR_ITERATIONS,
                Task::Inpaint { .. } => pnp_core::DEFAULT_INPAINT_ITERATIONS,
            },
            sigma_r,
            rho: pnp_core::default_rho(sigma_r),
            mask_solve: MaskSolve::default(),
        }
    }
}

#[derive(Clone)]
pub struct BenchmarkSpec {
    pub dataset: String,
    pub images: Vec<PathBuf>,
    /// Ignored for inpainting.
    pub kernels: Vec<PathBuf>,
    pub sigmas: Vec<f64>,
    pub task: Task,
    pub methods: Vec<MethodSpec>,
    pub seed: u64,
    pub workers: usize,
    /// Measure wall time; off makes every output reproducible byte for byte.
    pub timing: bool,
    /// Allows `sigma = 0` for lossless smoke runs.
    pub allow_zero_sigma: bool,
}

impl BenchmarkSpec {
    pub fn validate(&self) -> Result<()> {
        if self.images.is_empty() {
            return Err(Error::InvalidArgument("image manifest is empty".into()));
        }
        if self.task == Task::Deblur && self.kernels.is_empty() {
            return Err(Error::InvalidArgument("kernel manifest is empty".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidArgument("no methods to run".into()));
        }
        if self.sigmas.is_empty() {
            return Err(Error::InvalidArgument("no noise levels given".into()));
        }
        for &s in &self.sigmas {
            let ok = s > 0.0 || (s == 0.0 && self.allow_zero_sigma);
            if !ok || !s.is_finite() {
                return Err(Error::InvalidArgument(format!("invalid sigma {s}")));
            }
        }
        if let Task::Inpaint { missing } = self.task {
            if !(0.0..1.0).contains(&missing) {
                return Err(Error::InvalidArgument("missing fraction must be in [0, 1)".into()));
            }
        }
        Ok(())
    }
}

/// Seed of one (image, kernel, sigma) cell, independent of the other cells.
pub fn tuple_seed(image: &str, kernel: &str, sigma: f64, global: u64) -> RngSeed {
    let mut h = Sha256::new();
    h.update(image.as_bytes());
    h.update([0]);
    h.update(kernel.as_bytes());
    h.update([0]);
    h.update(sigma.to_bits().to_le_bytes());
    h.update(global.to_le_bytes());
    let digest = h.finalize();
    RngSeed(u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")))
}

/// `sigma` with three significant digits (2.55, 5.10, 10.2).
pub fn sigma_label(sigma: f64) -> String {
    if sigma == 0.0 {
        return "0".into();
    }
    let digits = sigma.abs().log10().floor() as i32;
    let decimals = (2 - digits).max(0) as usize;
    format!("{sigma:.decimals$}")
}

/// Outcome of one restoration.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemRecord {
    pub method: String,
    pub image: String,
    pub kernel: String,
    pub sigma: f64,
    /// PSNR of the degraded input (deblur) or of the median-filled start (inpaint).
    pub psnr_input: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub ms_per_iter: f64,
    pub error: Option<String>,
}

/// Mean scores of one (method, dataset, sigma) cell.
#[derive(Clone, Debug, PartialEq)]
pub struct TableRow {
    pub method: String,
    pub dataset: String,
    pub sigma: f64,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub mean_ms_per_iter: f64,
    pub items: usize,
    pub failures: usize,
}

impl TableRow {
    pub fn is_valid(&self) -> bool {
        self.failures == 0
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ResultTable {
    pub rows: Vec<TableRow>,
    pub items: Vec<ItemRecord>,
}

impl ResultTable {
    pub fn row(&self, method: &str, sigma: f64) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.method == method && r.sigma == sigma)
    }

    /// One line per cell. Wall time covers the iteration loop only.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,dataset,sigma,psnr,ssim,ms_per_iter,items,failures,valid\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{:.4},{:.4},{:.3},{},{},{}",
                r.method,
                r.dataset,
                sigma_label(r.sigma),
                r.mean_psnr,
                r.mean_ssim,
                r.mean_ms_per_iter,
                r.items,
                r.failures,
                r.is_valid()
            );
        }
        s
    }

    pub fn items_csv(&self) -> String {
        let mut s = String::from("method,image,kernel,sigma,psnr_input,psnr,ssim,ms_per_iter,error\n");
        for i in &self.items {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.4},{:.4},{:.4},{:.3},{}",
                i.method,
                i.image,
                i.kernel,
                sigma_label(i.sigma),
                i.psnr_input,
                i.psnr,
                i.ssim,
                i.ms_per_iter,
                i.error.as_deref().unwrap_or("").replace(',', ";")
            );
        }
        s
    }

    /// Methods as rows, noise levels as columns, cells `PSNR / SSIM`.
    pub fn to_text(&self) -> String {
        let mut sigmas: Vec<f64> = Vec::new();
        let mut keys: Vec<(String, String)> = Vec::new();
        for r in &self.rows {
            if !sigmas.contains(&r.sigma) {
                sigmas.push(r.sigma);
            }
            let key = (r.method.clone(), r.dataset.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
        let mut header = vec!["method".to_string(), "dataset".to_string()];
        header.extend(sigmas.iter().map(|s| format!("sigma={}", sigma_label(*s))));
        let mut lines = vec![header];
        for (m, d) in &keys {
            let mut line = vec![m.clone(), d.clone()];
            for s in &sigmas {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| &r.method == m && &r.dataset == d && r.sigma == *s)
                    .map(|r| {
                        let mark = if r.is_valid() { "" } else { " *" };
                        format!("{:.2} / {:.3}{mark}", r.mean_psnr, r.mean_ssim)
                    })
                    .unwrap_or_else(|| "-".into());
                line.push(cell);
            }
            lines.push(line);
        }
        let widths: Vec<usize> = (0..lines[0].len())
            .map(|c| lines.iter().map(|l| l[c].len()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, l) in lines.iter().enumerate() {
            let cells: Vec<String> = l.iter().zip(&widths).map(|(s, w)| format!("{s:<w$}")).collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let _ = writeln!(out, "{}", "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            }
        }
        out.push_str("cells: mean PSNR dB / mean SSIM; * marks cells with failed items\n");
        out
    }
}

struct Loaded {
    images: Vec<(String, Image)>,
    kernels: Vec<(String, BlurKernel)>,
}

/// Items are named by file name so seeds do not depend on where the data lives.
fn display(p: &Path) -> String {
    p.file_name().unwrap_or(p.as_os_str()).to_string_lossy().into_owned()
}

fn load(spec: &BenchmarkSpec) -> Result<Loaded> {
    let images = spec
        .images
        .iter()
        .map(|p| Ok((display(p), read_pgm(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let kernels = match spec.task {
        Task::Deblur => spec
            .kernels
            .iter()
            .map(|p| Ok((display(p), read_kernel(p)?)))
            .collect::<Result<Vec<_>>>()?,
        Task::Inpaint { .. } => vec![(String::new(), BlurKernel::identity())],
    };
    Ok(Loaded { images, kernels })
}

/// Scores are taken on the 8-bit output, as it would be written to disk.
fn score(out: &Image, truth: &Image) -> Result<(f64, f64)> {
    let q = out.map(|v| quantize(v) as f64);
    Ok((psnr(&q, truth, PEAK)?, ssim(&q, truth)?))
}

fn run_item(
    spec: &BenchmarkSpec,
    method: &MethodSpec,
    (image_name, truth): &(String, Image),
    (kernel_name, kernel): &(String, BlurKernel),
    sigma: f64,
) -> ItemRecord {
    let mut rec = ItemRecord {
        method: method.name.clone(),
        image: image_name.clone(),
        kernel: kernel_name.clone(),
        sigma,
        psnr_input: f64::NAN,
        psnr: f64::NAN,
        ssim: f64::NAN,
        ms_per_iter: 0.0,
        error: None,
    };
    let seed = tuple_seed(image_name, kernel_name, sigma, spec.seed);
    let cfg = RestoreConfig {
        sigma_r: method.sigma_r,
        rho: method.rho,
        iterations: method.iterations,
        mask_solve: method.mask_solve,
        record_timing: false,
        ..RestoreConfig::deblur(method.denoiser.as_ref())
    };
    let result = (|| -> Result<(f64, Image, Image, f64)> {
        match spec.task {
            Task::Deblur => {
                let y = degrade_blur(truth, kernel, sigma, seed)?;
                let (top, _, left, _) = kernel.valid_margins();
                let t = truth.crop(top, left, y.height(), y.width())?;
                let start = Instant::now();
                let out = restore_deblur(&y, kernel, sigma, &cfg)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                Ok((psnr(&y, &t, PEAK)?, out.image, t, ms))
            }
            Task::Inpaint { missing } => {
                let (y, mask) = degrade_inpaint(truth, missing, sigma, seed)?;
                let filled = median_fill(&y, &mask, 3, y.height().max(y.width()))?;
                let start = Instant::now();
                let out = restore_inpaint(&y, &mask, sigma, &cfg)?;
                let ms = start.elapsed().as_secs_f64() * 1e3;
                Ok((psnr(&filled.clip(0.0, PEAK), truth, PEAK)?, out.image, truth.clone(), ms))
            }
        }
    })();
    match result.and_then(|(p_in, out, t, ms)| score(&out, &t).map(|s| (p_in, s, ms))) {
        Ok((p_in, (p, s), ms)) => {
            rec.psnr_input = p_in;
            rec.psnr = p;
            rec.ssim = s;
            if spec.timing {
                rec.ms_per_iter = ms / method.iterations as f64;
            }
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// Runs every (method, sigma, image, kernel) combination. Unreadable inputs
/// abort; failures of individual restorations are recorded and the cell
/// is marked invalid.
pub fn run_benchmark(spec: &BenchmarkSpec) -> Result<ResultTable> {
    spec.validate()?;
    let loaded = load(spec)?;
    let mut jobs = Vec::new();
    for (mi, _) in spec.methods.iter().enumerate() {
        for &sigma in &spec.sigmas {
            for img in &loaded.images {
                for ker in &loaded.kernels {
                    jobs.push((mi, sigma, img, ker));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let items: Vec<ItemRecord> = pool.install(|| {
        jobs.par_iter()
            .map(|&(mi, sigma, img, ker)| run_item(spec, &spec.methods[mi], img, ker, sigma))
            .collect()
    });
    let mut rows = Vec::new();
    for m in &spec.methods {
        for &sigma in &spec.sigmas {
            let cell: Vec<&ItemRecord> = items.iter().filter(|i| i.method == m.name && i.sigma == sigma).collect();
            let ok: Vec<&&ItemRecord> = cell.iter().filter(|i| i.error.is_none()).collect();
            let mean = |f: &dyn Fn(&ItemRecord) -> f64| {
                if ok.is_empty() {
                    f64::NAN
                } else {
                    ok.iter().map(|i| f(i)).sum::<f64>() / ok.len() as f64
                }
            };
            rows.push(TableRow {
                method: m.name.clone(),
                dataset: spec.dataset.clone(),
                sigma,
                mean_psnr: mean(&|i| i.psnr),
                mean_ssim: mean(&|i| i.ssim),
                mean_ms_per_iter: mean(&|i| i.ms_per_iter),
                items: cell.len(),
                failures: cell.len() - ok.len(),
            });
        }
    }
    Ok(ResultTable { rows, items })
}

/// A method in a convergence comparison.
#[derive(Clone, Copy)]
pub enum ConvergenceMethod<'a> {
    Admm(RestoreConfig<'a>),
    ScoreGd(ScoreGdConfig<'a>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRun {
    pub name: String,
    pub trace: Vec<TraceEntry>,
    pub final_psnr: f64,
}

/// Degrades `truth` once and runs every method on the same observation,
/// tracking PSNR on the valid area by iteration and by wall time.
pub fn compare_convergence(
    truth: &Image,
    k: &BlurKernel,
    sigma: f64,
    seed: RngSeed,
    methods: &[(String, ConvergenceMethod<'_>)],
) -> Result<Vec<ConvergenceRun>> {
    if methods.is_empty() {
        return Err(Error::InvalidArgument("at least one method is required".into()));
    }
    let y = degrade_blur(truth, k, sigma, seed)?;
    let (top, _, left, _) = k.valid_margins();
    let t = truth.crop(top, left, y.height(), y.width())?;
    methods
        .iter()
        .map(|(name, m)| {
            let (image, trace) = match m {
                ConvergenceMethod::Admm(cfg) => {
                    let cfg = RestoreConfig {
                        track_truth: Some(&t),
                        ..*cfg
                    };
                    let out = restore_deblur(&y, k, sigma, &cfg)?;
                    (out.image, out.state.trace)
                }
                ConvergenceMethod::ScoreGd(cfg) => {
                    let cfg = ScoreGdConfig {
                        track_truth: Some(&t),
                        ..*cfg
                    };
                    let out = score_gd_deblur(&y, k, sigma, &cfg)?;
                    (out.image, out.trace)
                }
            };
            Ok(ConvergenceRun {
                name: name.clone(),
                trace,
                final_psnr: psnr(&image, &t, PEAK)?,
            })
        })
        .collect()
}

/// First iteration whose PSNR reaches `threshold`.
pub fn iterations_to_reach(trace: &[TraceEntry], threshold: f64) -> Option<usize> {
    trace.iter().find(|e| e.psnr.is_some_and(|p| p >= threshold)).map(|e| e.iter)
}

/// Single run: plain trace CSV. Several: the same columns led by `method`.
pub fn convergence_csv(runs: &[ConvergenceRun]) -> String {
    if let [only] = runs {
        return export_trace(&only.trace);
    }
    let mut s = format!("method,{TRACE_HEADER}\n");
    for r in runs {
        for e in &r.trace {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.name,
                e.iter,
                format_g(e.primal_residual),
                e.psnr.map(format_g).unwrap_or_default(),
                format_g(e.wall_ms)
            );
        }
    }
    s
}
