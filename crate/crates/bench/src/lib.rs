//! Benchmark harness for `pnp-core`: synthetic test data, degradation
//! sweeps with PSNR/SSIM tables, and convergence comparisons against a
//! gradient-descent baseline.

pub mod baseline;
pub mod harness;
pub mod synth;

pub use baseline::{score_gd_deblur, ScoreGdConfig, ScoreGdRun};
pub use harness::{
    compare_convergence, convergence_csv, iterations_to_reach, run_benchmark, sigma_label, tuple_seed,
    BenchmarkSpec, ConvergenceMethod, ConvergenceRun, ItemRecord, MethodSpec, ResultTable, TableRow, Task,
    DEFAULT_SIGMAS,
};
pub use synth::{dead_leaves, motion_kernel, motion_kernel_set};
