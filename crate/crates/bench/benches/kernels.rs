use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use pnp_bench::{dead_leaves, motion_kernel};
use pnp_core::solver::build_plan;
use pnp_core::{conv2d_valid, ssim, Architecture, ConvNet, Image, RngSeed};

fn solver(c: &mut Criterion) {
    let k = motion_kernel(15, RngSeed(1)).unwrap();
    let img = dead_leaves(128, 128, RngSeed(2));
    let plan = build_plan(&k, 128, 128, 2.55, 1.0 / 49.0).unwrap();
    let zeros = Image::zeros(128, 128);
    c.bench_function("fft_solve_128", |b| b.iter(|| plan.solve(black_box(&img), &img, &zeros).unwrap()));
    c.bench_function("build_plan_128", |b| {
        b.iter(|| build_plan(black_box(&k), 128, 128, 2.55, 1.0 / 49.0).unwrap())
    });
    c.bench_function("conv_valid_128_k15", |b| b.iter(|| conv2d_valid(black_box(&img), &k, true).unwrap()));
}

fn network(c: &mut Criterion) {
    let net = ConvNet::init_weights(Architecture::DESK, RngSeed(3)).unwrap();
    let patch = dead_leaves(40, 40, RngSeed(4));
    c.bench_function("desk_forward_40", |b| b.iter(|| net.forward(black_box(&patch))));
    c.bench_function("desk_backward_40", |b| b.iter(|| net.backward(black_box(&patch), &patch).unwrap()));
}

fn metrics(c: &mut Criterion) {
    let a = dead_leaves(128, 128, RngSeed(5));
    let b = dead_leaves(128, 128, RngSeed(6));
    c.bench_function("ssim_128", |bench| bench.iter(|| ssim(black_box(&a), &b).unwrap()));
}

criterion_group!(benches, solver, network, metrics);
criterion_main!(benches);
