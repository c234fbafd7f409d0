use proptest::prelude::*;

use pnp_core::admm::{export_trace, parse_trace, TraceEntry};
use pnp_core::pgm::{decode_pgm, encode_pgm, encode_pgm_plain, format_kernel, parse_kernel};
use pnp_core::rng::gaussian_image;
use pnp_core::solver::{build_plan, data_gradient, solve_data_direct, solve_data_mask_exact};
use pnp_core::{
    degrade_blur, degrade_inpaint, median_fill, psnr, ssim, BlurKernel, Image, IdentityDenoiser, RestoreConfig,
    RngSeed, PEAK,
};

fn byte_image(h: usize, w: usize, seed: u64) -> Image {
    let noise = gaussian_image(h, w, 60.0, &mut RngSeed(seed).rng());
    noise.map(|v| (v + 128.0).round().clamp(0.0, 255.0))
}

fn positive_kernel(kh: usize, kw: usize, seed: u64) -> BlurKernel {
    let g = gaussian_image(kh, kw, 1.0, &mut RngSeed(seed).rng());
    BlurKernel::new(kh, kw, g.data().iter().map(|v| v.abs() + 0.05).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pgm_round_trips_in_both_encodings(h in 1usize..20, w in 1usize..20, seed in any::<u64>()) {
        let img = byte_image(h, w, seed);
        prop_assert_eq!(decode_pgm(&encode_pgm(&img)).unwrap(), img.clone());
        prop_assert_eq!(decode_pgm(&encode_pgm_plain(&img)).unwrap(), img);
    }

    #[test]
    fn kernel_text_round_trips(kh in 1usize..8, kw in 1usize..8, seed in any::<u64>()) {
        let k = positive_kernel(kh, kw, seed);
        let back = parse_kernel(&format_kernel(&k)).unwrap();
        prop_assert_eq!((back.kh(), back.kw()), (kh, kw));
        for (a, b) in back.weights().iter().zip(k.weights()) {
            prop_assert!((a - b).abs() <= 1e-15 * b.abs().max(1.0));
        }
    }

    #[test]
    fn fft_solution_matches_dense_and_zeroes_gradient(
        h in 4usize..12, w in 4usize..12, kh in 1usize..4, kw in 1usize..4,
        sigma in 0.3f64..30.0, log_rho in -4.0f64..1.0, seed in any::<u64>()
    ) {
        let k = positive_kernel(kh, kw, seed);
        let rho = 10f64.powf(log_rho);
        let mut rng = RngSeed(seed).derive(1).rng();
        let y = gaussian_image(h, w, 40.0, &mut rng);
        let z = gaussian_image(h, w, 40.0, &mut rng);
        let l = gaussian_image(h, w, 4.0, &mut rng);
        let plan = build_plan(&k, h, w, sigma, rho).unwrap();
        let fast = plan.solve(&y, &z, &l).unwrap();
        let dense = solve_data_direct(&k, &y, &z, &l, sigma, rho).unwrap();
        prop_assert!(fast.sub(&dense).max_abs() <= 1e-8 * dense.max_abs().max(1.0));
        let g = data_gradient(&k, &y, &fast, &z, &l, sigma, rho);
        prop_assert!(g.max_abs() < 1e-6);
    }

    #[test]
    fn blur_output_has_valid_size(h in 8usize..24, w in 8usize..24, kh in 1usize..6, kw in 1usize..6, seed in any::<u64>()) {
        let x = byte_image(h, w, seed);
        let k = positive_kernel(kh, kw, seed ^ 1);
        let y = degrade_blur(&x, &k, 2.0, RngSeed(seed)).unwrap();
        prop_assert_eq!(y.shape(), (h - kh + 1, w - kw + 1));
        prop_assert_eq!(y, degrade_blur(&x, &k, 2.0, RngSeed(seed)).unwrap());
    }

    #[test]
    fn inpainting_drops_exact_count(h in 2usize..20, w in 2usize..20, missing in 0.0f64..0.95, seed in any::<u64>()) {
        let x = byte_image(h, w, seed);
        let (y, mask) = degrade_inpaint(&x, missing, 0.0, RngSeed(seed)).unwrap();
        let dropped = mask.data().iter().filter(|&&m| m == 0.0).count();
        prop_assert_eq!(dropped, (missing * (h * w) as f64).round() as usize);
        for ((&yi, &xi), &m) in y.data().iter().zip(x.data()).zip(mask.data()) {
            prop_assert_eq!(yi, if m == 1.0 { xi } else { 0.0 });
        }
    }

    #[test]
    fn median_fill_keeps_observed_pixels_and_fills_the_rest(
        h in 3usize..16, w in 3usize..16, missing in 0.0f64..0.9, seed in any::<u64>()
    ) {
        let x = byte_image(h, w, seed);
        let (y, mask) = degrade_inpaint(&x, missing, 0.0, RngSeed(seed)).unwrap();
        prop_assume!(mask.sum() > 0.0);
        let filled = median_fill(&y, &mask, 3, h.max(w)).unwrap();
        let (lo, hi) = (x.data().iter().copied().fold(f64::INFINITY, f64::min), x.data().iter().copied().fold(0.0, f64::max));
        for ((&f, &yi), &m) in filled.data().iter().zip(y.data()).zip(mask.data()) {
            if m == 1.0 {
                prop_assert_eq!(f, yi);
            } else {
                prop_assert!(f >= lo && f <= hi);
            }
        }
    }

    #[test]
    fn exact_mask_solve_is_pointwise_average(h in 2usize..10, w in 2usize..10, sigma in 0.5f64..20.0, seed in any::<u64>()) {
        let mut rng = RngSeed(seed).rng();
        let y = gaussian_image(h, w, 50.0, &mut rng);
        let z = gaussian_image(h, w, 50.0, &mut rng);
        let l = gaussian_image(h, w, 5.0, &mut rng);
        let mask = Image::from_fn(h, w, |r, c| ((r + c) % 2) as f64);
        let rho = 1.0 / 49.0;
        let x = solve_data_mask_exact(&y, &mask, sigma, rho, &z, &l).unwrap();
        let s = sigma * sigma * rho;
        for i in 0..x.len() {
            let prox = z.data()[i] - l.data()[i];
            let expect = if mask.data()[i] == 1.0 { (y.data()[i] + s * prox) / (1.0 + s) } else { prox };
            prop_assert!((x.data()[i] - expect).abs() < 1e-9);
        }
    }

    #[test]
    fn metrics_are_symmetric_and_bounded(h in 8usize..20, w in 8usize..20, seed in any::<u64>()) {
        let a = byte_image(h, w, seed);
        let b = byte_image(h, w, seed ^ 5);
        prop_assert_eq!(psnr(&a, &b, PEAK).unwrap(), psnr(&b, &a, PEAK).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(s <= 1.0 + 1e-12 && s >= -1.0);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!(psnr(&a, &a, PEAK).unwrap().is_infinite());
    }

    #[test]
    fn trace_csv_round_trips(rows in proptest::collection::vec((0.0f64..1e4, proptest::option::of(0.0f64..60.0)), 1..20)) {
        let trace: Vec<TraceEntry> = rows
            .iter()
            .enumerate()
            .map(|(i, &(r, p))| TraceEntry { iter: i + 1, primal_residual: r, psnr: p, wall_ms: 0.0 })
            .collect();
        let back = parse_trace(&export_trace(&trace)).unwrap();
        prop_assert_eq!(back.len(), trace.len());
        for (a, b) in back.iter().zip(&trace) {
            prop_assert_eq!(a.iter, b.iter);
            prop_assert!((a.primal_residual - b.primal_residual).abs() <= 1e-5 * b.primal_residual.max(1e-3));
            prop_assert_eq!(a.psnr.is_some(), b.psnr.is_some());
        }
    }

    #[test]
    fn dihedral_transforms_invert(h in 1usize..10, w in 1usize..10, turns in 0u8..4, mirror in any::<bool>(), seed in any::<u64>()) {
        let img = byte_image(h, w, seed);
        let t = img.dihedral(turns, mirror);
        prop_assert_eq!(t.len(), img.len());
        let mut sorted_a = t.data().to_vec();
        let mut sorted_b = img.data().to_vec();
        sorted_a.sort_by(f64::total_cmp);
        sorted_b.sort_by(f64::total_cmp);
        prop_assert_eq!(sorted_a, sorted_b);
        let four = (0..4).fold(img.clone(), |acc, _| acc.dihedral(1, false));
        prop_assert_eq!(four, img);
    }
}

#[test]
fn identity_restoration_is_a_fixed_point() {
    let y = byte_image(15, 22, 3);
    let cfg = RestoreConfig {
        iterations: 5,
        record_timing: false,
        ..RestoreConfig::deblur(&IdentityDenoiser)
    };
    let out = pnp_core::restore_deblur(&y, &BlurKernel::identity(), 0.0, &cfg).unwrap();
    assert!(out.image.sub(&y).max_abs() < 1e-6);
    assert_eq!(out.trace().len(), 5);
}
