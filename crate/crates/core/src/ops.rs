//! Spatial convolutions and padding.

use crate::error::{Error, Result};
use crate::image::{BlurKernel, Image};

/// Valid-area 2-D filtering. With `flip = false` this is a correlation with
/// `k`; with `flip = true` the kernel is rotated 180 degrees first, which is a
/// true convolution. Output is `(H - kh + 1) x (W - kw + 1)`.
pub fn conv2d_valid(img: &Image, k: &BlurKernel, flip: bool) -> Result<Image> {
    let (h, w) = img.shape();
    let (kh, kw) = (k.kh(), k.kw());
    if h < kh || w < kw {
        return Err(Error::dim(format!(
            "{kh}x{kw} kernel larger than {h}x{w} image"
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let taps: Vec<f64> = if flip {
        k.flipped().weights().to_vec()
    } else {
        k.weights().to_vec()
    };
    let src = img.data();
    let mut out = vec![0.0; oh * ow];
    for a in 0..kh {
        for b in 0..kw {
            let t = taps[a * kw + b];
            if t == 0.0 {
                continue;
            }
            for r in 0..oh {
                let row = &src[(r + a) * w + b..(r + a) * w + b + ow];
                let dst = &mut out[r * ow..(r + 1) * ow];
                for (d, s) in dst.iter_mut().zip(row) {
                    *d += t * s;
                }
            }
        }
    }
    Ok(Image::from_raw(oh, ow, out))
}

/// Circular convolution with the kernel anchored at `k.center()`, so the 1x1
/// identity kernel is the identity map:
/// `out(p) = sum_a k(a) img((p - a + center) mod size)`.
pub fn conv2d_circular(img: &Image, k: &BlurKernel) -> Image {
    let (h, w) = img.shape();
    let (ch, cw) = k.center();
    let src = img.data();
    let mut out = vec![0.0; h * w];
    for a in 0..k.kh() {
        for b in 0..k.kw() {
            let t = k.get(a, b);
            if t == 0.0 {
                continue;
            }
            let dr = (ch as isize - a as isize).rem_euclid(h as isize) as usize;
            let dc = (cw as isize - b as isize).rem_euclid(w as isize) as usize;
            for r in 0..h {
                let sr = (r + dr) % h;
                let srow = &src[sr * w..(sr + 1) * w];
                let drow = &mut out[r * w..(r + 1) * w];
                // split the row at the wrap point
                let split = w - dc;
                for (d, s) in drow[..split].iter_mut().zip(&srow[dc..]) {
                    *d += t * s;
                }
                for (d, s) in drow[split..].iter_mut().zip(&srow[..dc]) {
                    *d += t * s;
                }
            }
        }
    }
    Image::from_raw(h, w, out)
}

/// Circular correlation with `k` (the adjoint of [`conv2d_circular`]).
pub fn correlate2d_circular(img: &Image, k: &BlurKernel) -> Image {
    // adjoint of convolution about center c is convolution with the flipped
    // kernel about the mirrored center
    let (h, w) = img.shape();
    let (ch, cw) = k.center();
    let mut out = Image::zeros(h, w);
    for a in 0..k.kh() {
        for b in 0..k.kw() {
            let t = k.get(a, b);
            if t == 0.0 {
                continue;
            }
            let dr = (a as isize - ch as isize).rem_euclid(h as isize) as usize;
            let dc = (b as isize - cw as isize).rem_euclid(w as isize) as usize;
            for r in 0..h {
                for c in 0..w {
                    let v = out.get(r, c) + t * img.get((r + dr) % h, (c + dc) % w);
                    out.set(r, c, v);
                }
            }
        }
    }
    out
}

/// Grows the image by the given margins, copying the nearest edge pixel.
pub fn pad_replicate(img: &Image, top: usize, bottom: usize, left: usize, right: usize) -> Image {
    let (h, w) = img.shape();
    let (nh, nw) = (h + top + bottom, w + left + right);
    Image::from_fn(nh, nw, |r, c| {
        let sr = r.saturating_sub(top).min(h - 1);
        let sc = c.saturating_sub(left).min(w - 1);
        img.get(sr, sc)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fourier::fft_convolve_circular;
    use proptest::prelude::*;

    fn brute_valid(img: &Image, k: &BlurKernel, flip: bool) -> Image {
        let (h, w) = img.shape();
        let (kh, kw) = (k.kh(), k.kw());
        Image::from_fn(h - kh + 1, w - kw + 1, |r, c| {
            let mut acc = 0.0;
            for a in 0..kh {
                for b in 0..kw {
                    let t = if flip {
                        k.get(kh - 1 - a, kw - 1 - b)
                    } else {
                        k.get(a, b)
                    };
                    acc += t * img.get(r + a, c + b);
                }
            }
            acc
        })
    }

    fn brute_circular(img: &Image, k: &BlurKernel) -> Image {
        let (h, w) = (img.height() as i64, img.width() as i64);
        let (ch, cw) = k.center();
        Image::from_fn(img.height(), img.width(), |r, c| {
            let mut acc = 0.0;
            for a in 0..k.kh() {
                for b in 0..k.kw() {
                    let sr = (r as i64 - a as i64 + ch as i64).rem_euclid(h);
                    let sc = (c as i64 - b as i64 + cw as i64).rem_euclid(w);
                    acc += k.get(a, b) * img.get(sr as usize, sc as usize);
                }
            }
            acc
        })
    }

    fn lcg_image(h: usize, w: usize, mut s: u64) -> Image {
        Image::from_fn(h, w, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 * 255.0
        })
    }

    fn lcg_kernel(kh: usize, kw: usize, mut s: u64) -> BlurKernel {
        let w = (0..kh * kw)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                0.05 + (s >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        BlurKernel::new(kh, kw, w).unwrap()
    }

    #[test]
    fn constant_image_is_fixed_point_of_normalized_kernel() {
        let out = conv2d_valid(&Image::filled(3, 3, 1.0), &BlurKernel::uniform(2), false).unwrap();
        assert_eq!(out.shape(), (2, 2));
        assert!(out.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
    }

    #[test]
    fn identity_kernel_valid() {
        let img = Image::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(conv2d_valid(&img, &BlurKernel::identity(), true).unwrap(), img);
    }

    #[test]
    fn flipped_valid_matches_quadruple_loop() {
        let img = Image::from_rows(&[[1.0, 2.0, 3.0], [4.0, 5.0, 6.0], [7.0, 8.0, 9.0]]).unwrap();
        let k = BlurKernel::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap();
        let got = conv2d_valid(&img, &k, true).unwrap();
        let expect = brute_valid(&img, &k, true);
        // flipped anti-diagonal is itself: 0.5*(2+4), 0.5*(3+5), ...
        assert_eq!(expect, Image::from_rows(&[[3.0, 4.0], [6.0, 7.0]]).unwrap());
        for (a, b) in got.data().iter().zip(expect.data()) {
            assert!((a - b).abs() < 1e-14);
        }
        let k2 = BlurKernel::from_rows(&[[1.0, 2.0], [0.0, 5.0]]).unwrap();
        for flip in [false, true] {
            let got = conv2d_valid(&img, &k2, flip).unwrap();
            assert!(got.sub(&brute_valid(&img, &k2, flip)).max_abs() < 1e-14);
        }
    }

    #[test]
    fn valid_rejects_oversized_kernel() {
        assert!(conv2d_valid(&Image::zeros(2, 5), &BlurKernel::uniform(3), true).is_err());
    }

    #[test]
    fn circular_identity_and_impulse_wrap() {
        let img = lcg_image(5, 4, 1);
        assert_eq!(conv2d_circular(&img, &BlurKernel::identity()), img);

        let mut impulse = Image::zeros(4, 4);
        impulse.set(0, 0, 1.0);
        let out = conv2d_circular(&impulse, &BlurKernel::uniform(3));
        let oracle = brute_circular(&impulse, &BlurKernel::uniform(3));
        assert!(out.sub(&oracle).max_abs() < 1e-15);
        // mass wrapped onto the opposite edges
        assert!((out.get(3, 3) - 1.0 / 9.0).abs() < 1e-15);
        assert!((out.get(0, 3) - 1.0 / 9.0).abs() < 1e-15);
        assert!((out.get(3, 0) - 1.0 / 9.0).abs() < 1e-15);
        assert_eq!(out.get(2, 2), 0.0);
        assert!((out.sum() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn correlation_is_adjoint_of_convolution() {
        let x = lcg_image(7, 6, 2);
        let y = lcg_image(7, 6, 3);
        let k = lcg_kernel(3, 4, 9);
        let lhs: f64 = conv2d_circular(&x, &k).zip_map(&y, |a, b| a * b).sum();
        let rhs: f64 = x.zip_map(&correlate2d_circular(&y, &k), |a, b| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-8 * lhs.abs());
    }

    #[test]
    fn pad_cases() {
        let img = Image::from_rows(&[[1.0, 2.0], [3.0, 4.0]]).unwrap();
        assert_eq!(pad_replicate(&img, 0, 0, 0, 0), img);
        let single = Image::filled(1, 1, 5.0);
        assert_eq!(pad_replicate(&single, 1, 1, 1, 1), Image::filled(3, 3, 5.0));

        let padded = pad_replicate(&img, 1, 1, 1, 1);
        let oracle = Image::from_fn(4, 4, |r, c| {
            let sr = (r as i64 - 1).clamp(0, 1) as usize;
            let sc = (c as i64 - 1).clamp(0, 1) as usize;
            img.get(sr, sc)
        });
        assert_eq!(padded, oracle);
        assert_eq!((padded.get(0, 0), padded.get(0, 3), padded.get(3, 0), padded.get(3, 3)), (1.0, 2.0, 3.0, 4.0));
    }

    proptest! {
        #[test]
        fn circular_matches_fft_and_brute_force(
            h in 1usize..=32, w in 1usize..=32, kh in 1usize..6, kw in 1usize..6, seed in any::<u64>()
        ) {
            let img = lcg_image(h, w, seed);
            let k = lcg_kernel(kh, kw, seed.rotate_left(17));
            let direct = conv2d_circular(&img, &k);
            let fft = fft_convolve_circular(&img, &k).unwrap();
            prop_assert!(direct.sub(&fft).max_abs() < 1e-8);
            if h * w <= 256 {
                prop_assert!(direct.sub(&brute_circular(&img, &k)).max_abs() < 1e-10);
            }
        }

        #[test]
        fn valid_equals_circular_without_wrap(
            h in 6usize..20, w in 6usize..20, kh in 1usize..6, kw in 1usize..6, seed in any::<u64>()
        ) {
            let img = lcg_image(h, w, seed);
            let k = lcg_kernel(kh, kw, seed ^ 77);
            let valid = conv2d_valid(&img, &k, true).unwrap();
            let circ = conv2d_circular(&img, &k);
            let (top, _, left, _) = k.valid_margins();
            let region = circ.crop(top, left, valid.height(), valid.width()).unwrap();
            prop_assert!(region.sub(&valid).max_abs() < 1e-10);
        }
    }
}
