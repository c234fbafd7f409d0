//! 3x3 convolution kernels with replicate padding, lowered to GEMM.

/// Dense matrix product `C = A * B + beta * C` where `A` is `m x k` and `B`
/// is `k x n`, each optionally stored transposed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths were checked against the strides above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

#[inline]
fn clamp_offset(i: usize, d: usize, len: usize) -> usize {
    // d in 0..3 stands for offsets -1, 0, +1
    (i + d).saturating_sub(1).min(len - 1)
}

/// Unfolds `input` (`channels x h x w`) into a `(channels * 9) x (h * w)`
/// patch matrix with edge replication.
pub(crate) fn im2col(input: &[f64], channels: usize, h: usize, w: usize, cols: &mut Vec<f64>) {
    let hw = h * w;
    cols.clear();
    cols.resize(channels * 9 * hw, 0.0);
    for ch in 0..channels {
        let plane = &input[ch * hw..(ch + 1) * hw];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = &mut cols[(ch * 9 + dy * 3 + dx) * hw..(ch * 9 + dy * 3 + dx + 1) * hw];
                for y in 0..h {
                    let sy = clamp_offset(y, dy, h);
                    let src = &plane[sy * w..(sy + 1) * w];
                    let dst = &mut row[y * w..(y + 1) * w];
                    match dx {
                        0 => {
                            dst[0] = src[0];
                            dst[1..].copy_from_slice(&src[..w - 1]);
                        }
                        1 => dst.copy_from_slice(src),
                        _ => {
                            dst[..w - 1].copy_from_slice(&src[1..]);
                            dst[w - 1] = src[w - 1];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters patch-matrix gradients back onto the input,
/// accumulating where replicated edge pixels were read more than once.
pub(crate) fn col2im(cols: &[f64], channels: usize, h: usize, w: usize) -> Vec<f64> {
    let hw = h * w;
    let mut out = vec![0.0; channels * hw];
    for ch in 0..channels {
        let plane = &mut out[ch * hw..(ch + 1) * hw];
        for dy in 0..3 {
            for dx in 0..3 {
                let row = &cols[(ch * 9 + dy * 3 + dx) * hw..(ch * 9 + dy * 3 + dx + 1) * hw];
                for y in 0..h {
                    let sy = clamp_offset(y, dy, h);
                    let src = &row[y * w..(y + 1) * w];
                    let dst = &mut plane[sy * w..(sy + 1) * w];
                    match dx {
                        0 => {
                            dst[0] += src[0];
                            for (d, s) in dst[..w - 1].iter_mut().zip(&src[1..]) {
                                *d += s;
                            }
                        }
                        1 => {
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += s;
                            }
                        }
                        _ => {
                            for (d, s) in dst[1..].iter_mut().zip(&src[..w - 1]) {
                                *d += s;
                            }
                            dst[w - 1] += src[w - 1];
                        }
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn im2col_reads_clamped_neighbours() {
        // 1 channel, 2x3
        let input = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let mut cols = Vec::new();
        im2col(&input, 1, 2, 3, &mut cols);
        // offset (-1, -1) for pixel (1, 1) reads (0, 0)
        assert_eq!(cols[0 * 6 + 4], 1.0);
        // offset (+1, +1) for pixel (0, 2) reads clamped (1, 2)
        assert_eq!(cols[8 * 6 + 2], 6.0);
        // centre tap is the input
        assert_eq!(&cols[4 * 6..5 * 6], &input);
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let (c, h, w) = (2, 4, 5);
        let x: Vec<f64> = (0..c * h * w).map(|i| ((i * 7919) % 31) as f64 - 15.0).collect();
        let g: Vec<f64> = (0..c * 9 * h * w).map(|i| ((i * 104729) % 17) as f64 - 8.0).collect();
        let mut cols = Vec::new();
        im2col(&x, c, h, w, &mut cols);
        let lhs: f64 = cols.iter().zip(&g).map(|(a, b)| a * b).sum();
        let back = col2im(&g, c, h, w);
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
    }

    #[test]
    fn gemm_handles_transposes() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [5.0, 6.0, 7.0, 8.0];
        let mut c = [0.0; 4];
        gemm(2, 2, 2, &a, false, &b, false, 0.0, &mut c);
        assert_eq!(c, [19.0, 22.0, 43.0, 50.0]);
        gemm(2, 2, 2, &a, true, &b, false, 0.0, &mut c);
        assert_eq!(c, [26.0, 30.0, 38.0, 44.0]);
        gemm(2, 2, 2, &a, false, &b, true, 1.0, &mut c);
        assert_eq!(c, [26.0 + 17.0, 30.0 + 23.0, 38.0 + 39.0, 44.0 + 53.0]);
    }
}
