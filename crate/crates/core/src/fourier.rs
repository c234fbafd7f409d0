//! Two-dimensional discrete Fourier transforms.
//!
//! Forward transforms are unnormalized; the inverse divides by `H * W`.

use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::Result;
use crate::image::{BlurKernel, Image};

/// Complex 2-D spectrum, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPlane {
    height: usize,
    width: usize,
    data: Vec<Complex64>,
}

impl ComplexPlane {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![Complex64::new(0.0, 0.0); height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, u: usize, v: usize) -> Complex64 {
        self.data[u * self.width + v]
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn real(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn imag(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.im).collect()
    }

    /// Sum of squared magnitudes.
    pub fn energy(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Cached row and column plans for one image size.
#[derive(Clone)]
pub struct Fft2 {
    height: usize,
    width: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Fft2({}x{})", self.height, self.width)
    }
}

impl Fft2 {
    pub fn new(height: usize, width: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            height,
            width,
            row_fwd: planner.plan_fft_forward(width),
            row_inv: planner.plan_fft_inverse(width),
            col_fwd: planner.plan_fft_forward(height),
            col_inv: planner.plan_fft_inverse(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn forward(&self, img: &Image) -> ComplexPlane {
        assert_eq!(img.shape(), self.shape(), "image does not match FFT plan");
        let mut plane = ComplexPlane {
            height: self.height,
            width: self.width,
            data: img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        };
        self.transform(&mut plane, true);
        plane
    }

    /// Real part of the normalized inverse transform.
    pub fn inverse(&self, plane: &ComplexPlane) -> Image {
        assert_eq!((plane.height, plane.width), self.shape());
        let mut work = plane.clone();
        self.transform(&mut work, false);
        let scale = 1.0 / (self.height * self.width) as f64;
        Image::from_raw(
            self.height,
            self.width,
            work.data.iter().map(|c| c.re * scale).collect(),
        )
    }

    fn transform(&self, plane: &mut ComplexPlane, forward: bool) {
        let (h, w) = (self.height, self.width);
        let (row, col) = if forward {
            (&self.row_fwd, &self.col_fwd)
        } else {
            (&self.row_inv, &self.col_inv)
        };
        row.process(&mut plane.data);
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for c in 0..w {
            for r in 0..h {
                column[r] = plane.data[r * w + c];
            }
            col.process(&mut column);
            for r in 0..h {
                plane.data[r * w + c] = column[r];
            }
        }
    }

    /// Spectrum of a kernel embedded circularly with its anchor at the origin.
    pub fn kernel_spectrum(&self, k: &BlurKernel, anchor: (usize, usize)) -> ComplexPlane {
        self.forward(&embed_kernel(k, anchor, self.height, self.width))
    }
}

/// Places `k` on an `h x w` torus so that tap `anchor` sits at pixel (0, 0).
/// Taps that wrap onto the same pixel accumulate.
pub fn embed_kernel(k: &BlurKernel, anchor: (usize, usize), h: usize, w: usize) -> Image {
    let mut out = Image::zeros(h, w);
    for a in 0..k.kh() {
        for b in 0..k.kw() {
            let r = (a as isize - anchor.0 as isize).rem_euclid(h as isize) as usize;
            let c = (b as isize - anchor.1 as isize).rem_euclid(w as isize) as usize;
            let v = out.get(r, c) + k.get(a, b);
            out.set(r, c, v);
        }
    }
    out
}

pub fn dft2(img: &Image) -> ComplexPlane {
    Fft2::new(img.height(), img.width()).forward(img)
}

pub fn idft2(plane: &ComplexPlane) -> Image {
    Fft2::new(plane.height, plane.width).inverse(plane)
}

/// Circular convolution computed through the frequency domain.
pub fn fft_convolve_circular(img: &Image, k: &BlurKernel) -> Result<Image> {
    let fft = Fft2::new(img.height(), img.width());
    let mut x = fft.forward(img);
    let kh = fft.kernel_spectrum(k, k.center());
    for (a, b) in x.data.iter_mut().zip(kh.data.iter()) {
        *a *= *b;
    }
    Ok(fft.inverse(&x))
}
