//! Gray-scale raster and blur-kernel containers.
//!
//! Intensities follow the 8-bit convention: clean images live in `[0, 255]`,
//! while intermediate iterates of the solvers may leave that range and are
//! only clipped when a final result is produced.

use crate::error::{Error, Result};

/// Peak intensity of the working scale.
pub const PEAK: f64 = 255.0;

/// A row-major gray-scale image with real-valued pixels.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::dim(format!(
                "image dimensions must be positive, got {height}x{width}"
            )));
        }
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "{height}x{width} image needs {} values, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::arg(format!("non-finite pixel at index {i}")));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Builds an image from nested rows; convenient in tests.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let height = rows.len();
        let width = rows.first().map_or(0, |r| r.as_ref().len());
        if rows.iter().any(|r| r.as_ref().len() != width) {
            return Err(Error::dim("ragged rows"));
        }
        let data = rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect();
        Self::new(height, width, data)
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(height > 0 && width > 0, "image dimensions must be positive");
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Wraps a buffer produced by internal code; the caller guarantees the length.
    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self {
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.shape() == other.shape()
    }

    pub(crate) fn check_same_shape(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::dim(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image::from_raw(
            self.height,
            self.width,
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    /// Element-wise combination. Panics on shape mismatch.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert!(
            self.same_shape(other),
            "shape mismatch {:?} vs {:?}",
            self.shape(),
            other.shape()
        );
        Image::from_raw(
            self.height,
            self.width,
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn add(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Image) -> Image {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Image {
        self.map(|v| v * s)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Image) {
        assert!(self.same_shape(other), "shape mismatch in axpy");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.len() as f64
    }

    /// Population variance.
    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.data.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / self.len() as f64
    }

    pub fn sum_sq(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Euclidean norm of the pixel vector.
    pub fn norm(&self) -> f64 {
        self.sum_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    pub fn clip(&self, lo: f64, hi: f64) -> Image {
        self.map(|v| v.clamp(lo, hi))
    }

    /// Copies the `h x w` window whose top-left corner is `(top, left)`.
    pub fn crop(&self, top: usize, left: usize, h: usize, w: usize) -> Result<Image> {
        if h == 0 || w == 0 || top + h > self.height || left + w > self.width {
            return Err(Error::dim(format!(
                "crop {h}x{w} at ({top},{left}) outside {}x{} image",
                self.height, self.width
            )));
        }
        let mut data = Vec::with_capacity(h * w);
        for r in top..top + h {
            let start = r * self.width + left;
            data.extend_from_slice(&self.data[start..start + w]);
        }
        Ok(Image::from_raw(h, w, data))
    }

    /// Writes `src` into this image with its top-left corner at `(top, left)`.
    pub fn paste(&mut self, src: &Image, top: usize, left: usize) -> Result<()> {
        if top + src.height > self.height || left + src.width > self.width {
            return Err(Error::dim("pasted image does not fit"));
        }
        for r in 0..src.height {
            let dst = (top + r) * self.width + left;
            self.data[dst..dst + src.width]
                .copy_from_slice(&src.data[r * src.width..(r + 1) * src.width]);
        }
        Ok(())
    }

    /// Total variation with forward differences (anisotropic, L1).
    pub fn total_variation(&self) -> f64 {
        let mut tv = 0.0;
        for r in 0..self.height {
            for c in 0..self.width {
                let v = self.get(r, c);
                if c + 1 < self.width {
                    tv += (self.get(r, c + 1) - v).abs();
                }
                if r + 1 < self.height {
                    tv += (self.get(r + 1, c) - v).abs();
                }
            }
        }
        tv
    }

    /// Rotates by `quarter_turns * 90` degrees counter-clockwise, then optionally
    /// mirrors left-right. Covers all eight symmetries of the square.
    pub fn dihedral(&self, quarter_turns: u8, mirror: bool) -> Image {
        let mut out = self.clone();
        for _ in 0..quarter_turns % 4 {
            out = out.rotate90();
        }
        if mirror {
            out = Image::from_fn(out.height, out.width, |r, c| out.get(r, out.width - 1 - c));
        }
        out
    }

    fn rotate90(&self) -> Image {
        let (h, w) = self.shape();
        Image::from_fn(w, h, |r, c| self.get(c, w - 1 - r))
    }
}

/// A small spatially invariant blur kernel.
#[derive(Clone, Debug, PartialEq)]
pub struct BlurKernel {
    kh: usize,
    kw: usize,
    weights: Vec<f64>,
}

impl BlurKernel {
    /// Physical kernel: non-negative weights, normalized to unit sum.
    pub fn new(kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        let mut k = Self::new_unnormalized(kh, kw, weights)?;
        if k.weights.iter().any(|&w| w < 0.0) {
            return Err(Error::arg("blur kernel weights must be non-negative"));
        }
        let total: f64 = k.weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::arg("blur kernel weights sum to zero"));
        }
        k.weights.iter_mut().for_each(|w| *w /= total);
        Ok(k)
    }

    /// Arbitrary real kernel, taken verbatim (no sign check, no normalization).
    pub fn new_unnormalized(kh: usize, kw: usize, weights: Vec<f64>) -> Result<Self> {
        if kh == 0 || kw == 0 {
            return Err(Error::dim("kernel dimensions must be positive"));
        }
        if weights.len() != kh * kw {
            return Err(Error::dim(format!(
                "{kh}x{kw} kernel needs {} weights, got {}",
                kh * kw,
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::arg("non-finite kernel weight"));
        }
        Ok(Self { kh, kw, weights })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let img = Image::from_rows(rows)?;
        Self::new(img.height, img.width, img.data)
    }

    /// The 1x1 kernel `[1]`.
    pub fn identity() -> Self {
        Self {
            kh: 1,
            kw: 1,
            weights: vec![1.0],
        }
    }

    /// Uniform `n x n` box filter.
    pub fn uniform(n: usize) -> Self {
        assert!(n > 0);
        Self {
            kh: n,
            kw: n,
            weights: vec![1.0 / (n * n) as f64; n * n],
        }
    }

    #[inline]
    pub fn kh(&self) -> usize {
        self.kh
    }

    #[inline]
    pub fn kw(&self) -> usize {
        self.kw
    }

    #[inline]
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    #[inline]
    pub fn get(&self, a: usize, b: usize) -> f64 {
        self.weights[a * self.kw + b]
    }

    /// Anchor used by circular convolution: `(kh / 2, kw / 2)`.
    pub fn center(&self) -> (usize, usize) {
        (self.kh / 2, self.kw / 2)
    }

    /// Kernel rotated by 180 degrees.
    pub fn flipped(&self) -> BlurKernel {
        let mut weights = self.weights.clone();
        weights.reverse();
        Self {
            kh: self.kh,
            kw: self.kw,
            weights,
        }
    }

    /// Full autocorrelation `a(d) = sum_p k(p) k(p + d)`, size `(2kh-1) x (2kw-1)`,
    /// zero lag at `(kh-1, kw-1)`. This is the kernel of `K^T K`.
    pub fn autocorrelation(&self) -> BlurKernel {
        let (kh, kw) = (self.kh, self.kw);
        let (ah, aw) = (2 * kh - 1, 2 * kw - 1);
        let mut out = vec![0.0; ah * aw];
        for a in 0..kh {
            for b in 0..kw {
                let ka = self.get(a, b);
                if ka == 0.0 {
                    continue;
                }
                for c in 0..kh {
                    for d in 0..kw {
                        // lag = (c - a, d - b)
                        let r = c + kh - 1 - a;
                        let s = d + kw - 1 - b;
                        out[r * aw + s] += ka * self.get(c, d);
                    }
                }
            }
        }
        Self {
            kh: ah,
            kw: aw,
            weights: out,
        }
    }

    pub fn as_image(&self) -> Image {
        Image::from_raw(self.kh, self.kw, self.weights.clone())
    }

    /// Margins `(top, bottom, left, right)` that grow a valid-convolution output
    /// back to the size of the image it came from.
    pub fn valid_margins(&self) -> (usize, usize, usize, usize) {
        let top = (self.kh - 1) / 2;
        let left = (self.kw - 1) / 2;
        (top, self.kh - 1 - top, left, self.kw - 1 - left)
    }
}
