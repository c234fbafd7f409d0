//! The denoiser interface plugged into the prior step of ADMM.

use crate::image::Image;
use crate::net::ConvNet;

/// Maps a noisy image to a denoised image of the same size.
pub trait Denoiser: Send + Sync {
    fn denoise(&self, v: &Image) -> Image;

    fn descriptor(&self) -> String;

    /// Noise level a learned denoiser was trained for, when known.
    fn trained_sigma(&self) -> Option<f64> {
        None
    }
}

impl Denoiser for ConvNet {
    fn denoise(&self, v: &Image) -> Image {
        self.forward(v)
    }

    fn descriptor(&self) -> String {
        let width = self.layers().first().map_or(0, |l| l.out_channels);
        match self.sigma_r() {
            Some(s) => format!("convnet({}x{}, sigma_r={s})", self.layers().len(), width),
            None => format!("convnet({}x{})", self.layers().len(), width),
        }
    }

    fn trained_sigma(&self) -> Option<f64> {
        self.sigma_r()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn denoise(&self, v: &Image) -> Image {
        (**self).denoise(v)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }

    fn trained_sigma(&self) -> Option<f64> {
        (**self).trained_sigma()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for std::sync::Arc<D> {
    fn denoise(&self, v: &Image) -> Image {
        (**self).denoise(v)
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }

    fn trained_sigma(&self) -> Option<f64> {
        (**self).trained_sigma()
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityDenoiser;

impl Denoiser for IdentityDenoiser {
    fn denoise(&self, v: &Image) -> Image {
        v.clone()
    }

    fn descriptor(&self) -> String {
        "identity".into()
    }
}

/// 3x3 median filter with edge replication.
#[derive(Clone, Copy, Debug, Default)]
pub struct MedianDenoiser;

impl Denoiser for MedianDenoiser {
    fn denoise(&self, v: &Image) -> Image {
        let (h, w) = v.shape();
        Image::from_fn(h, w, |r, c| {
            let mut win = [0.0f64; 9];
            let mut i = 0;
            for dr in 0..3 {
                for dc in 0..3 {
                    let sr = (r + dr).saturating_sub(1).min(h - 1);
                    let sc = (c + dc).saturating_sub(1).min(w - 1);
                    win[i] = v.get(sr, sc);
                    i += 1;
                }
            }
            win.sort_by(f64::total_cmp);
            win[4]
        })
    }

    fn descriptor(&self) -> String {
        "median3x3".into()
    }
}

/// Opaque wrapper around a closure: callers can only evaluate it.
pub struct BlackBox<F> {
    f: F,
    name: String,
    sigma: Option<f64>,
}

impl<F: Fn(&Image) -> Image + Send + Sync> BlackBox<F> {
    pub fn new(name: impl Into<String>, f: F) -> Self {
        Self {
            f,
            name: name.into(),
            sigma: None,
        }
    }

    pub fn with_trained_sigma(mut self, sigma: f64) -> Self {
        self.sigma = Some(sigma);
        self
    }
}

impl<F: Fn(&Image) -> Image + Send + Sync> Denoiser for BlackBox<F> {
    fn denoise(&self, v: &Image) -> Image {
        (self.f)(v)
    }

    fn descriptor(&self) -> String {
        self.name.clone()
    }

    fn trained_sigma(&self) -> Option<f64> {
        self.sigma
    }
}
