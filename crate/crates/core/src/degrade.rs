//! Forward degradation model `y = Kx + n` for blur and missing-pixel masks.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::image::{BlurKernel, Image};
use crate::ops::conv2d_valid;
use crate::rng::{gaussian_image, standard_normal, RngSeed};

/// Description of a forward operator and its noise level.
#[derive(Clone, Debug, PartialEq)]
pub enum DegradationSpec {
    Blur { kernel: BlurKernel, sigma: f64 },
    /// `mask` is 1 where a pixel is observed and 0 where it is missing.
    Inpaint { mask: Image, sigma: f64 },
}

impl DegradationSpec {
    pub fn blur(kernel: BlurKernel, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        Ok(Self::Blur { kernel, sigma })
    }

    pub fn inpaint(mask: Image, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        check_mask(&mask)?;
        Ok(Self::Inpaint { mask, sigma })
    }

    pub fn sigma(&self) -> f64 {
        match self {
            Self::Blur { sigma, .. } | Self::Inpaint { sigma, .. } => *sigma,
        }
    }

    /// Applies the operator to `x` and adds noise drawn from `seed`.
    pub fn apply(&self, x: &Image, seed: RngSeed) -> Result<Image> {
        match self {
            Self::Blur { kernel, sigma } => degrade_blur(x, kernel, *sigma, seed),
            Self::Inpaint { mask, sigma } => apply_mask(x, mask, *sigma, seed),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if sigma >= 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(Error::arg(format!("noise sigma must be >= 0, got {sigma}")))
    }
}

/// Mask entries must be exactly 0 or 1.
pub fn check_mask(mask: &Image) -> Result<()> {
    if mask.data().iter().all(|&m| m == 0.0 || m == 1.0) {
        Ok(())
    } else {
        Err(Error::arg("mask entries must be exactly 0 or 1"))
    }
}

/// Valid-area convolution with the flipped kernel followed by i.i.d.
/// `N(0, sigma^2)` noise. The result is not clipped.
pub fn degrade_blur(x: &Image, k: &BlurKernel, sigma: f64, seed: RngSeed) -> Result<Image> {
    check_sigma(sigma)?;
    let mut y = conv2d_valid(x, k, true)?;
    if sigma > 0.0 {
        let noise = gaussian_image(y.height(), y.width(), sigma, &mut seed.rng());
        y.axpy(1.0, &noise);
    }
    Ok(y)
}

/// Drops exactly `round(missing_fraction * H * W)` uniformly chosen pixels and
/// adds `N(0, sigma^2)` noise to the surviving ones. Returns `(y, mask)`.
pub fn degrade_inpaint(
    x: &Image,
    missing_fraction: f64,
    sigma: f64,
    seed: RngSeed,
) -> Result<(Image, Image)> {
    if !(0.0..1.0).contains(&missing_fraction) {
        return Err(Error::arg(format!(
            "missing fraction must be in [0, 1), got {missing_fraction}"
        )));
    }
    check_sigma(sigma)?;
    let n = x.len();
    let missing = (missing_fraction * n as f64).round() as usize;
    let mut rng = seed.rng();
    let mut mask = Image::filled(x.height(), x.width(), 1.0);
    for i in index::sample(&mut rng, n, missing).iter() {
        mask.data_mut()[i] = 0.0;
    }
    let y = apply_mask(x, &mask, sigma, seed.derive(1))?;
    Ok((y, mask))
}

fn apply_mask(x: &Image, mask: &Image, sigma: f64, seed: RngSeed) -> Result<Image> {
    x.check_same_shape(mask, "mask")?;
    check_mask(mask)?;
    let mut rng = seed.rng();
    let mut y = x.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(mask.data()) {
        if m == 1.0 {
            if sigma > 0.0 {
                *v += sigma * standard_normal(&mut rng);
            }
        } else {
            *v = 0.0;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texture(h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |r, c| 128.0 + 60.0 * ((r as f64 * 0.3).sin() * (c as f64 * 0.2).cos()))
    }

    #[test]
    fn identity_noiseless_blur_is_identity() {
        let x = texture(6, 7);
        assert_eq!(degrade_blur(&x, &BlurKernel::identity(), 0.0, RngSeed(1)).unwrap(), x);
    }

    #[test]
    fn noiseless_blur_reuses_valid_convolution() {
        let x = texture(12, 10);
        let k = BlurKernel::from_rows(&[[1.0, 2.0, 0.0], [0.0, 1.0, 3.0]]).unwrap();
        assert_eq!(
            degrade_blur(&x, &k, 0.0, RngSeed(9)).unwrap(),
            conv2d_valid(&x, &k, true).unwrap()
        );
        assert!(degrade_blur(&Image::zeros(2, 2), &k, 1.0, RngSeed(0)).is_err());
        assert!(degrade_blur(&x, &k, -1.0, RngSeed(0)).is_err());
    }

    #[test]
    fn blur_noise_statistics_and_determinism() {
        let x = texture(256, 256);
        let k = BlurKernel::uniform(5);
        let clean = conv2d_valid(&x, &k, true).unwrap();
        for sigma in [2.55, 5.10, 12.0] {
            let y = degrade_blur(&x, &k, sigma, RngSeed(42)).unwrap();
            let est = y.sub(&clean).variance().sqrt();
            assert!((est - sigma).abs() < 0.03 * sigma, "sigma {sigma}: {est}");
        }
        let a = degrade_blur(&x, &k, 2.55, RngSeed(7)).unwrap();
        let b = degrade_blur(&x, &k, 2.55, RngSeed(7)).unwrap();
        let c = degrade_blur(&x, &k, 2.55, RngSeed(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn inpaint_without_loss_or_noise() {
        let x = texture(9, 9);
        let (y, mask) = degrade_inpaint(&x, 0.0, 0.0, RngSeed(3)).unwrap();
        assert_eq!(y, x);
        assert!(mask.data().iter().all(|&m| m == 1.0));
    }

    #[test]
    fn inpaint_mask_count_and_masked_zeros() {
        let x = texture(50, 40);
        let (y, mask) = degrade_inpaint(&x, 0.8, 12.0, RngSeed(11)).unwrap();
        let zeros = mask.data().iter().filter(|&&m| m == 0.0).count();
        assert_eq!(zeros, 1600);
        for i in 0..x.len() {
            if mask.data()[i] == 0.0 {
                assert_eq!(y.data()[i], 0.0);
            }
            assert_eq!(mask.data()[i] * y.data()[i], y.data()[i]);
        }
        // noise is present on observed pixels only
        let resid: Vec<f64> = (0..x.len())
            .filter(|&i| mask.data()[i] == 1.0)
            .map(|i| y.data()[i] - x.data()[i])
            .collect();
        let sd = (resid.iter().map(|v| v * v).sum::<f64>() / resid.len() as f64).sqrt();
        assert!((sd - 12.0).abs() < 1.5, "{sd}");
        let again = degrade_inpaint(&x, 0.8, 12.0, RngSeed(11)).unwrap();
        assert_eq!(again, (y, mask));
    }

    #[test]
    fn inpaint_rejects_bad_fraction() {
        let x = texture(4, 4);
        assert!(degrade_inpaint(&x, 1.0, 0.0, RngSeed(0)).is_err());
        assert!(degrade_inpaint(&x, -0.1, 0.0, RngSeed(0)).is_err());
    }

    #[test]
    fn spec_validation() {
        assert!(DegradationSpec::inpaint(Image::filled(2, 2, 0.5), 1.0).is_err());
        assert!(DegradationSpec::blur(BlurKernel::identity(), -2.0).is_err());
        let spec = DegradationSpec::blur(BlurKernel::uniform(3), 2.55).unwrap();
        assert_eq!(spec.sigma(), 2.55);
    }
}
