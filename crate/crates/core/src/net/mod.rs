//! Feed-forward 3x3 convolutional denoiser with hand-written backpropagation.
//!
//! The same network type serves as the MMSE denoising autoencoder and as the
//! MAP denoiser. Every layer pads its input by one pixel with edge
//! replication, so the output always has the input's size. There is no
//! normalization layer.

mod conv;
mod io;

use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::image::Image;
use crate::rng::RngSeed;
use conv::{col2im, gemm, im2col};

pub use io::{WEIGHT_MAGIC, WEIGHT_VERSION};

/// Pixels are multiplied by this before entering the conv stack, and the
/// stack output is divided by it.
pub const DEFAULT_INPUT_SCALE: f64 = 1.0 / 255.0;

/// Depth and width of a plain conv/ReLU stack.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub depth: usize,
    pub features: usize,
    pub residual: bool,
}

impl Architecture {
    /// 7 layers x 32 channels, receptive field 15x15.
    pub const DESK: Architecture = Architecture {
        depth: 7,
        features: 32,
        residual: true,
    };

    /// 17 layers x 64 channels, receptive field 35x35.
    pub const FULL: Architecture = Architecture {
        depth: 17,
        features: 64,
        residual: true,
    };

    /// `(in_channels, out_channels, relu)` for each layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize, bool)> {
        (0..self.depth)
            .map(|i| {
                let cin = if i == 0 { 1 } else { self.features };
                let last = i + 1 == self.depth;
                let cout = if last { 1 } else { self.features };
                (cin, cout, !last)
            })
            .collect()
    }

    pub fn receptive_field(&self) -> usize {
        2 * self.depth + 1
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub in_channels: usize,
    pub out_channels: usize,
    /// `out x in x 3 x 3`, row-major.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub relu: bool,
}

impl ConvLayer {
    pub fn zeros(in_channels: usize, out_channels: usize, relu: bool) -> Self {
        Self {
            in_channels,
            out_channels,
            weights: vec![0.0; out_channels * in_channels * 9],
            bias: vec![0.0; out_channels],
            relu,
        }
    }

    fn fan_in(&self) -> usize {
        self.in_channels * 9
    }

    fn forward(&self, input: &[f64], h: usize, w: usize, cols: &mut Vec<f64>) -> Vec<f64> {
        let hw = h * w;
        im2col(input, self.in_channels, h, w, cols);
        let mut out = vec![0.0; self.out_channels * hw];
        for (o, b) in self.bias.iter().enumerate() {
            out[o * hw..(o + 1) * hw].fill(*b);
        }
        gemm(
            self.out_channels,
            self.fan_in(),
            hw,
            &self.weights,
            false,
            cols,
            false,
            1.0,
            &mut out,
        );
        if self.relu {
            out.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        out
    }

    /// `d_out` must already include the ReLU mask.
    fn backward(
        &self,
        input: &[f64],
        d_out: &[f64],
        h: usize,
        w: usize,
        grad: &mut LayerGradient,
        cols: &mut Vec<f64>,
        want_input_grad: bool,
    ) -> Option<Vec<f64>> {
        let hw = h * w;
        im2col(input, self.in_channels, h, w, cols);
        // dW += dOut * cols^T
        gemm(
            self.out_channels,
            hw,
            self.fan_in(),
            d_out,
            false,
            cols,
            true,
            1.0,
            &mut grad.weights,
        );
        for (o, gb) in grad.bias.iter_mut().enumerate() {
            *gb += d_out[o * hw..(o + 1) * hw].iter().sum::<f64>();
        }
        if !want_input_grad {
            return None;
        }
        // dCols = W^T * dOut
        gemm(
            self.fan_in(),
            self.out_channels,
            hw,
            &self.weights,
            true,
            d_out,
            false,
            0.0,
            cols,
        );
        Some(col2im(cols, self.in_channels, h, w))
    }
}

/// Parameters of the convolutional denoiser.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvNet {
    layers: Vec<ConvLayer>,
    residual: bool,
    input_scale: f64,
    sigma_r: Option<f64>,
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    height: usize,
    width: usize,
    /// `activations[i]` is the input of layer `i`; the last entry is the stack output.
    activations: Vec<Vec<f64>>,
}

/// Partial derivatives shaped like a [`ConvNet`]'s parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<LayerGradient>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerGradient {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(net: &ConvNet) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGradient {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn is_congruent(&self, net: &ConvNet) -> bool {
        self.layers.len() == net.layers.len()
            && self
                .layers
                .iter()
                .zip(&net.layers)
                .all(|(g, l)| g.weights.len() == l.weights.len() && g.bias.len() == l.bias.len())
    }

    pub fn slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn add_assign(&mut self, other: &GradientSet) {
        for (a, b) in self.slices_mut().zip(other.slices()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for a in self.slices_mut() {
            a.iter_mut().for_each(|x| *x *= s);
        }
    }

    pub fn norm(&self) -> f64 {
        self.slices()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().all(|s| s.iter().all(|v| v.is_finite()))
    }
}

impl ConvNet {
    /// Assembles a network, checking channel chaining and the single-channel
    /// input/output contract.
    pub fn new(layers: Vec<ConvLayer>, residual: bool) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| Error::arg("network needs at least one layer"))?;
        if first.in_channels != 1 {
            return Err(Error::arg("first layer must take one channel"));
        }
        let last = layers.last().unwrap();
        if last.out_channels != 1 || last.relu {
            return Err(Error::arg("last layer must emit one channel without ReLU"));
        }
        for pair in layers.windows(2) {
            if pair[0].out_channels != pair[1].in_channels {
                return Err(Error::arg("layer channel counts do not chain"));
            }
        }
        for l in &layers {
            if l.weights.len() != l.out_channels * l.in_channels * 9 || l.bias.len() != l.out_channels {
                return Err(Error::arg("layer parameter count does not match its shape"));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::arg("non-finite network parameter"));
            }
        }
        Ok(Self {
            layers,
            residual,
            input_scale: DEFAULT_INPUT_SCALE,
            sigma_r: None,
        })
    }

    /// He-normal weights (`std = sqrt(2 / (9 * in_channels))`) and zero biases.
    pub fn init_weights(arch: Architecture, seed: RngSeed) -> Result<Self> {
        if arch.depth == 0 || arch.features == 0 {
            return Err(Error::arg("architecture needs positive depth and width"));
        }
        let mut rng = seed.rng();
        let layers = arch
            .layer_shapes()
            .into_iter()
            .map(|(cin, cout, relu)| {
                let mut layer = ConvLayer::zeros(cin, cout, relu);
                let std = (2.0 / (9.0 * cin as f64)).sqrt();
                let normal = Normal::new(0.0, std).expect("positive std");
                layer.weights.iter_mut().for_each(|w| *w = normal.sample(&mut rng));
                layer
            })
            .collect();
        Self::new(layers, arch.residual)
    }

    /// Zeroes the final layer; a residual net then starts as the identity map.
    pub fn zero_output_layer(&mut self) {
        let last = self.layers.last_mut().unwrap();
        last.weights.fill(0.0);
        last.bias.fill(0.0);
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [ConvLayer] {
        &mut self.layers
    }

    pub fn residual(&self) -> bool {
        self.residual
    }

    pub fn input_scale(&self) -> f64 {
        self.input_scale
    }

    pub fn set_input_scale(&mut self, scale: f64) -> Result<()> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::arg("input scale must be positive"));
        }
        self.input_scale = scale;
        Ok(())
    }

    /// Noise level the network was trained for, if recorded.
    pub fn sigma_r(&self) -> Option<f64> {
        self.sigma_r
    }

    pub fn set_sigma_r(&mut self, sigma_r: Option<f64>) {
        self.sigma_r = sigma_r;
    }

    pub fn receptive_field(&self) -> usize {
        2 * self.layers.len() + 1
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn param_slices(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    pub fn param_slices_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn is_finite(&self) -> bool {
        self.param_slices().all(|s| s.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, img: &Image) -> Image {
        self.forward_cached(img).0
    }

    /// Runs the stack on an already-scaled single-channel input and returns
    /// every layer's output (post-activation). Used for diagnostics.
    pub fn stack_activations(&self, input: &Image) -> Vec<Vec<f64>> {
        let (h, w) = input.shape();
        let mut cols = Vec::new();
        let mut current = input.data().to_vec();
        let mut out = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            current = layer.forward(&current, h, w, &mut cols);
            out.push(current.clone());
        }
        out
    }

    pub fn forward_cached(&self, img: &Image) -> (Image, ForwardCache) {
        let (h, w) = img.shape();
        let mut cols = Vec::new();
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(img.data().iter().map(|v| v * self.input_scale).collect::<Vec<_>>());
        for layer in &self.layers {
            let next = layer.forward(activations.last().unwrap(), h, w, &mut cols);
            activations.push(next);
        }
        let inv = 1.0 / self.input_scale;
        let raw = activations.last().unwrap();
        let out: Vec<f64> = if self.residual {
            img.data().iter().zip(raw).map(|(x, r)| x - r * inv).collect()
        } else {
            raw.iter().map(|r| r * inv).collect()
        };
        (
            Image::from_raw(h, w, out),
            ForwardCache {
                height: h,
                width: w,
                activations,
            },
        )
    }

    /// Gradients of `<upstream, forward(img)>` with respect to the parameters
    /// and to `img`.
    pub fn backward(&self, img: &Image, upstream: &Image) -> Result<(GradientSet, Image)> {
        let (_, cache) = self.forward_cached(img);
        let mut grads = GradientSet::zeros_like(self);
        let input_grad = self.backward_cached(&cache, upstream, &mut grads, true)?;
        Ok((grads, input_grad.expect("input gradient requested")))
    }

    /// Accumulates parameter gradients into `grads`; returns the input
    /// gradient when asked for.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        upstream: &Image,
        grads: &mut GradientSet,
        want_input_grad: bool,
    ) -> Result<Option<Image>> {
        let (h, w) = (cache.height, cache.width);
        if upstream.shape() != (h, w) {
            return Err(Error::dim("upstream gradient does not match forward output"));
        }
        if !grads.is_congruent(self) {
            return Err(Error::arg("gradient set does not match network"));
        }
        let inv = 1.0 / self.input_scale;
        let sign = if self.residual { -inv } else { inv };
        let mut delta: Vec<f64> = upstream.data().iter().map(|u| u * sign).collect();
        let mut cols = Vec::new();
        for (i, layer) in self.layers.iter().enumerate().rev() {
            if layer.relu {
                let out = &cache.activations[i + 1];
                for (d, &o) in delta.iter_mut().zip(out) {
                    if o <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            let need = i > 0 || want_input_grad;
            match layer.backward(
                &cache.activations[i],
                &delta,
                h,
                w,
                &mut grads.layers[i],
                &mut cols,
                need,
            ) {
                Some(d) => delta = d,
                None => return Ok(None),
            }
        }
        let mut input_grad: Vec<f64> = delta.iter().map(|d| d * self.input_scale).collect();
        if self.residual {
            for (g, u) in input_grad.iter_mut().zip(upstream.data()) {
                *g += u;
            }
        }
        Ok(Some(Image::from_raw(h, w, input_grad)))
    }
}
