//! Binary weight container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! magic        4 bytes  "PNPW"
//! version      u32      1
//! flags        u32      bit 0 = residual
//! sigma_r      f32      training noise level, 0 when unknown
//! input_scale  f32
//! layers       u32
//! per layer:
//!   out, in    u32, u32
//!   relu       u32      0 or 1
//!   weights    f32 x (out * in * 9)
//!   bias       f32 x out
//! ```

use std::fs;
use std::path::Path;

use super::{ConvLayer, ConvNet};
use crate::error::{Error, Result};

pub const WEIGHT_MAGIC: &[u8; 4] = b"PNPW";
pub const WEIGHT_VERSION: u32 = 1;

/// Generous bound that rejects corrupt headers before allocating.
const MAX_CHANNELS: usize = 4096;

impl ConvNet {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.parameter_count());
        out.extend_from_slice(WEIGHT_MAGIC);
        out.extend_from_slice(&WEIGHT_VERSION.to_le_bytes());
        out.extend_from_slice(&u32::from(self.residual).to_le_bytes());
        out.extend_from_slice(&(self.sigma_r.unwrap_or(0.0) as f32).to_le_bytes());
        out.extend_from_slice(&(self.input_scale as f32).to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.out_channels as u32).to_le_bytes());
            out.extend_from_slice(&(l.in_channels as u32).to_le_bytes());
            out.extend_from_slice(&u32::from(l.relu).to_le_bytes());
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<ConvNet> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != WEIGHT_MAGIC {
            return Err(Error::format("weights", "bad magic"));
        }
        let version = r.u32()?;
        if version != WEIGHT_VERSION {
            return Err(Error::format("weights", format!("unsupported version {version}")));
        }
        let flags = r.u32()?;
        let sigma_r = r.f32()? as f64;
        let input_scale = r.f32()? as f64;
        let count = r.u32()? as usize;
        let mut layers = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let out_channels = r.u32()? as usize;
            let in_channels = r.u32()? as usize;
            if out_channels == 0 || in_channels == 0 || out_channels > MAX_CHANNELS || in_channels > MAX_CHANNELS {
                return Err(Error::format("weights", "implausible layer shape"));
            }
            let relu = match r.u32()? {
                0 => false,
                1 => true,
                other => return Err(Error::format("weights", format!("bad relu flag {other}"))),
            };
            let mut layer = ConvLayer::zeros(in_channels, out_channels, relu);
            for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
                *v = r.f32()? as f64;
            }
            layers.push(layer);
        }
        if r.pos != bytes.len() {
            return Err(Error::format("weights", "trailing bytes"));
        }
        let mut net = ConvNet::new(layers, flags & 1 == 1)
            .map_err(|e| Error::format("weights", e.to_string()))?;
        net.set_input_scale(input_scale)
            .map_err(|e| Error::format("weights", e.to_string()))?;
        net.set_sigma_r((sigma_r > 0.0).then_some(sigma_r));
        Ok(net)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<ConvNet> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Rounds every parameter through `f32`, matching what a saved file holds.
    pub fn quantized(&self) -> ConvNet {
        Self::from_bytes(&self.to_bytes()).expect("own encoding is valid")
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| Error::format("weights", "truncated file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
