//! PGM (P5 binary / P2 plain) and kernel text formats.
//!
//! Kernel files hold `kh kw` on the first line followed by `kh * kw`
//! whitespace-separated reals in row-major order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{BlurKernel, Image};

/// Parses an 8-bit PGM. Pixel values are rescaled to `[0, 255]` when the
/// file's maxval is below 255.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0usize;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| Error::format("pgm", "empty file"))?;
    let binary = match magic.as_slice() {
        b"P5" => true,
        b"P2" => false,
        other => {
            return Err(Error::format(
                "pgm",
                format!("unsupported magic {:?}", String::from_utf8_lossy(other)),
            ))
        }
    };
    let mut header = [0usize; 3];
    for (slot, name) in header.iter_mut().zip(["width", "height", "maxval"]) {
        let tok = next_token(bytes, &mut pos)
            .ok_or_else(|| Error::format("pgm", format!("missing {name}")))?;
        *slot = std::str::from_utf8(&tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::format("pgm", format!("bad {name}")))?;
    }
    let [width, height, maxval] = header;
    if width == 0 || height == 0 {
        return Err(Error::format("pgm", "zero dimension"));
    }
    if maxval == 0 || maxval > 255 {
        return Err(Error::format("pgm", format!("unsupported maxval {maxval}")));
    }
    let n = width * height;
    let scale = 255.0 / maxval as f64;
    let data: Vec<f64> = if binary {
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        let raster = bytes
            .get(pos..pos + n)
            .ok_or_else(|| Error::format("pgm", "truncated raster"))?;
        raster.iter().map(|&b| f64::from(b) * scale).collect()
    } else {
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let tok =
                next_token(bytes, &mut pos).ok_or_else(|| Error::format("pgm", "truncated raster"))?;
            let v: usize = std::str::from_utf8(&tok)
                .ok()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::format("pgm", "bad sample"))?;
            if v > maxval {
                return Err(Error::format("pgm", "sample exceeds maxval"));
            }
            out.push(v as f64 * scale);
        }
        out
    };
    Image::new(height, width, data)
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| bytes[start..*pos].to_vec())
}

/// Rounds and clamps a pixel to a byte.
pub fn quantize(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

/// Encodes as binary P5 with maxval 255.
pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantize(v)));
    out
}

/// Encodes as plain-text P2 with maxval 255.
pub fn encode_pgm_plain(img: &Image) -> Vec<u8> {
    let mut out = format!("P2\n{} {}\n255\n", img.width(), img.height());
    for r in 0..img.height() {
        let row: Vec<String> = (0..img.width())
            .map(|c| quantize(img.get(r, c)).to_string())
            .collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out.into_bytes()
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    decode_pgm(&fs::read(path)?)
}

pub fn write_pgm(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    fs::write(path, encode_pgm(img))?;
    Ok(())
}

pub fn parse_kernel(text: &str) -> Result<BlurKernel> {
    let mut tokens = text.split_whitespace();
    let mut dim = |name: &str| -> Result<usize> {
        tokens
            .next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format("kernel", format!("missing or bad {name}")))
    };
    let kh = dim("kh")?;
    let kw = dim("kw")?;
    let weights: Vec<f64> = tokens
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format("kernel", format!("bad weight {t:?}")))
        })
        .collect::<Result<_>>()?;
    if weights.len() != kh * kw {
        return Err(Error::format(
            "kernel",
            format!("expected {} weights, found {}", kh * kw, weights.len()),
        ));
    }
    BlurKernel::new(kh, kw, weights)
}

pub fn format_kernel(k: &BlurKernel) -> String {
    let mut out = format!("{} {}\n", k.kh(), k.kw());
    for a in 0..k.kh() {
        let row: Vec<String> = (0..k.kw()).map(|b| format!("{:e}", k.get(a, b))).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<BlurKernel> {
    parse_kernel(&fs::read_to_string(path)?)
}
