//! Procedural stand-ins for natural test images and camera-shake kernels.
//!
//! Images follow the dead-leaves model: occluding shapes with power-law
//! sizes, each carrying a smooth shading ramp and faint texture. Kernels are
//! smoothed random-walk trajectories.

use rand::RngExt;

use pnp_core::rng::{standard_normal, NoiseRng};
use pnp_core::{BlurKernel, Image, Result, RngSeed};

/// Supersampling factor used while rasterizing shapes.
const SUPERSAMPLE: usize = 2;

/// Default sizes of the five motion kernels.
pub const MOTION_KERNEL_SIZES: [usize; 5] = [11, 13, 15, 17, 19];

/// Dead-leaves image with 8-bit integer intensities.
pub fn dead_leaves(height: usize, width: usize, seed: RngSeed) -> Image {
    let mut rng = seed.rng();
    let (sh, sw) = (height * SUPERSAMPLE, width * SUPERSAMPLE);
    let background = rng.random_range(40.0..215.0);
    let mut canvas = vec![background; sh * sw];
    let r_min = 2.5 * SUPERSAMPLE as f64;
    let r_max = height.min(width) as f64 * SUPERSAMPLE as f64 / 3.0;
    let area = (height * width) as f64;
    let count = (area / 30.0).max(50.0) as usize;
    for _ in 0..count {
        let mut shape = Leaf::random(&mut rng, r_min, r_max, sh, sw);
        // tone relative to what it covers keeps local contrast moderate
        let (r, c) = (shape.cy.clamp(0.0, sh as f64 - 1.0) as usize, shape.cx.clamp(0.0, sw as f64 - 1.0) as usize);
        shape.base = (canvas[r * sw + c] + 60.0 * standard_normal(&mut rng)).clamp(10.0, 245.0);
        shape.paint(&mut canvas, sh, sw);
    }
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    Image::from_fn(height, width, |r, c| {
        let mut acc = 0.0;
        for dr in 0..SUPERSAMPLE {
            for dc in 0..SUPERSAMPLE {
                acc += canvas[(r * SUPERSAMPLE + dr) * sw + c * SUPERSAMPLE + dc];
            }
        }
        (acc / norm).round().clamp(0.0, 255.0)
    })
}

struct Leaf {
    cy: f64,
    cx: f64,
    /// Half-axes.
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
    rect: bool,
    base: f64,
    gy: f64,
    gx: f64,
    tex_amp: f64,
    tex_freq: f64,
    tex_phase: f64,
}

impl Leaf {
    fn random(rng: &mut NoiseRng, r_min: f64, r_max: f64, h: usize, w: usize) -> Leaf {
        // p(r) ~ r^-3 on [r_min, r_max]
        let u: f64 = rng.random();
        let (lo, hi) = (r_min.powi(-2), r_max.powi(-2));
        let r = (lo - u * (lo - hi)).powf(-0.5);
        let aspect = rng.random_range(0.4..1.0);
        let theta = rng.random_range(0.0..std::f64::consts::PI);
        let slope = rng.random_range(0.0..40.0) / r;
        let dir = rng.random_range(0.0..std::f64::consts::TAU);
        Leaf {
            cy: rng.random_range(-r..h as f64 + r),
            cx: rng.random_range(-r..w as f64 + r),
            a: r,
            b: r * aspect,
            cos: theta.cos(),
            sin: theta.sin(),
            rect: rng.random_bool(0.35),
            base: 0.0,
            gy: slope * dir.sin(),
            gx: slope * dir.cos(),
            tex_amp: if rng.random_bool(0.4) { rng.random_range(2.0..10.0) } else { 0.0 },
            tex_freq: rng.random_range(0.3..1.2),
            tex_phase: rng.random_range(0.0..std::f64::consts::TAU),
        }
    }

    fn paint(&self, canvas: &mut [f64], h: usize, w: usize) {
        let reach = self.a.ceil() as isize + 1;
        let (r0, r1) = ((self.cy as isize - reach).max(0), (self.cy as isize + reach).min(h as isize - 1));
        let (c0, c1) = ((self.cx as isize - reach).max(0), (self.cx as isize + reach).min(w as isize - 1));
        for r in r0..=r1 {
            for c in c0..=c1 {
                let dy = r as f64 + 0.5 - self.cy;
                let dx = c as f64 + 0.5 - self.cx;
                let u = (dx * self.cos + dy * self.sin) / self.a;
                let v = (-dx * self.sin + dy * self.cos) / self.b;
                let inside = if self.rect {
                    u.abs() <= 1.0 && v.abs() <= 1.0
                } else {
                    u * u + v * v <= 1.0
                };
                if inside {
                    let tex = self.tex_amp * (self.tex_freq * (u * self.a) + self.tex_phase).sin();
                    let val = self.base + self.gy * dy + self.gx * dx + tex;
                    canvas[r as usize * w + c as usize] = val.clamp(0.0, 255.0);
                }
            }
        }
    }
}

/// Camera-shake kernel: a random-walk trajectory splatted into a
/// `size x size` grid, lightly smoothed and normalized.
pub fn motion_kernel(size: usize, seed: RngSeed) -> Result<BlurKernel> {
    let mut rng = seed.rng();
    let steps = 400;
    let mut pts = Vec::with_capacity(steps);
    let (mut py, mut px) = (0.0f64, 0.0f64);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (mut vy, mut vx) = (angle.sin(), angle.cos());
    for _ in 0..steps {
        vy += 0.35 * standard_normal(&mut rng);
        vx += 0.35 * standard_normal(&mut rng);
        let speed = (vy * vy + vx * vx).sqrt().max(1e-9);
        vy /= speed;
        vx /= speed;
        py += vy;
        px += vx;
        pts.push((py, px));
    }
    let (ymin, ymax) = bounds(pts.iter().map(|p| p.0));
    let (xmin, xmax) = bounds(pts.iter().map(|p| p.1));
    let extent = (ymax - ymin).max(xmax - xmin).max(1e-9);
    let target = (size as f64 - 3.0) * rng.random_range(0.7..1.0);
    let scale = target / extent;
    let mid = (size as f64 - 1.0) / 2.0;
    let (cy, cx) = ((ymin + ymax) / 2.0, (xmin + xmax) / 2.0);
    let mut grid = vec![0.0; size * size];
    for (y, x) in pts {
        let (y, x) = (mid + (y - cy) * scale, mid + (x - cx) * scale);
        let (y0, x0) = (y.floor(), x.floor());
        let (fy, fx) = (y - y0, x - x0);
        for (dy, wy) in [(0, 1.0 - fy), (1, fy)] {
            for (dx, wx) in [(0, 1.0 - fx), (1, fx)] {
                let (r, c) = (y0 as isize + dy, x0 as isize + dx);
                if r >= 0 && c >= 0 && (r as usize) < size && (c as usize) < size {
                    grid[r as usize * size + c as usize] += wy * wx;
                }
            }
        }
    }
    BlurKernel::new(size, size, smooth3(&grid, size))
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Separable `[1, 2, 1] / 4` smoothing with zero borders.
fn smooth3(grid: &[f64], n: usize) -> Vec<f64> {
    let pass = |src: &[f64], horizontal: bool| {
        let mut out = vec![0.0; n * n];
        for r in 0..n {
            for c in 0..n {
                let at = |d: isize| {
                    let (rr, cc) = if horizontal { (r as isize, c as isize + d) } else { (r as isize + d, c as isize) };
                    if rr < 0 || cc < 0 || rr >= n as isize || cc >= n as isize {
                        0.0
                    } else {
                        src[rr as usize * n + cc as usize]
                    }
                };
                out[r * n + c] = 0.25 * at(-1) + 0.5 * at(0) + 0.25 * at(1);
            }
        }
        out
    };
    pass(&pass(grid, true), false)
}

/// The default five-kernel set.
pub fn motion_kernel_set(seed: RngSeed) -> Result<Vec<BlurKernel>> {
    MOTION_KERNEL_SIZES
        .iter()
        .enumerate()
        .map(|(i, &n)| motion_kernel(n, seed.derive(i as u64)))
        .collect()
}
