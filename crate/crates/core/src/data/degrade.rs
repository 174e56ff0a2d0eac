use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::rng;

/// Noise standard deviation (8-bit units) at full severity.
pub const MAX_NOISE_STD: f64 = 8.0;

/// Underwater-style corruption of a `[3, H, W]` image in 0..=255. Each
/// effect scales with `severity`: red attenuation, 3×3 box blur, contrast
/// compression toward the channel mean, additive Gaussian noise. Output is
/// rounded and clamped to 0..=255; `severity == 0` returns the input.
pub fn degrade(img: &Tensor, severity: f64, seed: u64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&severity) {
        return Err(Error::config(format!("severity {severity} outside [0, 1]")));
    }
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::dim(format!("degrade expects 3 channels, got {c}")));
    }
    if severity == 0.0 {
        return Ok(img.clone());
    }
    let s = severity;
    let plane = h * w;
    let mut x = img.data().to_vec();
    for v in &mut x[..plane] {
        *v *= 1.0 - 0.6 * s;
    }
    let blurred = box_blur(&x, c, h, w);
    for (v, b) in x.iter_mut().zip(&blurred) {
        *v = (1.0 - s) * *v + s * b;
    }
    let contrast = 1.0 - 0.5 * s;
    for ch in x.chunks_mut(plane) {
        let mean = ch.iter().sum::<f64>() / plane as f64;
        for v in ch {
            *v = mean + contrast * (*v - mean);
        }
    }
    let noise = Normal::new(0.0, MAX_NOISE_STD * s).expect("finite std");
    let mut r = rng::stream(seed, "degrade/noise");
    for v in &mut x {
        *v = (*v + noise.sample(&mut r)).round().clamp(0.0, 255.0);
    }
    Tensor::new(img.shape().to_vec(), x)
}

/// 3×3 mean filter with edge replication.
fn box_blur(x: &[f64], c: usize, h: usize, w: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for ch in 0..c {
        let base = ch * h * w;
        for i in 0..h {
            for j in 0..w {
                let mut acc = 0.0;
                for di in -1i64..=1 {
                    for dj in -1i64..=1 {
                        let ii = (i as i64 + di).clamp(0, h as i64 - 1) as usize;
                        let jj = (j as i64 + dj).clamp(0, w as i64 - 1) as usize;
                        acc += x[base + ii * w + jj];
                    }
                }
                out[base + i * w + j] = acc / 9.0;
            }
        }
    }
    out
}

/// Procedural clean image: a smooth two-colour gradient with a few
/// rectangles and discs, integer-valued in 0..=255.
pub fn procedural_image(size: usize, r: &mut impl Rng) -> Tensor {
    let mut color = || {
        [
            r.gen_range(0.0..255.0),
            r.gen_range(0.0..255.0),
            r.gen_range(0.0..255.0),
        ]
    };
    let (c0, c1) = (color(), color());
    let mut shapes = Vec::new();
    let n_shapes = r.gen_range(2..=5);
    for _ in 0..n_shapes {
        let disc: bool = r.gen();
        let cx = r.gen_range(0.0..size as f64);
        let cy = r.gen_range(0.0..size as f64);
        let extent = r.gen_range(size as f64 / 10.0..size as f64 / 3.0);
        let col = [
            r.gen_range(0.0..255.0),
            r.gen_range(0.0..255.0),
            r.gen_range(0.0..255.0),
        ];
        shapes.push((disc, cx, cy, extent, col));
    }
    let angle: f64 = r.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());
    let n = size as f64;
    Tensor::from_fn(&[3, size, size], |idx| {
        let ch = idx / (size * size);
        let (i, j) = ((idx / size) % size, idx % size);
        let (y, x) = (i as f64 + 0.5, j as f64 + 0.5);
        let t = (((x / n - 0.5) * dx + (y / n - 0.5) * dy) + 0.75) / 1.5;
        let mut v = c0[ch] * (1.0 - t) + c1[ch] * t;
        for &(disc, cx, cy, e, col) in &shapes {
            let inside = if disc {
                (x - cx).powi(2) + (y - cy).powi(2) <= e * e
            } else {
                (x - cx).abs() <= e && (y - cy).abs() <= e * 0.6
            };
            if inside {
                v = col[ch];
            }
        }
        v.round().clamp(0.0, 255.0)
    })
}
