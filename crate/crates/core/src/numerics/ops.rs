use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Pointwise nonlinearities with paired derivatives.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Elementwise {
    Tanh,
    Sigmoid,
    /// `y ↦ yⁿ`, `n ≥ 1`.
    Power(u32),
}

impl Elementwise {
    pub fn apply_scalar(self, y: f64) -> f64 {
        match self {
            Self::Tanh => y.tanh(),
            Self::Sigmoid => sigmoid(y),
            Self::Power(n) => y.powi(n as i32),
        }
    }

    fn derivative(self, y: f64, out: f64) -> f64 {
        match self {
            Self::Tanh => 1.0 - out * out,
            Self::Sigmoid => out * (1.0 - out),
            Self::Power(0) => 0.0,
            Self::Power(n) => n as f64 * y.powi(n as i32 - 1),
        }
    }

    pub fn forward(self, input: &Tensor) -> Result<Tensor> {
        if self == Self::Power(0) {
            return Err(Error::config("power exponent must be >= 1"));
        }
        Ok(input.map(|v| self.apply_scalar(v)))
    }

    /// `upstream ⊙ f'(input)`; `output` is `forward(input)`.
    pub fn backward(self, input: &Tensor, output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
        input.check_same_shape(output)?;
        input.check_same_shape(upstream)?;
        let data = input
            .data()
            .iter()
            .zip(output.data())
            .zip(upstream.data())
            .map(|((&y, &o), &g)| g * self.derivative(y, o))
            .collect();
        Ok(Tensor::from_raw(input.shape().to_vec(), data))
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Nearest-neighbour upsampling of a `[C, H, W]` tensor.
pub fn upsample_nearest(input: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    let (c, h, w) = input.dims3()?;
    let (oh, ow) = (h * factor, w * factor);
    let x = input.data();
    let mut out = vec![0.0; c * oh * ow];
    for ch in 0..c {
        for oy in 0..oh {
            let src = &x[(ch * h + oy / factor) * w..(ch * h + oy / factor + 1) * w];
            let dst = &mut out[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
            for (ox, d) in dst.iter_mut().enumerate() {
                *d = src[ox / factor];
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, oh, ow], out))
}

/// Gradient of [`upsample_nearest`]: block sum-pooling of the upstream.
pub fn upsample_nearest_grad(upstream: &Tensor, factor: usize) -> Result<Tensor> {
    if factor == 0 {
        return Err(Error::config("upsample factor must be >= 1"));
    }
    let (c, oh, ow) = upstream.dims3()?;
    if oh % factor != 0 || ow % factor != 0 {
        return Err(Error::dim(format!(
            "upstream {oh}x{ow} not divisible by factor {factor}"
        )));
    }
    let (h, w) = (oh / factor, ow / factor);
    let g = upstream.data();
    let mut out = vec![0.0; c * h * w];
    for ch in 0..c {
        for oy in 0..oh {
            let src = &g[(ch * oh + oy) * ow..(ch * oh + oy + 1) * ow];
            let dst = &mut out[(ch * h + oy / factor) * w..(ch * h + oy / factor + 1) * w];
            for (ox, &v) in src.iter().enumerate() {
                dst[ox / factor] += v;
            }
        }
    }
    Ok(Tensor::from_raw(vec![c, h, w], out))
}

/// Fully connected layer `W·x + b` on a flat input.
pub fn dense(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = dense_dims(input, weights, bias)?;
    let x = input.data();
    let w = weights.data();
    let out = (0..m)
        .map(|i| {
            let row = &w[i * n..(i + 1) * n];
            bias.data()[i] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();
    Ok(Tensor::from_raw(vec![m], out))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn dense_grad(input: &Tensor, weights: &Tensor, upstream: &Tensor) -> Result<DenseGrads> {
    let bias_like = Tensor::zeros(&[weights.shape()[0]]);
    let (m, n) = dense_dims(input, weights, &bias_like)?;
    if upstream.len() != m {
        return Err(Error::dim(format!(
            "dense upstream has {} values, expected {m}",
            upstream.len()
        )));
    }
    let x = input.data();
    let w = weights.data();
    let g = upstream.data();
    let mut gx = vec![0.0; n];
    let mut gw = vec![0.0; m * n];
    for i in 0..m {
        let row = &w[i * n..(i + 1) * n];
        for j in 0..n {
            gx[j] += g[i] * row[j];
            gw[i * n + j] = g[i] * x[j];
        }
    }
    Ok(DenseGrads {
        input: Tensor::from_raw(input.shape().to_vec(), gx),
        weights: Tensor::from_raw(weights.shape().to_vec(), gw),
        bias: Tensor::from_raw(vec![m], g.to_vec()),
    })
}

fn dense_dims(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    let (m, n) = match weights.shape() {
        &[m, n] => (m, n),
        s => return Err(Error::dim(format!("dense weights must be 2-D, got {s:?}"))),
    };
    if input.len() != n {
        return Err(Error::dim(format!(
            "dense input has {} values, weights expect {n}",
            input.len()
        )));
    }
    if bias.shape() != [m] {
        return Err(Error::dim(format!(
            "dense bias shape {:?}, expected [{m}]",
            bias.shape()
        )));
    }
    Ok((m, n))
}
