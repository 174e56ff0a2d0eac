//! 2-D cross-correlation over `[C, H, W]` tensors and its exact gradients.
//!
//! Two implementations live here. The direct loop kernels (`conv2d`,
//! `conv2d_grad`) are the reference. The im2col lowering (`conv2d_gemm`,
//! `conv2d_grad_gemm`) routes the same arithmetic through a dense matrix
//! product and is what the networks call; the two agree to 1e-12.

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Zero padding applied before and after each spatial axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub begin: usize,
    pub end: usize,
}

impl Padding {
    pub fn symmetric(p: usize) -> Self {
        Self { begin: p, end: p }
    }

    /// "Same" padding: output extent is `ceil(size / stride)`, with the odd
    /// leftover pixel of padding placed at the end.
    pub fn same(size: usize, kernel: usize, stride: usize) -> Self {
        let out = size.div_ceil(stride);
        let total = ((out - 1) * stride + kernel).saturating_sub(size);
        Self {
            begin: total / 2,
            end: total - total / 2,
        }
    }
}

impl From<usize> for Padding {
    fn from(p: usize) -> Self {
        Self::symmetric(p)
    }
}

/// Output extent of one spatial axis.
pub fn conv_output_size(
    size: usize,
    kernel: usize,
    stride: usize,
    padding: Padding,
) -> Result<usize> {
    if stride == 0 {
        return Err(Error::dim("stride must be positive"));
    }
    let padded = size + padding.begin + padding.end;
    if padded < kernel {
        return Err(Error::dim(format!(
            "kernel {kernel} larger than padded extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Gradients of a convolution with respect to each of its arguments.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl Geometry {
    fn new(input: &Tensor, weights: &Tensor, stride: usize, padding: Padding) -> Result<Self> {
        let (c_in, h, w) = input.dims3()?;
        let (c_out, wc, kh, kw) = weights.dims4()?;
        if wc != c_in {
            return Err(Error::dim(format!(
                "input has {c_in} channels but weights expect {wc}"
            )));
        }
        let oh = conv_output_size(h, kh, stride, padding)?;
        let ow = conv_output_size(w, kw, stride, padding)?;
        Ok(Self {
            c_in,
            h,
            w,
            c_out,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad: padding.begin,
        })
    }

    /// Output columns `ox` whose input column `ox*stride + kx - pad` is in bounds.
    fn valid_range(&self, k: usize, out: usize, size: usize) -> (usize, usize) {
        // ox*s + k >= pad  and  ox*s + k - pad < size
        let lo = if k >= self.pad {
            0
        } else {
            (self.pad - k).div_ceil(self.stride)
        };
        let hi_num = size + self.pad;
        let hi = if hi_num > k {
            ((hi_num - k - 1) / self.stride + 1).min(out)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    fn out_shape(&self) -> Vec<usize> {
        vec![self.c_out, self.oh, self.ow]
    }
}

fn check_bias(bias: &Tensor, c_out: usize) -> Result<()> {
    if bias.shape() != [c_out] {
        return Err(Error::dim(format!(
            "bias shape {:?} does not match {c_out} output channels",
            bias.shape()
        )));
    }
    Ok(())
}

fn check_upstream(upstream: &Tensor, g: &Geometry) -> Result<()> {
    if upstream.shape() != g.out_shape() {
        return Err(Error::dim(format!(
            "upstream gradient shape {:?} != conv output shape {:?}",
            upstream.shape(),
            g.out_shape()
        )));
    }
    Ok(())
}

/// Reference convolution: direct loops, zero padding, no kernel flip.
pub fn conv2d(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: impl Into<Padding>,
) -> Result<Tensor> {
    let g = Geometry::new(input, weights, stride, padding.into())?;
    check_bias(bias, g.c_out)?;
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; g.c_out * g.oh * g.ow];
    for co in 0..g.c_out {
        let plane = &mut out[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        plane.fill(bias.data()[co]);
        for ci in 0..g.c_in {
            let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.oh, g.h);
                for kx in 0..g.kw {
                    let wv = wt[((co * g.c_in + ci) * g.kh + ky) * g.kw + kx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.ow, g.w);
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut plane[oy * g.ow..(oy + 1) * g.ow];
                        for ox in ox_lo..ox_hi {
                            orow[ox] += wv * row[ox * g.stride + kx - g.pad];
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor::from_raw(g.out_shape(), out))
}

/// Reference gradients of [`conv2d`].
pub fn conv2d_grad(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: impl Into<Padding>,
) -> Result<ConvGrads> {
    let g = Geometry::new(input, weights, stride, padding.into())?;
    check_upstream(upstream, &g)?;
    let x = input.data();
    let wt = weights.data();
    let up = upstream.data();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; wt.len()];
    let mut gb = vec![0.0; g.c_out];
    for co in 0..g.c_out {
        let uplane = &up[co * g.oh * g.ow..(co + 1) * g.oh * g.ow];
        gb[co] = uplane.iter().sum();
        for ci in 0..g.c_in {
            let base = ci * g.h * g.w;
            for ky in 0..g.kh {
                let (oy_lo, oy_hi) = g.valid_range(ky, g.oh, g.h);
                for kx in 0..g.kw {
                    let widx = ((co * g.c_in + ci) * g.kh + ky) * g.kw + kx;
                    let wv = wt[widx];
                    let (ox_lo, ox_hi) = g.valid_range(kx, g.ow, g.w);
                    let mut acc = 0.0;
                    for oy in oy_lo..oy_hi {
                        let iy = oy * g.stride + ky - g.pad;
                        for ox in ox_lo..ox_hi {
                            let ix = ox * g.stride + kx - g.pad;
                            let u = uplane[oy * g.ow + ox];
                            acc += u * x[base + iy * g.w + ix];
                            gx[base + iy * g.w + ix] += u * wv;
                        }
                    }
                    gw[widx] = acc;
                }
            }
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_raw(input.shape().to_vec(), gx),
        weights: Tensor::from_raw(weights.shape().to_vec(), gw),
        bias: Tensor::from_raw(vec![g.c_out], gb),
    })
}

/// Row-major `C = A·B + beta·C` with explicit strides on A and B so either
/// operand can be read transposed in place.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (isize, isize),
    b: &[f64],
    (rsb, csb): (isize, isize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    // SAFETY: bounds asserted above; strides describe dense m×k, k×n and m×n
    // matrices inside those slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Column matrix of shape `[C·kH·kW, oH·oW]`.
fn im2col(x: &[f64], g: &Geometry) -> Vec<f64> {
    let p = g.oh * g.ow;
    let mut cols = vec![0.0; g.c_in * g.kh * g.kw * p];
    for ci in 0..g.c_in {
        let xin = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.oh, g.h);
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.ow, g.w);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &xin[iy * g.w..(iy + 1) * g.w];
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox_lo..ox_hi {
                        drow[ox] = src[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-add of a column matrix back into `[C, H, W]`.
fn col2im(cols: &[f64], g: &Geometry) -> Vec<f64> {
    let p = g.oh * g.ow;
    let mut x = vec![0.0; g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        let xin = &mut x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            let (oy_lo, oy_hi) = g.valid_range(ky, g.oh, g.h);
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (ox_lo, ox_hi) = g.valid_range(kx, g.ow, g.w);
                for oy in oy_lo..oy_hi {
                    let iy = oy * g.stride + ky - g.pad;
                    let drow = &mut xin[iy * g.w..(iy + 1) * g.w];
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    for ox in ox_lo..ox_hi {
                        drow[ox * g.stride + kx - g.pad] += srow[ox];
                    }
                }
            }
        }
    }
    x
}

/// Convolution lowered to a matrix product. Same contract as [`conv2d`].
pub fn conv2d_gemm(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    padding: impl Into<Padding>,
) -> Result<Tensor> {
    let g = Geometry::new(input, weights, stride, padding.into())?;
    check_bias(bias, g.c_out)?;
    let mut out = Tensor::zeros(&g.out_shape());
    conv_gemm_accumulate(input, weights, &g, out.data_mut(), Some(bias));
    Ok(out)
}

fn conv_gemm_accumulate(
    input: &Tensor,
    weights: &Tensor,
    g: &Geometry,
    out: &mut [f64],
    bias: Option<&Tensor>,
) {
    let p = g.oh * g.ow;
    let k = g.c_in * g.kh * g.kw;
    if let Some(b) = bias {
        for (co, plane) in out.chunks_mut(p).enumerate() {
            for v in plane.iter_mut() {
                *v += b.data()[co];
            }
        }
    }
    let cols = im2col(input.data(), g);
    gemm(
        g.c_out,
        k,
        p,
        weights.data(),
        (k as isize, 1),
        &cols,
        (p as isize, 1),
        1.0,
        out,
    );
}

/// Adds `conv(input, weights)` (no bias) into `out`, which must already have
/// the convolution's output shape.
pub(crate) fn conv2d_gemm_accumulate(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    padding: Padding,
    out: &mut Tensor,
) -> Result<()> {
    let g = Geometry::new(input, weights, stride, padding)?;
    if out.shape() != g.out_shape() {
        return Err(Error::dim(format!(
            "accumulator shape {:?} != conv output shape {:?}",
            out.shape(),
            g.out_shape()
        )));
    }
    conv_gemm_accumulate(input, weights, &g, out.data_mut(), None);
    Ok(())
}

/// Input and weight gradients through the lowered path (bias gradient is
/// [`bias_grad`]).
pub(crate) fn conv2d_grad_gemm_parts(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: Padding,
) -> Result<(Tensor, Tensor)> {
    let g = Geometry::new(input, weights, stride, padding)?;
    check_upstream(upstream, &g)?;
    let p = g.oh * g.ow;
    let k = g.c_in * g.kh * g.kw;
    let cols = im2col(input.data(), &g);
    let mut gw = vec![0.0; g.c_out * k];
    // dW[Co,K] = dY[Co,P] · colsᵀ
    gemm(
        g.c_out,
        p,
        k,
        upstream.data(),
        (p as isize, 1),
        &cols,
        (1, p as isize),
        0.0,
        &mut gw,
    );
    // dcols[K,P] = Wᵀ · dY
    let mut gcols = vec![0.0; k * p];
    gemm(
        k,
        g.c_out,
        p,
        weights.data(),
        (1, k as isize),
        upstream.data(),
        (p as isize, 1),
        0.0,
        &mut gcols,
    );
    let gx = col2im(&gcols, &g);
    Ok((
        Tensor::from_raw(input.shape().to_vec(), gx),
        Tensor::from_raw(weights.shape().to_vec(), gw),
    ))
}

/// Per-output-channel sum of a `[C, H, W]` upstream gradient.
pub fn bias_grad(upstream: &Tensor) -> Result<Tensor> {
    let (c, h, w) = upstream.dims3()?;
    Ok(Tensor::from_raw(
        vec![c],
        upstream
            .data()
            .chunks(h * w)
            .map(|plane| plane.iter().sum())
            .collect(),
    ))
}

/// Gradients through the lowered path. Same contract as [`conv2d_grad`].
pub fn conv2d_grad_gemm(
    input: &Tensor,
    weights: &Tensor,
    upstream: &Tensor,
    stride: usize,
    padding: impl Into<Padding>,
) -> Result<ConvGrads> {
    let (gx, gw) = conv2d_grad_gemm_parts(input, weights, upstream, stride, padding.into())?;
    Ok(ConvGrads {
        input: gx,
        weights: gw,
        bias: bias_grad(upstream)?,
    })
}
