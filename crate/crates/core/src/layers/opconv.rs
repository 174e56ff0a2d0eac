use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    bias_grad, conv2d_gemm, conv2d_gemm_accumulate, conv2d_grad_gemm_parts, Padding, Tensor,
};

/// Self-ONN convolution: each output is the truncated Maclaurin polynomial
/// `w₀ + Σ_q conv(yᵠ, W_q)` of its receptive field, `q = 1..=Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperationalConv2d {
    /// One bank per order, all `[C_out, C_in, kH, kW]`; `weights[q-1]` multiplies `yᵠ`.
    pub weights: Vec<Tensor>,
    /// Per-output-channel `w₀`.
    pub bias: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OpConvGrads {
    pub input: Tensor,
    pub weights: Vec<Tensor>,
    pub bias: Tensor,
}

impl OperationalConv2d {
    pub fn new(
        weights: Vec<Tensor>,
        bias: Tensor,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let first = weights
            .first()
            .ok_or_else(|| Error::config("operational layer needs Q >= 1 weight banks"))?;
        let (c_out, _, _, _) = first.dims4()?;
        if weights.iter().any(|w| w.shape() != first.shape()) {
            return Err(Error::dim("all weight banks must share one shape"));
        }
        if bias.shape() != [c_out] {
            return Err(Error::dim(format!(
                "bias shape {:?} does not match {c_out} output channels",
                bias.shape()
            )));
        }
        if stride == 0 {
            return Err(Error::config("stride must be positive"));
        }
        Ok(Self {
            weights,
            bias,
            stride,
            padding,
        })
    }

    /// Uniform init in `±1/√(fan_in·Q)` per bank, zero bias.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        order: usize,
        stride: usize,
        padding: Padding,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if order == 0 || c_in == 0 || c_out == 0 || kernel == 0 {
            return Err(Error::config(format!(
                "invalid operational layer c_in={c_in} c_out={c_out} k={kernel} Q={order}"
            )));
        }
        let bound = 1.0 / ((c_in * kernel * kernel * order) as f64).sqrt();
        let shape = [c_out, c_in, kernel, kernel];
        let weights = (0..order)
            .map(|_| Tensor::from_fn(&shape, |_| rng.gen_range(-bound..bound)))
            .collect();
        Self::new(weights, Tensor::zeros(&[c_out]), stride, padding)
    }

    pub fn order(&self) -> usize {
        self.weights.len()
    }

    pub fn in_channels(&self) -> usize {
        self.weights[0].shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weights[0].shape()[0]
    }

    pub fn kernel(&self) -> usize {
        self.weights[0].shape()[2]
    }

    /// Banks concatenated along the input-channel axis:
    /// `[C_out, Q·C_in, kH, kW]`, matching [`power_stack`] channel order.
    pub fn stacked_weights(&self) -> Tensor {
        let (c_out, c_in, kh, kw) = self.weights[0].dims4().expect("validated at construction");
        let q = self.order();
        let block = c_in * kh * kw;
        let mut data = Vec::with_capacity(c_out * q * block);
        for co in 0..c_out {
            for w in &self.weights {
                data.extend_from_slice(&w.data()[co * block..(co + 1) * block]);
            }
        }
        Tensor::from_raw(vec![c_out, q * c_in, kh, kw], data)
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = conv2d_gemm(
            input,
            &self.weights[0],
            &self.bias,
            self.stride,
            self.padding,
        )?;
        let mut power = input.clone();
        for w in &self.weights[1..] {
            power = power.mul(input)?;
            conv2d_gemm_accumulate(&power, w, self.stride, self.padding, &mut out)?;
        }
        Ok(out)
    }

    /// Exact gradients; the input gradient applies `d(yᵠ)/dy = q·yᵠ⁻¹`.
    pub fn backward(&self, input: &Tensor, upstream: &Tensor) -> Result<OpConvGrads> {
        let (gx, gw) =
            conv2d_grad_gemm_parts(input, &self.weights[0], upstream, self.stride, self.padding)?;
        let mut grad_input = gx;
        let mut grad_weights = vec![gw];
        // power_prev = y^(q-1), power = y^q
        let mut power_prev = input.clone();
        for (i, w) in self.weights.iter().enumerate().skip(1) {
            let q = (i + 1) as f64;
            let power = power_prev.mul(input)?;
            let (gx, gw) = conv2d_grad_gemm_parts(&power, w, upstream, self.stride, self.padding)?;
            for ((acc, &g), &p) in grad_input
                .data_mut()
                .iter_mut()
                .zip(gx.data())
                .zip(power_prev.data())
            {
                *acc += q * p * g;
            }
            grad_weights.push(gw);
            power_prev = power;
        }
        Ok(OpConvGrads {
            input: grad_input,
            weights: grad_weights,
            bias: bias_grad(upstream)?,
        })
    }
}

/// Channel concatenation `[y, y², …, y^Q]`.
pub fn power_stack(y: &Tensor, order: usize) -> Result<Tensor> {
    if order == 0 {
        return Err(Error::config("power stack order must be >= 1"));
    }
    y.dims3()?;
    let powers: Vec<Tensor> = (1..=order).map(|q| y.map(|v| v.powi(q as i32))).collect();
    Tensor::concat_channels(&powers.iter().collect::<Vec<_>>())
}
