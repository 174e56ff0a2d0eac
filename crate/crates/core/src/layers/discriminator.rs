use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{OperationalConv2d, Parameterized};
use crate::numerics::{dense, dense_grad, Elementwise, Padding, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub in_channels: usize,
    /// Square input side the dense head is sized for.
    pub input_size: usize,
    pub channels: Vec<usize>,
    pub strides: Vec<usize>,
    pub kernel: usize,
    pub order: usize,
    pub dense_hidden: usize,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            input_size: 32,
            channels: vec![16, 32, 64, 128, 128],
            strides: vec![2, 2, 2, 2, 1],
            kernel: 4,
            order: 2,
            dense_hidden: 64,
        }
    }
}

impl DiscriminatorConfig {
    /// Full-resolution layout: 256×256 input, strides 4,4,4,2,2.
    pub fn full_scale() -> Self {
        Self {
            input_size: 256,
            strides: vec![4, 4, 4, 2, 2],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() || self.channels.len() != self.strides.len() {
            return Err(Error::config(format!(
                "discriminator needs one stride per layer ({} widths, {} strides)",
                self.channels.len(),
                self.strides.len()
            )));
        }
        if self.channels.contains(&0) || self.strides.contains(&0) {
            return Err(Error::config("widths and strides must be positive"));
        }
        if self.order == 0 || self.kernel == 0 || self.dense_hidden == 0 || self.in_channels == 0 {
            return Err(Error::config(
                "Q, kernel, dense width and channels must be positive",
            ));
        }
        let product: usize = self.strides.iter().product();
        if product > self.input_size {
            return Err(Error::config(format!(
                "stride product {product} exceeds input size {}: spatial collapse below 1x1",
                self.input_size
            )));
        }
        Ok(())
    }

    /// Spatial side after each layer, using "same" padding.
    pub fn spatial_sizes(&self) -> Vec<usize> {
        let mut s = self.input_size;
        self.strides
            .iter()
            .map(|&st| {
                s = s.div_ceil(st);
                s
            })
            .collect()
    }

    fn flat_len(&self) -> usize {
        let side = *self.spatial_sizes().last().unwrap_or(&self.input_size);
        side * side * self.channels.last().copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorNet {
    pub config: DiscriminatorConfig,
    pub convs: Vec<OperationalConv2d>,
    pub hidden_w: Tensor,
    pub hidden_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    conv_in: Vec<Tensor>,
    conv_out: Vec<Tensor>,
    hidden: Tensor,
    score: f64,
}

impl DiscriminatorTrace {
    pub fn score(&self) -> f64 {
        self.score
    }
}

impl DiscriminatorNet {
    pub fn build(config: &DiscriminatorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut convs = Vec::with_capacity(config.channels.len());
        let mut c_prev = config.in_channels;
        let mut size = config.input_size;
        for (&c, &s) in config.channels.iter().zip(&config.strides) {
            let pad = Padding::same(size, config.kernel, s);
            convs.push(OperationalConv2d::init(
                c_prev,
                c,
                config.kernel,
                config.order,
                s,
                pad,
                rng,
            )?);
            c_prev = c;
            size = size.div_ceil(s);
        }
        let flat = config.flat_len();
        let h = config.dense_hidden;
        let b1 = 1.0 / (flat as f64).sqrt();
        let hidden_w = Tensor::from_fn(&[h, flat], |_| rng.gen_range(-b1..b1));
        let b2 = 1.0 / (h as f64).sqrt();
        let head_w = Tensor::from_fn(&[1, h], |_| rng.gen_range(-b2..b2));
        Ok(Self {
            config: config.clone(),
            convs,
            hidden_w,
            hidden_b: Tensor::zeros(&[h]),
            head_w,
            head_b: Tensor::zeros(&[1]),
        })
    }

    /// Spatial side of the last feature map, before flattening.
    pub fn final_spatial(&self) -> usize {
        *self
            .config
            .spatial_sizes()
            .last()
            .expect("validated non-empty")
    }

    /// Confidence in (0, 1) that `x` is a real (ground-truth) image.
    pub fn score(&self, x: &Tensor) -> Result<f64> {
        Ok(self.forward_trace(x)?.score)
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<DiscriminatorTrace> {
        let (c, h, w) = x.dims3()?;
        let n = self.config.input_size;
        if c != self.config.in_channels || h != n || w != n {
            return Err(Error::dim(format!(
                "discriminator expects [{}, {n}, {n}], got [{c}, {h}, {w}]",
                self.config.in_channels
            )));
        }
        let mut conv_in = Vec::with_capacity(self.convs.len());
        let mut conv_out = Vec::with_capacity(self.convs.len());
        let mut a = x.clone();
        for layer in &self.convs {
            let z = layer.forward(&a)?;
            conv_in.push(a);
            a = z.map(f64::tanh);
            conv_out.push(a.clone());
        }
        let flat_len = a.len();
        let flat = a.reshape(&[flat_len])?;
        let hidden = dense(&flat, &self.hidden_w, &self.hidden_b)?.map(f64::tanh);
        let logit = dense(&hidden, &self.head_w, &self.head_b)?;
        let score = Elementwise::Sigmoid.apply_scalar(logit.data()[0]);
        Ok(DiscriminatorTrace {
            conv_in,
            conv_out,
            hidden,
            score,
        })
    }

    /// Gradients of a loss with `dL/dscore = upstream`: parameters in
    /// [`Parameterized::params`] order, then the input gradient.
    pub fn backward(
        &self,
        trace: &DiscriminatorTrace,
        upstream: f64,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        let s = trace.score;
        let g_logit = Tensor::scalar(upstream * s * (1.0 - s));
        let head = dense_grad(&trace.hidden, &self.head_w, &g_logit)?;
        let g_hpre = trace
            .hidden
            .zip_map(&head.input, |h, g| g * (1.0 - h * h))?;
        let last = trace.conv_out.last().expect("non-empty");
        let flat = last.clone().reshape(&[last.len()])?;
        let hid = dense_grad(&flat, &self.hidden_w, &g_hpre)?;
        let mut g_a = hid.input.reshape(last.shape())?;
        let mut conv_grads = vec![Vec::new(); self.convs.len()];
        for l in (0..self.convs.len()).rev() {
            let g_z = trace.conv_out[l].zip_map(&g_a, |a, g| g * (1.0 - a * a))?;
            let og = self.convs[l].backward(&trace.conv_in[l], &g_z)?;
            let mut p = og.weights;
            p.push(og.bias);
            conv_grads[l] = p;
            g_a = og.input;
        }
        let mut grads: Vec<Tensor> = conv_grads.into_iter().flatten().collect();
        grads.extend([hid.weights, hid.bias, head.weights, head.bias]);
        Ok((grads, g_a))
    }
}

impl Parameterized for DiscriminatorNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.convs.iter().enumerate() {
            for (q, w) in layer.weights.iter().enumerate() {
                out.push((format!("conv{l}.w{}", q + 1), w));
            }
            out.push((format!("conv{l}.bias"), &layer.bias));
        }
        out.push(("dense0.w".into(), &self.hidden_w));
        out.push(("dense0.bias".into(), &self.hidden_b));
        out.push(("dense1.w".into(), &self.head_w));
        out.push(("dense1.bias".into(), &self.head_b));
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.convs {
            out.extend(layer.weights.iter_mut());
            out.push(&mut layer.bias);
        }
        out.extend([
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.head_w,
            &mut self.head_b,
        ]);
        out
    }
}
