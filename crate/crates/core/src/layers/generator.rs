use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{OperationalConv2d, Parameterized};
use crate::numerics::{
    conv2d_gemm_accumulate, conv2d_grad_gemm_parts, upsample_nearest, upsample_nearest_grad,
    Padding, Tensor,
};

/// Encoder depth; the decoder mirrors it, for ten operational layers in total.
pub const LEVELS: usize = 5;
const SCALE: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub in_channels: usize,
    /// Output channels of the five encoder layers.
    pub encoder_channels: Vec<usize>,
    /// Taylor order Q of every layer.
    pub order: usize,
    pub encoder_kernel: usize,
    pub decoder_kernel: usize,
    /// Concatenate encoder level `i` into decoder level `5 - i`.
    pub skip_connections: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            in_channels: 3,
            encoder_channels: vec![16, 32, 64, 64, 64],
            order: 3,
            encoder_kernel: 7,
            decoder_kernel: 5,
            skip_connections: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.encoder_channels.len() != LEVELS {
            return Err(Error::config(format!(
                "generator needs {LEVELS} encoder widths, got {}",
                self.encoder_channels.len()
            )));
        }
        if self.in_channels == 0 || self.encoder_channels.contains(&0) {
            return Err(Error::config("channel counts must be positive"));
        }
        if self.order == 0 {
            return Err(Error::config("Q must be >= 1"));
        }
        for k in [self.encoder_kernel, self.decoder_kernel] {
            if k % 2 == 0 {
                return Err(Error::config(format!(
                    "generator kernels must be odd, got {k}"
                )));
            }
        }
        Ok(())
    }

    /// Input channels of decoder block `d` (0-based, coarsest first).
    fn decoder_in(&self, d: usize) -> usize {
        let prev = if d == 0 {
            self.encoder_channels[LEVELS - 1]
        } else {
            self.decoder_out(d - 1)
        };
        prev + self.skip_channels(d)
    }

    fn decoder_out(&self, d: usize) -> usize {
        if d + 1 < LEVELS {
            self.encoder_channels[LEVELS - 2 - d]
        } else {
            self.in_channels
        }
    }

    fn skip_channels(&self, d: usize) -> usize {
        if self.skip_connections && d + 1 < LEVELS {
            self.encoder_channels[LEVELS - 2 - d]
        } else {
            0
        }
    }

    /// Inputs must halve cleanly five times.
    pub fn check_spatial(&self, h: usize, w: usize) -> Result<()> {
        let m = SCALE.pow(LEVELS as u32);
        if !h.is_multiple_of(m) || !w.is_multiple_of(m) || h == 0 || w == 0 {
            return Err(Error::config(format!(
                "generator input {h}x{w} is not divisible by {m}"
            )));
        }
        Ok(())
    }
}

/// Nearest ×2 upsample, optional skip concatenation, one operational layer,
/// and a residual path (1×1 projection when widths differ) before `tanh`.
#[derive(Debug, Clone, PartialEq)]
pub struct UpBlock {
    pub conv: OperationalConv2d,
    pub projection: Option<Tensor>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorNet {
    pub config: GeneratorConfig,
    pub encoder: Vec<OperationalConv2d>,
    pub decoder: Vec<UpBlock>,
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    enc_in: Vec<Tensor>,
    enc_out: Vec<Tensor>,
    dec_in: Vec<Tensor>,
    dec_out: Vec<Tensor>,
}

impl GeneratorTrace {
    pub fn output(&self) -> &Tensor {
        self.dec_out.last().expect("decoder is never empty")
    }
}

fn tanh_backward(out: &Tensor, upstream: &Tensor) -> Tensor {
    Tensor::from_raw(
        out.shape().to_vec(),
        out.data()
            .iter()
            .zip(upstream.data())
            .map(|(&a, &g)| g * (1.0 - a * a))
            .collect(),
    )
}

fn tanh(t: Tensor) -> Tensor {
    let mut t = t;
    t.data_mut().iter_mut().for_each(|v| *v = v.tanh());
    t
}

impl GeneratorNet {
    pub fn build(config: &GeneratorConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let q = config.order;
        let ek = config.encoder_kernel;
        let dk = config.decoder_kernel;
        let mut encoder = Vec::with_capacity(LEVELS);
        let mut c_prev = config.in_channels;
        for &c in &config.encoder_channels {
            encoder.push(OperationalConv2d::init(
                c_prev,
                c,
                ek,
                q,
                SCALE,
                Padding::symmetric(ek / 2),
                rng,
            )?);
            c_prev = c;
        }
        let mut decoder = Vec::with_capacity(LEVELS);
        for d in 0..LEVELS {
            let (ci, co) = (config.decoder_in(d), config.decoder_out(d));
            let conv = OperationalConv2d::init(ci, co, dk, q, 1, Padding::symmetric(dk / 2), rng)?;
            let projection = (ci != co).then(|| {
                let bound = 1.0 / (ci as f64).sqrt();
                Tensor::from_fn(&[co, ci, 1, 1], |_| rng.gen_range(-bound..bound))
            });
            decoder.push(UpBlock { conv, projection });
        }
        Ok(Self {
            config: config.clone(),
            encoder,
            decoder,
        })
    }

    pub fn operational_layer_count(&self) -> usize {
        self.encoder.len() + self.decoder.len()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        let (c, h, w) = x.dims3()?;
        if c != self.config.in_channels {
            return Err(Error::dim(format!(
                "generator expects {} channels, got {c}",
                self.config.in_channels
            )));
        }
        self.config.check_spatial(h, w)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_trace(x)?.dec_out.pop().expect("non-empty"))
    }

    pub fn forward_trace(&self, x: &Tensor) -> Result<GeneratorTrace> {
        self.check_input(x)?;
        let mut enc_in = Vec::with_capacity(LEVELS);
        let mut enc_out: Vec<Tensor> = Vec::with_capacity(LEVELS);
        let mut a = x.clone();
        for layer in &self.encoder {
            let z = layer.forward(&a)?;
            enc_in.push(a);
            a = tanh(z);
            enc_out.push(a.clone());
        }
        let mut dec_in = Vec::with_capacity(LEVELS);
        let mut dec_out = Vec::with_capacity(LEVELS);
        let mut h = a;
        for (d, block) in self.decoder.iter().enumerate() {
            let up = upsample_nearest(&h, SCALE)?;
            let u = if self.config.skip_channels(d) > 0 {
                Tensor::concat_channels(&[&up, &enc_out[LEVELS - 2 - d]])?
            } else {
                up
            };
            let mut z = block.conv.forward(&u)?;
            match &block.projection {
                Some(p) => conv2d_gemm_accumulate(&u, p, 1, Padding::default(), &mut z)?,
                None => z.add_assign(&u)?,
            }
            h = tanh(z);
            dec_in.push(u);
            dec_out.push(h.clone());
        }
        Ok(GeneratorTrace {
            enc_in,
            enc_out,
            dec_in,
            dec_out,
        })
    }

    /// Returns parameter gradients in [`Parameterized::params`] order and
    /// the gradient with respect to the network input.
    pub fn backward(
        &self,
        trace: &GeneratorTrace,
        upstream: &Tensor,
    ) -> Result<(Vec<Tensor>, Tensor)> {
        trace.output().check_same_shape(upstream)?;
        let mut enc_grads: Vec<Option<Tensor>> = vec![None; LEVELS];
        let mut dec_param_grads: Vec<Vec<Tensor>> = vec![Vec::new(); LEVELS];
        let mut g_h = upstream.clone();
        for d in (0..LEVELS).rev() {
            let block = &self.decoder[d];
            let u = &trace.dec_in[d];
            let g_z = tanh_backward(&trace.dec_out[d], &g_h);
            let og = block.conv.backward(u, &g_z)?;
            let mut g_u = og.input;
            let mut params = og.weights;
            params.push(og.bias);
            match &block.projection {
                Some(p) => {
                    let (gx, gp) = conv2d_grad_gemm_parts(u, p, &g_z, 1, Padding::default())?;
                    g_u.add_assign(&gx)?;
                    params.push(gp);
                }
                None => g_u.add_assign(&g_z)?,
            }
            dec_param_grads[d] = params;
            let skip = self.config.skip_channels(d);
            let up_channels = u.shape()[0] - skip;
            let g_up = if skip > 0 {
                let mut parts = g_u.split_channels(&[up_channels, skip])?;
                let g_skip = parts.pop().expect("two parts");
                accumulate(&mut enc_grads[LEVELS - 2 - d], g_skip)?;
                parts.pop().expect("two parts")
            } else {
                g_u
            };
            g_h = upsample_nearest_grad(&g_up, SCALE)?;
        }
        accumulate(&mut enc_grads[LEVELS - 1], g_h)?;

        let mut enc_param_grads: Vec<Vec<Tensor>> = vec![Vec::new(); LEVELS];
        let mut g_input = None;
        for l in (0..LEVELS).rev() {
            let g_a = enc_grads[l]
                .take()
                .expect("every encoder level receives gradient");
            let g_z = tanh_backward(&trace.enc_out[l], &g_a);
            let og = self.encoder[l].backward(&trace.enc_in[l], &g_z)?;
            let mut params = og.weights;
            params.push(og.bias);
            enc_param_grads[l] = params;
            if l > 0 {
                accumulate(&mut enc_grads[l - 1], og.input)?;
            } else {
                g_input = Some(og.input);
            }
        }
        let grads = enc_param_grads
            .into_iter()
            .chain(dec_param_grads)
            .flatten()
            .collect();
        Ok((grads, g_input.expect("encoder is never empty")))
    }
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) -> Result<()> {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

impl Parameterized for GeneratorNet {
    fn params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (l, layer) in self.encoder.iter().enumerate() {
            for (q, w) in layer.weights.iter().enumerate() {
                out.push((format!("enc{l}.w{}", q + 1), w));
            }
            out.push((format!("enc{l}.bias"), &layer.bias));
        }
        for (d, block) in self.decoder.iter().enumerate() {
            for (q, w) in block.conv.weights.iter().enumerate() {
                out.push((format!("dec{d}.w{}", q + 1), w));
            }
            out.push((format!("dec{d}.bias"), &block.conv.bias));
            if let Some(p) = &block.projection {
                out.push((format!("dec{d}.proj"), p));
            }
        }
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for layer in &mut self.encoder {
            out.extend(layer.weights.iter_mut());
            out.push(&mut layer.bias);
        }
        for block in &mut self.decoder {
            out.extend(block.conv.weights.iter_mut());
            out.push(&mut block.conv.bias);
            if let Some(p) = &mut block.projection {
                out.push(p);
            }
        }
        out
    }
}
