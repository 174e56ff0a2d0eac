//! Gradient-check probes for each differentiable building block, each
//! closed by an MSE head against a random target.

use rand::Rng;
use serde::Serialize;

use crate::error::Result;
use crate::layers::{
    DiscriminatorConfig, DiscriminatorNet, GeneratorConfig, GeneratorNet, OperationalConv2d,
    Parameterized,
};
use crate::numerics::gradcheck::{mse, ConvProbe};
use crate::numerics::{
    gradcheck, Differentiable, GradCheckOptions, GradCheckReport, Padding, Tensor,
};
use crate::rng;

fn uniform(shape: &[usize], r: &mut impl Rng) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// One operational layer followed by `tanh`.
pub struct OpLayerProbe {
    pub layer: OperationalConv2d,
    pub input: Tensor,
    pub target: Tensor,
}

impl OpLayerProbe {
    pub fn random(seed: u64, c_in: usize, c_out: usize, size: usize, order: usize) -> Result<Self> {
        let mut r = rng::stream(seed, "verify/oplayer");
        let mut layer =
            OperationalConv2d::init(c_in, c_out, 3, order, 1, Padding::symmetric(1), &mut r)?;
        layer.bias = uniform(&[c_out], &mut r).scale(0.5);
        let input = uniform(&[c_in, size, size], &mut r);
        let target = uniform(&[c_out, size, size], &mut r);
        Ok(Self {
            layer,
            input,
            target,
        })
    }

    fn out(&self) -> Result<Tensor> {
        Ok(self.layer.forward(&self.input)?.map(f64::tanh))
    }
}

impl Differentiable for OpLayerProbe {
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<(String, &mut Tensor)> = vec![("input".into(), &mut self.input)];
        for (q, w) in self.layer.weights.iter_mut().enumerate() {
            v.push((format!("w{}", q + 1), w));
        }
        v.push(("bias".into(), &mut self.layer.bias));
        v
    }

    fn loss(&self) -> Result<f64> {
        Ok(mse(&self.out()?, &self.target)?.0)
    }

    fn gradients(&self) -> Result<Vec<Tensor>> {
        let out = self.out()?;
        let (_, up) = mse(&out, &self.target)?;
        let g_z = out.zip_map(&up, |a, g| g * (1.0 - a * a))?;
        let g = self.layer.backward(&self.input, &g_z)?;
        let mut v = vec![g.input];
        v.extend(g.weights);
        v.push(g.bias);
        Ok(v)
    }
}

pub struct GeneratorProbe {
    pub net: GeneratorNet,
    pub input: Tensor,
    pub target: Tensor,
}

impl GeneratorProbe {
    pub fn random(seed: u64, config: &GeneratorConfig, size: usize) -> Result<Self> {
        let net = GeneratorNet::build(config, &mut rng::stream(seed, "verify/generator/init"))?;
        let mut r = rng::stream(seed, "verify/generator/data");
        let input = uniform(&[config.in_channels, size, size], &mut r);
        let target = uniform(&[config.in_channels, size, size], &mut r);
        Ok(Self { net, input, target })
    }
}

impl Differentiable for GeneratorProbe {
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self.net.params().into_iter().map(|(n, _)| n).collect();
        let mut v: Vec<(String, &mut Tensor)> = vec![("input".into(), &mut self.input)];
        v.extend(names.into_iter().zip(self.net.params_mut()));
        v
    }

    fn loss(&self) -> Result<f64> {
        Ok(mse(&self.net.forward(&self.input)?, &self.target)?.0)
    }

    fn gradients(&self) -> Result<Vec<Tensor>> {
        let trace = self.net.forward_trace(&self.input)?;
        let (_, up) = mse(trace.output(), &self.target)?;
        let (grads, gx) = self.net.backward(&trace, &up)?;
        let mut v = vec![gx];
        v.extend(grads);
        Ok(v)
    }
}

pub struct DiscriminatorProbe {
    pub net: DiscriminatorNet,
    pub input: Tensor,
    pub target: f64,
}

impl DiscriminatorProbe {
    pub fn random(seed: u64, config: &DiscriminatorConfig) -> Result<Self> {
        let net =
            DiscriminatorNet::build(config, &mut rng::stream(seed, "verify/discriminator/init"))?;
        let mut r = rng::stream(seed, "verify/discriminator/data");
        let n = config.input_size;
        let input = uniform(&[config.in_channels, n, n], &mut r);
        let target = r.gen_range(0.0..1.0);
        Ok(Self { net, input, target })
    }
}

impl Differentiable for DiscriminatorProbe {
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names: Vec<String> = self.net.params().into_iter().map(|(n, _)| n).collect();
        let mut v: Vec<(String, &mut Tensor)> = vec![("input".into(), &mut self.input)];
        v.extend(names.into_iter().zip(self.net.params_mut()));
        v
    }

    fn loss(&self) -> Result<f64> {
        let s = self.net.score(&self.input)?;
        Ok((s - self.target).powi(2))
    }

    fn gradients(&self) -> Result<Vec<Tensor>> {
        let trace = self.net.forward_trace(&self.input)?;
        let (grads, gx) = self
            .net
            .backward(&trace, 2.0 * (trace.score() - self.target))?;
        let mut v = vec![gx];
        v.extend(grads);
        Ok(v)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NamedReport {
    pub name: String,
    pub report: GradCheckReport,
}

/// Probes checked per tensor for the full networks; small probes check
/// every coordinate.
pub const NETWORK_PROBES_PER_TENSOR: usize = 6;

/// The four standard checks: plain conv, Q=3 operational layer + tanh, the
/// desk-scale generator and the desk-scale discriminator.
pub fn standard_gradchecks(seed: u64, network_probes: usize) -> Result<Vec<NamedReport>> {
    let exhaustive = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let sampled = GradCheckOptions {
        probes_per_tensor: Some(network_probes),
        ..exhaustive
    };
    let mut out = Vec::new();
    let mut conv = ConvProbe::random(seed, &[2, 6, 6], &[3, 2, 3, 3], 1, Padding::symmetric(1))?;
    out.push(NamedReport {
        name: "conv2d".into(),
        report: gradcheck(&mut conv, &exhaustive)?,
    });
    let mut op = OpLayerProbe::random(seed, 2, 3, 6, 3)?;
    out.push(NamedReport {
        name: "operational_q3_tanh".into(),
        report: gradcheck(&mut op, &exhaustive)?,
    });
    let mut g = GeneratorProbe::random(seed, &GeneratorConfig::default(), 32)?;
    out.push(NamedReport {
        name: "generator".into(),
        report: gradcheck(&mut g, &sampled)?,
    });
    let mut d = DiscriminatorProbe::random(seed, &DiscriminatorConfig::default())?;
    out.push(NamedReport {
        name: "discriminator".into(),
        report: gradcheck(&mut d, &sampled)?,
    });
    Ok(out)
}
