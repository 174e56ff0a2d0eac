//! Central finite-difference verification of analytic gradients.

use rand::seq::index::sample;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{conv2d, conv2d_grad, Padding, Tensor};
use crate::rng;

/// A scalar-valued computation whose inputs and parameters can be perturbed.
pub trait Differentiable {
    /// Every tensor whose gradient is verified, with a stable name.
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)>;
    fn loss(&self) -> Result<f64>;
    /// Analytic gradients, aligned with [`Differentiable::tensors_mut`].
    fn gradients(&self) -> Result<Vec<Tensor>>;
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub step: f64,
    /// `None` checks every coordinate; `Some(n)` checks `n` seeded random
    /// coordinates per tensor (all of them when the tensor is smaller).
    pub probes_per_tensor: Option<usize>,
    pub seed: u64,
    /// The relative-error denominator is never smaller than this fraction
    /// of the largest analytic gradient magnitude. Coordinates whose true
    /// gradient sits at the finite-difference noise level (≈1e-11 for
    /// h = 1e-5 in f64) are thereby compared on the scale of the model's
    /// gradients instead of their own.
    pub floor_fraction: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            probes_per_tensor: None,
            seed: 0,
            floor_fraction: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Worst {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Denominator floor actually applied.
    pub floor: f64,
    pub checked: usize,
    pub worst: Option<Worst>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn finite_loss(model: &dyn Differentiable) -> Result<f64> {
    let l = model.loss()?;
    if !l.is_finite() {
        return Err(Error::NonFinite(format!("gradcheck loss evaluated to {l}")));
    }
    Ok(l)
}

fn perturb(model: &mut dyn Differentiable, t: usize, j: usize, value: f64) {
    let mut ts = model.tensors_mut();
    ts[t].1.data_mut()[j] = value;
}

pub fn gradcheck(
    model: &mut dyn Differentiable,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    finite_loss(model)?;
    let grads = model.gradients()?;
    let sizes: Vec<(String, usize)> = model
        .tensors_mut()
        .into_iter()
        .map(|(n, t)| (n, t.len()))
        .collect();
    if grads.len() != sizes.len() {
        return Err(Error::dim(format!(
            "{} gradients for {} tensors",
            grads.len(),
            sizes.len()
        )));
    }
    let grad_scale = grads
        .iter()
        .flat_map(|g| g.data())
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let floor = (opts.floor_fraction * grad_scale).max(f64::MIN_POSITIVE);
    let mut pick = rng::stream(opts.seed, "gradcheck/probes");
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        floor,
        checked: 0,
        worst: None,
    };
    for (t, (name, len)) in sizes.iter().enumerate() {
        if grads[t].len() != *len {
            return Err(Error::dim(format!("gradient for {name} has wrong size")));
        }
        let mut coords: Vec<usize> = match opts.probes_per_tensor {
            Some(n) if n < *len => sample(&mut pick, *len, n).into_vec(),
            _ => (0..*len).collect(),
        };
        coords.sort_unstable();
        for j in coords {
            let orig = model.tensors_mut()[t].1.data()[j];
            perturb(model, t, j, orig + opts.step);
            let plus = finite_loss(model)?;
            perturb(model, t, j, orig - opts.step);
            let minus = finite_loss(model)?;
            perturb(model, t, j, orig);
            let numeric = (plus - minus) / (2.0 * opts.step);
            let analytic = grads[t].data()[j];
            let err = relative_error(analytic, numeric, floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(err);
                report.worst = Some(Worst {
                    tensor: name.clone(),
                    index: j,
                    analytic,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}

/// Mean-squared-error head: `mean((out - target)²)` and its gradient.
pub fn mse(out: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    out.check_same_shape(target)?;
    let n = out.len() as f64;
    let diff = out.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
    Ok((loss, diff.scale(2.0 / n)))
}

/// Plain convolution followed by an MSE head.
#[derive(Debug, Clone)]
pub struct ConvProbe {
    pub input: Tensor,
    pub weights: Tensor,
    pub bias: Tensor,
    pub target: Tensor,
    pub stride: usize,
    pub padding: Padding,
}

impl ConvProbe {
    pub fn random(
        seed: u64,
        input: &[usize],
        weights: &[usize],
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let mut r = rng::stream(seed, "gradcheck/conv");
        let mut fill = |shape: &[usize]| Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0));
        let input_t = fill(input);
        let weights_t = fill(weights);
        let bias = fill(&weights[..1]);
        let out = conv2d(&input_t, &weights_t, &bias, stride, padding)?;
        let target = fill(out.shape());
        Ok(Self {
            input: input_t,
            weights: weights_t,
            bias,
            target,
            stride,
            padding,
        })
    }
}

impl Differentiable for ConvProbe {
    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![
            ("input".into(), &mut self.input),
            ("weights".into(), &mut self.weights),
            ("bias".into(), &mut self.bias),
        ]
    }

    fn loss(&self) -> Result<f64> {
        let out = conv2d(
            &self.input,
            &self.weights,
            &self.bias,
            self.stride,
            self.padding,
        )?;
        Ok(mse(&out, &self.target)?.0)
    }

    fn gradients(&self) -> Result<Vec<Tensor>> {
        let out = conv2d(
            &self.input,
            &self.weights,
            &self.bias,
            self.stride,
            self.padding,
        )?;
        let (_, up) = mse(&out, &self.target)?;
        let g = conv2d_grad(&self.input, &self.weights, &up, self.stride, self.padding)?;
        Ok(vec![g.input, g.weights, g.bias])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_probe_passes() {
        let mut p =
            ConvProbe::random(11, &[2, 6, 6], &[3, 2, 3, 3], 1, Padding::symmetric(1)).unwrap();
        let r = gradcheck(&mut p, &GradCheckOptions::default()).unwrap();
        assert_eq!(r.checked, 72 + 54 + 3);
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn strided_conv_probe_passes() {
        let mut p = ConvProbe::random(
            12,
            &[2, 7, 7],
            &[2, 2, 3, 3],
            2,
            Padding { begin: 1, end: 0 },
        )
        .unwrap();
        let r = gradcheck(&mut p, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_input_zero_weights_give_zero_gradients() {
        let mut p =
            ConvProbe::random(3, &[1, 4, 4], &[1, 1, 3, 3], 1, Padding::symmetric(1)).unwrap();
        p.input = Tensor::zeros(&[1, 4, 4]);
        p.weights = Tensor::zeros(&[1, 1, 3, 3]);
        p.bias = Tensor::zeros(&[1]);
        p.target = Tensor::zeros(&[1, 4, 4]);
        let g = p.gradients().unwrap();
        assert!(g.iter().all(|t| t.data().iter().all(|&v| v == 0.0)));
    }

    /// A deliberately wrong gradient must be flagged.
    struct Broken(Tensor);
    impl Differentiable for Broken {
        fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            vec![("x".into(), &mut self.0)]
        }
        fn loss(&self) -> Result<f64> {
            Ok(self.0.data().iter().map(|v| v * v).sum())
        }
        fn gradients(&self) -> Result<Vec<Tensor>> {
            Ok(vec![self.0.scale(3.0)])
        }
    }

    #[test]
    fn detects_wrong_gradient() {
        let mut b = Broken(Tensor::from_fn(&[4], |i| 0.5 + i as f64));
        let r = gradcheck(&mut b, &GradCheckOptions::default()).unwrap();
        assert!(r.max_rel_error > 0.3);
    }

    struct NanLoss(Tensor);
    impl Differentiable for NanLoss {
        fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            vec![("x".into(), &mut self.0)]
        }
        fn loss(&self) -> Result<f64> {
            Ok(f64::NAN)
        }
        fn gradients(&self) -> Result<Vec<Tensor>> {
            Ok(vec![self.0.clone()])
        }
    }

    #[test]
    fn non_finite_loss_is_diagnosed() {
        let mut n = NanLoss(Tensor::zeros(&[1]));
        assert!(matches!(
            gradcheck(&mut n, &GradCheckOptions::default()),
            Err(Error::NonFinite(_))
        ));
    }
}
