use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{DiscriminatorNet, GeneratorNet, GeneratorTrace};
use crate::numerics::Tensor;

/// Center of the real-label interval.
pub const REAL_LABEL: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Real,
    Fake,
}

/// Fake labels are uniform on `[0, 2ε]`, real labels on `[0.9 − ε, 0.9 + ε]`.
pub fn sample_smoothed_label(kind: LabelKind, eps: f64, rng: &mut impl Rng) -> f64 {
    let u: f64 = rng.gen();
    let width = 2.0 * eps;
    match kind {
        LabelKind::Fake => u * width,
        LabelKind::Real if eps == 0.0 => REAL_LABEL,
        LabelKind::Real => REAL_LABEL - eps + u * width,
    }
}

#[derive(Debug, Clone)]
pub struct DiscriminatorLoss {
    pub loss: f64,
    /// Gradients for the discriminator parameters only.
    pub grads: Vec<Tensor>,
    pub fake_scores: Vec<f64>,
    pub real_score: f64,
}

/// Squared error of the discriminator against the given labels over every
/// fake image plus the real image. Fakes enter as constants, so no gradient
/// reaches the generators.
pub fn discriminator_loss_with_labels(
    od: &DiscriminatorNet,
    fakes: &[Tensor],
    real: &Tensor,
    fake_labels: &[f64],
    real_label: f64,
) -> Result<DiscriminatorLoss> {
    if fakes.is_empty() {
        return Err(Error::config(
            "discriminator loss needs at least one generator output",
        ));
    }
    if fakes.len() != fake_labels.len() {
        return Err(Error::dim(format!(
            "{} fake images but {} labels",
            fakes.len(),
            fake_labels.len()
        )));
    }
    let mut loss = 0.0;
    let mut grads: Option<Vec<Tensor>> = None;
    let mut term = |x: &Tensor, label: f64| -> Result<f64> {
        let trace = od.forward_trace(x)?;
        let s = trace.score();
        loss += (s - label).powi(2);
        let (g, _) = od.backward(&trace, 2.0 * (s - label))?;
        match &mut grads {
            None => grads = Some(g),
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    a.add_assign(b)?;
                }
            }
        }
        Ok(s)
    };
    let fake_scores = fakes
        .iter()
        .zip(fake_labels)
        .map(|(f, &l)| term(f, l))
        .collect::<Result<Vec<_>>>()?;
    let real_score = term(real, real_label)?;
    Ok(DiscriminatorLoss {
        loss,
        grads: grads.expect("at least one term"),
        fake_scores,
        real_score,
    })
}

/// Discriminator loss with freshly sampled smoothed labels, fakes first.
pub fn discriminator_loss(
    od: &DiscriminatorNet,
    fakes: &[Tensor],
    real: &Tensor,
    eps: f64,
    rng: &mut impl Rng,
) -> Result<DiscriminatorLoss> {
    let fake_labels: Vec<f64> = fakes
        .iter()
        .map(|_| sample_smoothed_label(LabelKind::Fake, eps, rng))
        .collect();
    let real_label = sample_smoothed_label(LabelKind::Real, eps, rng);
    discriminator_loss_with_labels(od, fakes, real, &fake_labels, real_label)
}

#[derive(Debug, Clone)]
pub struct GeneratorLoss {
    pub loss: f64,
    pub adversarial: f64,
    /// Mean absolute error against the target, before weighting.
    pub reconstruction: f64,
    /// Gradients for the generator parameters only.
    pub grads: Vec<Tensor>,
    pub score: f64,
}

/// `(OD(out) − 0.9)² + λ·mean|out − target|` for a traced generator pass.
/// The discriminator is only differentiated with respect to its input.
pub fn generator_loss_traced(
    og: &GeneratorNet,
    trace: &GeneratorTrace,
    od: &DiscriminatorNet,
    target: &Tensor,
    lambda_rec: f64,
) -> Result<GeneratorLoss> {
    let out = trace.output();
    out.check_same_shape(target)?;
    let d_trace = od.forward_trace(out)?;
    let score = d_trace.score();
    let adversarial = (score - REAL_LABEL).powi(2);
    let (_, mut upstream) = od.backward(&d_trace, 2.0 * (score - REAL_LABEL))?;
    let n = out.len() as f64;
    let reconstruction = out
        .data()
        .iter()
        .zip(target.data())
        .map(|(o, t)| (o - t).abs())
        .sum::<f64>()
        / n;
    if lambda_rec > 0.0 {
        let k = lambda_rec / n;
        for ((g, o), t) in upstream
            .data_mut()
            .iter_mut()
            .zip(out.data())
            .zip(target.data())
        {
            *g += k * sign(o - t);
        }
    }
    let (grads, _) = og.backward(trace, &upstream)?;
    Ok(GeneratorLoss {
        loss: adversarial + lambda_rec * reconstruction,
        adversarial,
        reconstruction,
        grads,
        score,
    })
}

pub fn generator_loss(
    og: &GeneratorNet,
    od: &DiscriminatorNet,
    input: &Tensor,
    target: &Tensor,
    lambda_rec: f64,
) -> Result<GeneratorLoss> {
    let trace = og.forward_trace(input)?;
    generator_loss_traced(og, &trace, od, target, lambda_rec)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{DiscriminatorConfig, GeneratorConfig, Parameterized};
    use crate::numerics::{gradcheck, Differentiable, GradCheckOptions};
    use crate::rng;

    fn small_disc(seed: u64) -> DiscriminatorNet {
        let cfg = DiscriminatorConfig {
            channels: vec![4, 4, 4, 4, 4],
            dense_hidden: 8,
            ..DiscriminatorConfig::default()
        };
        DiscriminatorNet::build(&cfg, &mut rng::stream(seed, "test/od")).unwrap()
    }

    /// Discriminator whose score is exactly 0.5 for every input.
    fn constant_half(seed: u64) -> DiscriminatorNet {
        let mut d = small_disc(seed);
        d.head_w = Tensor::zeros(d.head_w.shape());
        d.head_b = Tensor::zeros(&[1]);
        d
    }

    fn image(seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "test/img");
        Tensor::from_fn(&[3, 32, 32], |_| r.gen_range(-1.0..1.0))
    }

    #[test]
    fn degenerate_labels() {
        let mut r = rng::stream(0, "labels");
        assert_eq!(sample_smoothed_label(LabelKind::Fake, 0.0, &mut r), 0.0);
        assert_eq!(sample_smoothed_label(LabelKind::Real, 0.0, &mut r), 0.9);
    }

    #[test]
    fn label_ranges_over_many_draws() {
        let mut r = rng::stream(1, "labels");
        let eps = 0.05;
        let n = 100_000;
        let mut fake_sum = 0.0;
        for _ in 0..n {
            let f = sample_smoothed_label(LabelKind::Fake, eps, &mut r);
            let t = sample_smoothed_label(LabelKind::Real, eps, &mut r);
            assert!((0.0..=0.1).contains(&f));
            assert!((0.85..=0.95).contains(&t));
            fake_sum += f;
        }
        assert!((fake_sum / n as f64 - 0.05).abs() < 0.005);
    }

    #[test]
    fn constant_discriminator_per_term_losses() {
        let d = constant_half(2);
        let fakes = vec![image(1), image(2), image(3)];
        let l = discriminator_loss(&d, &fakes, &image(4), 0.0, &mut rng::stream(0, "l")).unwrap();
        assert!((l.loss - (3.0 * 0.25 + 0.16)).abs() < 1e-12);
        assert!(l.fake_scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn perfect_discriminator_has_zero_loss() {
        let d = constant_half(3);
        let l = discriminator_loss_with_labels(&d, &[image(1)], &image(2), &[0.5], 0.5).unwrap();
        assert_eq!(l.loss, 0.0);
        assert!(l.grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn missing_generator_output_is_config_error() {
        let d = small_disc(4);
        assert!(matches!(
            discriminator_loss(&d, &[], &image(1), 0.05, &mut rng::stream(0, "l")),
            Err(Error::Config(_))
        ));
    }

    struct DiscLossProbe {
        od: DiscriminatorNet,
        fakes: Vec<Tensor>,
        real: Tensor,
        labels: Vec<f64>,
    }

    impl Differentiable for DiscLossProbe {
        fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
            let names: Vec<String> = self.od.params().into_iter().map(|(n, _)| n).collect();
            names.into_iter().zip(self.od.params_mut()).collect()
        }
        fn loss(&self) -> Result<f64> {
            Ok(discriminator_loss_with_labels(
                &self.od,
                &self.fakes,
                &self.real,
                &self.labels,
                0.87,
            )?
            .loss)
        }
        fn gradients(&self) -> Result<Vec<Tensor>> {
            Ok(discriminator_loss_with_labels(
                &self.od,
                &self.fakes,
                &self.real,
                &self.labels,
                0.87,
            )?
            .grads)
        }
    }

    #[test]
    fn discriminator_loss_gradients_match_finite_differences() {
        let mut probe = DiscLossProbe {
            od: DiscriminatorNet::build(&DiscriminatorConfig::default(), &mut rng::stream(5, "od"))
                .unwrap(),
            fakes: vec![image(5), image(6), image(7)],
            real: image(8),
            labels: vec![0.02, 0.07, 0.0],
        };
        let opts = GradCheckOptions {
            probes_per_tensor: Some(4),
            seed: 5,
            ..GradCheckOptions::default()
        };
        let r = gradcheck(&mut probe, &opts).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn generator_loss_closed_forms() {
        let og =
            GeneratorNet::build(&GeneratorConfig::default(), &mut rng::stream(6, "og")).unwrap();
        let x = image(9);
        let out = og.forward(&x).unwrap();
        let mut d = constant_half(7);
        // sigmoid(logit) = 0.4 with a zero head weight
        d.head_b = Tensor::scalar((0.4f64 / 0.6).ln());
        let l = generator_loss(&og, &d, &x, &out, 0.0).unwrap();
        assert!((l.loss - 0.25).abs() < 1e-12);
        d.head_b = Tensor::scalar((0.9f64 / 0.1).ln());
        let l = generator_loss(&og, &d, &x, &out, 1.0).unwrap();
        assert!(l.loss < 1e-24, "{}", l.loss);
        assert_eq!(l.reconstruction, 0.0);
    }
}
