use std::path::Path;

use rayon::prelude::*;

use crate::data::{denormalize, psnr, Partition};
use crate::error::{Error, Result};
use crate::layers::{DiscriminatorNet, GeneratorNet};
use crate::numerics::Tensor;
use crate::training::{expert_file, load_checkpoint, DISCRIMINATOR_FILE};

/// Index of the largest value; ties go to the lowest index.
pub fn argmax_first(values: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some(b) if v <= values[b] => {}
            _ if v.is_nan() => {}
            _ => best = Some(i),
        }
    }
    best
}

/// Three expert generators (LQ, MQ, HQ) and the shared discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpertSet {
    pub generators: Vec<GeneratorNet>,
    pub discriminator: DiscriminatorNet,
}

impl ExpertSet {
    pub fn new(generators: Vec<GeneratorNet>, discriminator: DiscriminatorNet) -> Result<Self> {
        let first = generators
            .first()
            .ok_or_else(|| Error::config("at least one generator is required"))?;
        if generators.iter().any(|g| g.config != first.config) {
            return Err(Error::config(
                "expert generators use different architectures",
            ));
        }
        if first.config.in_channels != discriminator.config.in_channels {
            return Err(Error::config(
                "generator and discriminator channel counts differ",
            ));
        }
        Ok(Self {
            generators,
            discriminator,
        })
    }

    /// Loads `expert_lq.ckpt`, `expert_mq.ckpt`, `expert_hq.ckpt` and
    /// `discriminator.ckpt` from `dir`; every expert must share the first
    /// one's architecture.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let mut generators: Vec<GeneratorNet> = Vec::with_capacity(3);
        for p in Partition::EXPERTS {
            let expected = generators.first().map(|g| g.config.clone());
            let ckpt =
                load_checkpoint::<GeneratorNet>(dir.join(expert_file(p)), expected.as_ref())?;
            generators.push(ckpt.net);
        }
        let d = load_checkpoint::<DiscriminatorNet>(dir.join(DISCRIMINATOR_FILE), None)?;
        Self::new(generators, d.net)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Restorations in [−1, 1], one per generator.
    pub outputs: Vec<Tensor>,
    /// Discriminator confidence for each restoration.
    pub scores: Vec<f64>,
    pub chosen_index: usize,
    /// PSNR of each denormalized restoration against ground truth.
    pub psnrs: Option<Vec<f64>>,
    pub oracle_index: Option<usize>,
}

impl SelectionResult {
    pub fn chosen(&self) -> &Tensor {
        &self.outputs[self.chosen_index]
    }

    /// Adds per-generator PSNRs and the oracle choice for an 8-bit target.
    pub fn attach_ground_truth(&mut self, target: &Tensor) -> Result<()> {
        let psnrs = output_psnrs(&self.outputs, target)?;
        self.oracle_index = argmax_first(&psnrs);
        self.psnrs = Some(psnrs);
        Ok(())
    }
}

fn restore_all(x: &Tensor, generators: &[GeneratorNet]) -> Result<Vec<Tensor>> {
    if generators.is_empty() {
        return Err(Error::config("at least one generator is required"));
    }
    generators.par_iter().map(|g| g.forward(x)).collect()
}

/// PSNR of each restoration, after denormalization and 8-bit rounding,
/// against a target in 0..=255.
pub fn output_psnrs(outputs: &[Tensor], target: &Tensor) -> Result<Vec<f64>> {
    outputs
        .iter()
        .map(|o| psnr(&denormalize(o), target))
        .collect()
}

/// Restores `x` (normalized) with every generator and keeps the output the
/// discriminator is most confident in.
pub fn restore_select(
    x: &Tensor,
    generators: &[GeneratorNet],
    od: &DiscriminatorNet,
) -> Result<SelectionResult> {
    let outputs = restore_all(x, generators)?;
    let scores = outputs
        .iter()
        .map(|o| od.score(o))
        .collect::<Result<Vec<_>>>()?;
    let chosen_index =
        argmax_first(&scores).ok_or_else(|| Error::NonFinite("every score is NaN".into()))?;
    Ok(SelectionResult {
        outputs,
        scores,
        chosen_index,
        psnrs: None,
        oracle_index: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub outputs: Vec<Tensor>,
    pub psnrs: Vec<f64>,
    pub oracle_index: usize,
}

/// Picks the restoration closest to the 8-bit ground truth `target`.
pub fn restore_oracle(
    x: &Tensor,
    generators: &[GeneratorNet],
    target: &Tensor,
) -> Result<OracleResult> {
    if x.shape() != target.shape() {
        return Err(Error::dim(format!(
            "input {:?} and ground truth {:?} differ",
            x.shape(),
            target.shape()
        )));
    }
    let outputs = restore_all(x, generators)?;
    let psnrs = output_psnrs(&outputs, target)?;
    let oracle_index =
        argmax_first(&psnrs).ok_or_else(|| Error::NonFinite("every PSNR is NaN".into()))?;
    Ok(OracleResult {
        outputs,
        psnrs,
        oracle_index,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::normalize;
    use crate::layers::{DiscriminatorConfig, GeneratorConfig};
    use crate::rng;
    use rand::Rng;

    fn gen(seed: u64) -> GeneratorNet {
        let cfg = GeneratorConfig {
            encoder_channels: vec![2, 2, 4, 4, 4],
            ..GeneratorConfig::default()
        };
        GeneratorNet::build(&cfg, &mut rng::stream(seed, "g")).unwrap()
    }

    fn disc() -> DiscriminatorNet {
        let cfg = DiscriminatorConfig {
            channels: vec![2, 2, 2, 2, 2],
            dense_hidden: 4,
            ..DiscriminatorConfig::default()
        };
        DiscriminatorNet::build(&cfg, &mut rng::stream(1, "d")).unwrap()
    }

    fn image(seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "img");
        Tensor::from_fn(&[3, 32, 32], |_| r.gen_range(0..=255) as f64)
    }

    #[test]
    fn argmax_cases() {
        assert_eq!(argmax_first(&[0.2, 0.7, 0.5]), Some(1));
        assert_eq!(argmax_first(&[0.4, 0.4, 0.4]), Some(0));
        assert_eq!(argmax_first(&[18.2, 21.4, 19.9]), Some(1));
        assert_eq!(argmax_first(&[f64::NAN, 1.0, f64::INFINITY]), Some(2));
        assert_eq!(argmax_first(&[]), None);
    }

    #[test]
    fn identical_generators_choose_first() {
        let g = gen(3);
        let gens = vec![g.clone(), g.clone(), g];
        let x = normalize(&image(1));
        let r = restore_select(&x, &gens, &disc()).unwrap();
        assert_eq!(r.chosen_index, 0);
        assert!(r.outputs.iter().all(|o| *o == r.outputs[0]));
        assert_eq!(r, restore_select(&x, &gens, &disc()).unwrap());
    }

    #[test]
    fn oracle_dominates_selection() {
        let gens = vec![gen(4), gen(5), gen(6)];
        let gt = image(2);
        let x = normalize(&image(3));
        let mut sel = restore_select(&x, &gens, &disc()).unwrap();
        sel.attach_ground_truth(&gt).unwrap();
        let psnrs = sel.psnrs.clone().unwrap();
        let oracle = restore_oracle(&x, &gens, &gt).unwrap();
        assert_eq!(Some(oracle.oracle_index), sel.oracle_index);
        assert!(psnrs[oracle.oracle_index] >= psnrs[sel.chosen_index]);
        let max = psnrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(oracle.psnrs[oracle.oracle_index], max);
    }

    #[test]
    fn oracle_rejects_shape_mismatch() {
        let x = normalize(&image(3));
        assert!(restore_oracle(&x, &[gen(1)], &Tensor::zeros(&[3, 64, 64])).is_err());
        assert!(restore_select(&x, &[], &disc()).is_err());
    }
}
