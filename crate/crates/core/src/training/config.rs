use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{DiscriminatorConfig, GeneratorConfig};
use crate::numerics::AdamConfig;

/// Largest accepted label-smoothing half-width.
pub const MAX_LABEL_EPS: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    /// Number of image draws; each draw yields one discriminator update and
    /// one generator update.
    pub max_iterations: u64,
    /// Label-smoothing half-width ε.
    pub label_eps: f64,
    /// Weight of the L1 reconstruction term in the generator loss.
    pub lambda_rec: f64,
    pub seed: u64,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-5,
            batch_size: 1,
            max_iterations: 5000,
            label_eps: 0.05,
            lambda_rec: 0.0,
            seed: 0,
            generator: GeneratorConfig::default(),
            discriminator: DiscriminatorConfig::default(),
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size != 1 {
            return Err(Error::config(format!(
                "only batch_size 1 is supported, got {}",
                self.batch_size
            )));
        }
        if !(0.0..=MAX_LABEL_EPS).contains(&self.label_eps) {
            return Err(Error::config(format!(
                "label_eps {} outside [0, {MAX_LABEL_EPS}]",
                self.label_eps
            )));
        }
        if !(self.lambda_rec >= 0.0 && self.lambda_rec.is_finite()) {
            return Err(Error::config(format!(
                "lambda_rec must be >= 0, got {}",
                self.lambda_rec
            )));
        }
        let a = &self.adam;
        if !((0.0..1.0).contains(&a.beta1) && (0.0..1.0).contains(&a.beta2) && a.eps > 0.0) {
            return Err(Error::config(
                "Adam betas must lie in [0, 1) and eps be positive",
            ));
        }
        self.generator.validate()?;
        self.discriminator.validate()?;
        self.generator
            .check_spatial(self.discriminator.input_size, self.discriminator.input_size)?;
        if self.generator.in_channels != self.discriminator.in_channels {
            return Err(Error::config(
                "generator and discriminator channel counts differ",
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn rejects_out_of_range_fields() {
        let bad = [
            TrainConfig {
                lr: 0.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 2,
                ..Default::default()
            },
            TrainConfig {
                label_eps: 0.3,
                ..Default::default()
            },
            TrainConfig {
                label_eps: -0.01,
                ..Default::default()
            },
            TrainConfig {
                lambda_rec: -1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(matches!(c.validate(), Err(Error::Config(_))), "{c:?}");
        }
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: TrainConfig = serde_json::from_str(r#"{"lr": 0.001, "seed": 4}"#).unwrap();
        assert_eq!(c.lr, 1e-3);
        assert_eq!(c.max_iterations, 5000);
        let back: TrainConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
