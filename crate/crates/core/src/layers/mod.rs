//! Operational (Self-ONN) layers and the generator/discriminator builders.

mod discriminator;
mod generator;
mod opconv;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::numerics::Tensor;

pub use discriminator::{DiscriminatorConfig, DiscriminatorNet, DiscriminatorTrace};
pub use generator::{GeneratorConfig, GeneratorNet, GeneratorTrace, UpBlock, LEVELS};
pub use opconv::{power_stack, OpConvGrads, OperationalConv2d};

/// Ordered, named access to a network's trainable tensors. Gradient vectors
/// returned by `backward` follow the same order.
pub trait Parameterized {
    fn params(&self) -> Vec<(String, &Tensor)>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        self.params()
            .iter()
            .map(|(_, t)| t.shape().to_vec())
            .collect()
    }
}

/// Hex SHA-256 of a kind tag plus the JSON form of an architecture config.
pub fn config_digest<T: Serialize>(kind: &str, config: &T) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    h.update([0u8]);
    h.update(serde_json::to_vec(config).expect("configs always serialize"));
    hex::encode(h.finalize())
}

impl GeneratorConfig {
    pub fn digest(&self) -> String {
        config_digest("generator", self)
    }
}

impl DiscriminatorConfig {
    pub fn digest(&self) -> String {
        config_digest("discriminator", self)
    }
}
