//! Expert operational GANs.
//!
//! Self-ONN operational layers with exact reverse-mode gradients, three
//! quality-specialized generators trained against one shared discriminator,
//! and discriminator-confidence selection among the experts at inference.

pub mod data;
pub mod error;
pub mod inference;
pub mod layers;
pub mod numerics;
pub mod rng;
pub mod training;
pub mod verify;

pub use error::{CheckpointErrorKind, Error, Result};
pub use numerics::Tensor;
