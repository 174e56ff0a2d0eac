//! Image I/O, PSNR, quality partitioning and synthetic datasets.

mod degrade;
mod image;
mod manifest;
mod metrics;
mod partition;
mod synth;

pub use degrade::{degrade, procedural_image, MAX_NOISE_STD};
pub use image::{denormalize, load_image, normalize, save_image};
pub use manifest::{DatasetManifest, ImagePair, Partition, Split};
pub use metrics::{cap, capped_mean, psnr, psnr_from_mse, psnr_serde, PEAK, PSNR_CAP_DB};
pub use partition::{equal_size_groups, partition_by_psnr, PartitionGroup, PartitionReport};
pub use synth::{
    synth_dataset, verify_psnr, write_meta, DatasetMeta, SynthConfig, DATASET_META_FILE,
    MANIFEST_FILE,
};
