//! Pretraining, expert specialization and checkpoint persistence.

mod checkpoint;
mod config;
mod losses;
mod run;

pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, Network,
    FORMAT_VERSION, MAGIC,
};
pub use config::{TrainConfig, MAX_LABEL_EPS};
pub use losses::{
    discriminator_loss, discriminator_loss_with_labels, generator_loss, generator_loss_traced,
    sample_smoothed_label, DiscriminatorLoss, GeneratorLoss, LabelKind, REAL_LABEL,
};
pub use run::{
    expert_file, initialize, load_pairs, pretrain, read_log, train_experts, ExpertOutcome,
    IterationLog, LoadedPair, PretrainOutcome, TimingLog, DISCRIMINATOR_FILE, GENERATOR_FILE,
    TIMING_FILE, TRAIN_LOG_FILE,
};
