//! Contrastive-center loss, center loss and softmax joint supervision for
//! learning discriminative deep features.
//!
//! The crate has no global state: every random draw comes from a
//! [`RngSeed`] split into purpose-specific streams, so a run is a pure
//! function of its configuration.

pub mod centers;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod encoder;
pub mod error;
pub mod export;
pub mod gradcheck;
pub mod losses;
pub mod metrics;
pub mod numeric;
pub mod plot;
pub mod trainer;

pub use centers::{init_centers, update_centers, CenterBank, CenterUpdateConfig, InitScheme};
pub use checkpoint::Checkpoint;
pub use config::{DatasetConfig, LossMode, TrainConfig};
pub use data::{make_batches, make_synthetic, LabeledDataset, SyntheticSpec};
pub use encoder::{encoder_backward, encoder_forward, sgd_step, EncoderParams, SgdConfig};
pub use error::{Error, Result};
pub use losses::{
    center_loss, contrastive_center_loss, joint_loss, softmax_cross_entropy,
    ContrastiveCenterConfig, JointLoss, LossOutput,
};
pub use metrics::EmbeddingReport;
pub use numeric::{pairwise_sq_dist, FeatureBatch, LabelBatch, RngSeed};
pub use trainer::{evaluate, train, RunRecord, TrainOutcome};
