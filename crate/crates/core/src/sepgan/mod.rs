//! Foreground-background separation model: a generator that maps an image
//! to a per-pixel foreground probability map, a discriminator that scores
//! mask-multiplied crops, the adversarial and perceptual losses, and the
//! alternating training loop that leaves a provided detector untouched.

mod loss;
mod model;
mod train;

pub use loss::{
    gan_loss, gan_loss_d_graph, gan_loss_g_graph, perceptual_loss, perceptual_loss_graph,
    SepGanLossReport, GAN_EPS,
};
pub use model::{predict_mask, DiscOut, Discriminator, Generator};
pub use train::{
    merge_params, split_params, train_sepgan, write_loss_csv, EpochLoss, SepGanConfig,
};

use crate::numkit::NumError;
use thiserror::Error;

/// Errors from separation-model configuration, contracts, and training.
#[derive(Debug, Error)]
pub enum SepError {
    #[error("config: {0}")]
    Config(String),
    #[error("contract: {0}")]
    Contract(String),
    #[error("non-finite loss at epoch {epoch}")]
    NonFinite { epoch: usize },
    #[error(transparent)]
    Num(#[from] NumError),
}
