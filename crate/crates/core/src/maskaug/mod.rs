//! Mask algebra and object-targeted perturbations.
//!
//! The perturbations ([`perturb_channels`], [`add_salt_noise`],
//! [`enhance_contrast`]) share one contract: pixels outside the mask are
//! bit-identical before and after, changed pixels are a subset of the
//! mask-positive set, outputs stay in `[0,1]`, and everything is a pure
//! function of inputs and seed. [`enhance_batch`] applies them per batch
//! under an [`AugmentPolicy`]; [`baseline_augment`] provides the standard
//! flip/crop/brightness pipeline that perturbs geometry as well.

mod baseline;
mod ops;
mod policy;

pub use baseline::{baseline_augment, crop_to_window, hflip};
pub use ops::{add_salt_noise, binarize, enhance_contrast, mask_multiply, perturb_channels};
pub use policy::{enhance_batch, enhance_batch_logged, AugmentPolicy, BatchLog, PerturbMode};

use thiserror::Error;

/// Errors from augmentation ops and policy validation.
#[derive(Debug, Error)]
pub enum AugError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid policy: {0}")]
    Policy(String),
}
