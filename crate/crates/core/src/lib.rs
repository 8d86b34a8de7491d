//! Mask-guided data enhancement for anchor-based object detection.
//!
//! The crate is organized around five subsystems plus an orchestration layer:
//!
//! - [`numkit`]: a small dense-tensor kernel with reverse-mode differentiation,
//!   enough to train tiny convolutional generators, discriminators, and
//!   detection heads on the CPU.
//! - [`imageio`]: image/annotation I/O (portable pixmaps, VOC-style XML) and a
//!   deterministic synthetic-shapes dataset generator.
//! - [`maskaug`]: mask algebra and object-targeted perturbations (channel
//!   permutation, salt noise, contrast), the batch enhancement policy, and the
//!   baseline crop/flip/photometric augmentations.
//! - [`sepgan`]: the foreground-background separation model — a generator that
//!   emits foreground probability maps, a discriminator over mask-multiplied
//!   crops, the adversarial and perceptual losses, and the training loop.
//! - [`detkit`]: anchor machinery — prior boxes, IoU, matching, offset
//!   encoding, detection loss, NMS, a toy multi-scale detector with
//!   elementwise-sum deconvolution fusion, and 11-point mAP evaluation.
//! - [`pipeline`]: config parsing, the two-phase training protocol, standalone
//!   generate/augment/eval runs, and reporting.
//!
//! Numeric code is generic over the scalar type through [`scalar::Real`];
//! the pipeline instantiates everything with [`Scalar`] (`f64`), for which
//! concrete aliases are re-exported at the crate root.

pub mod detkit;
pub mod imageio;
pub mod maskaug;
pub mod numkit;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod sepgan;

/// Scalar type used by the training pipeline and the checkpoint format.
pub type Scalar = f64;

/// Dense tensor over the pipeline scalar.
pub type Tensor = numkit::Tensor<Scalar>;
/// Compute graph over the pipeline scalar.
pub type Graph = numkit::Graph<Scalar>;
/// Named parameter set over the pipeline scalar.
pub type ParamSet = numkit::ParamSet<Scalar>;
/// Image over the pipeline scalar.
pub type Image = imageio::Image<Scalar>;
/// Paired (image, mask, boxes) sample over the pipeline scalar.
pub type PairedSample = imageio::PairedSample<Scalar>;
