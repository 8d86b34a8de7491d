//! Dense-tensor numeric kernel with reverse-mode differentiation.
//!
//! The kernel is deliberately small: row-major [`Tensor`]s, direct (unfused)
//! convolution kernels in [`ops`], and a Wengert-list [`Graph`] that records
//! ops at forward time and replays them in reverse for gradients. Tensors
//! themselves are plain values; differentiability lives in the graph, which
//! marks trainable leaves and hands back a [`Gradients`] store keyed by
//! graph variable.
//!
//! Parameters are kept in ordered, name-keyed [`ParamSet`]s that bind into a
//! graph as leaves, take SGD steps from a gradient store, and round-trip
//! through the flat binary checkpoint format in [`checkpoint`].

mod checkpoint;
mod graph;
mod ops;
mod params;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointError};
pub use graph::{Gradients, Graph, Var};
pub use ops::{
    add, conv2d, conv_out_dim, deconv2d, deconv_out_dim, leaky_relu, mul, relu, sigmoid,
};
pub use params::{conv_weight, deconv_weight, init_uniform, sgd_step, BoundParams, ParamSet};
pub use tensor::Tensor;

use thiserror::Error;

/// Errors from tensor construction, op shape checks, and graph contracts.
#[derive(Debug, Error)]
pub enum NumError {
    #[error("{context}: shape {got:?} does not match {expected}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        got: Vec<usize>,
    },
    #[error("{context}: {message}")]
    Dimension {
        context: &'static str,
        message: String,
    },
    #[error("{context}: {message}")]
    Contract {
        context: &'static str,
        message: String,
    },
}

impl NumError {
    pub(crate) fn shape(context: &'static str, expected: impl Into<String>, got: &[usize]) -> Self {
        NumError::ShapeMismatch {
            context,
            expected: expected.into(),
            got: got.to_vec(),
        }
    }

    pub(crate) fn dim(context: &'static str, message: impl Into<String>) -> Self {
        NumError::Dimension {
            context,
            message: message.into(),
        }
    }

    pub(crate) fn contract(context: &'static str, message: impl Into<String>) -> Self {
        NumError::Contract {
            context,
            message: message.into(),
        }
    }
}
