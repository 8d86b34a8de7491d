//! Image and annotation I/O, sample pairing, and synthetic scene generation.
//!
//! On-disk formats are deliberately minimal: binary portable pixmaps (P6) for
//! images, portable graymaps (P5) for masks, and VOC-style XML for box
//! annotations, with a plain-text class table (one name per line, line index
//! is the class id). A dataset is a directory of `images/*.ppm`,
//! `masks/*.pgm`, and `annotations/*.xml` with matching stems, plus
//! `classes.txt` at the root.
//!
//! The synthetic generator renders filled shapes over low-amplitude value
//! noise and emits exactly the same layout, so desk-scale experiments and
//! real datasets flow through one path.

mod dataset;
mod pnm;
mod synth;
mod types;
mod voc;

pub(crate) use types::box_covers_foreground;

pub use dataset::{
    list_dataset_stems, make_dataset, write_dataset, write_dataset_named, DatasetKind,
};
pub use pnm::{load_image, load_mask, save_image, save_mask};
pub use synth::{gen_synthetic_scene, SceneConfig, ShapeKind};
pub use types::{BinaryMask, GTBox, Image, PairedSample};
pub use voc::{parse_voc_annotation, write_voc_annotation, ClassTable};

use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors from image I/O, annotation parsing, and dataset assembly.
#[derive(Debug, Error)]
pub enum ImageError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("annotation <{element}>: {reason}")]
    Parse { element: String, reason: String },
    #[error("invalid {what}: {reason}")]
    Invalid { what: &'static str, reason: String },
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("config error: {0}")]
    Config(String),
}

impl ImageError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        ImageError::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        ImageError::Format { path: path.into(), reason: reason.into() }
    }

    pub(crate) fn parse(element: impl Into<String>, reason: impl Into<String>) -> Self {
        ImageError::Parse { element: element.into(), reason: reason.into() }
    }

    pub(crate) fn invalid(what: &'static str, reason: impl Into<String>) -> Self {
        ImageError::Invalid { what, reason: reason.into() }
    }

    /// True for filesystem-level failures, as opposed to content problems.
    pub fn is_io(&self) -> bool {
        matches!(self, ImageError::Io { .. } | ImageError::Format { .. })
    }
}
