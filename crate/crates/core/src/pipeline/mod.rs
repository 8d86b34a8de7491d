//! Orchestration: run configuration, the two-phase training protocol,
//! standalone generate/augment/eval runs, and reporting.
//!
//! Every run is a pure function of `(config, seed)`: datasets, shuffles,
//! initializations, and augmentation draws all come from named substreams
//! of the run seed, so artifacts are byte-reproducible.

pub mod config;
pub mod report;
pub mod run;

pub use config::{
    parse_config, parse_config_text, AugmentSettings, DatasetSpec, PipelineConfig, Stage,
};
pub use report::{extract_config_echo, EvalBlock, MetricRecord, RunReport};
pub use run::{
    eval_from_detections, load_classes, load_split, run_augment, run_eval, run_generate,
    run_phase1, run_phase2, run_phase2_control, Split, DETECTOR_PHASE1_CKPT,
    DETECTOR_PHASE2_CKPT, PROVENANCE_CSV, SEPGAN_CKPT, SEPGAN_LOSS_CSV,
};

use crate::detkit::DetError;
use crate::imageio::ImageError;
use crate::maskaug::AugError;
use crate::numkit::{CheckpointError, NumError};
use crate::sepgan::SepError;
use thiserror::Error;

/// Top-level run failure, split by how the process should exit: bad inputs
/// or configuration (1), filesystem trouble (2), numeric aborts (3).
#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{0}")]
    Validation(String),
    #[error("I/O error: {0}")]
    Io(String),
    #[error("numeric abort: {0}")]
    Numeric(String),
}

impl PipelineError {
    /// Process exit code for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Validation(_) => 1,
            PipelineError::Io(_) => 2,
            PipelineError::Numeric(_) => 3,
        }
    }
}

impl From<ImageError> for PipelineError {
    fn from(e: ImageError) -> Self {
        if e.is_io() {
            PipelineError::Io(e.to_string())
        } else {
            PipelineError::Validation(e.to_string())
        }
    }
}

impl From<NumError> for PipelineError {
    fn from(e: NumError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<DetError> for PipelineError {
    fn from(e: DetError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<AugError> for PipelineError {
    fn from(e: AugError) -> Self {
        PipelineError::Validation(e.to_string())
    }
}

impl From<SepError> for PipelineError {
    fn from(e: SepError) -> Self {
        match e {
            SepError::NonFinite { .. } => PipelineError::Numeric(e.to_string()),
            other => PipelineError::Validation(other.to_string()),
        }
    }
}

impl From<CheckpointError> for PipelineError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io(_) => PipelineError::Io(e.to_string()),
            other => PipelineError::Validation(other.to_string()),
        }
    }
}
