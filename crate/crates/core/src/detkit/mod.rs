//! Anchor-based detection machinery: prior boxes over multi-scale grids,
//! IoU, anchor matching, offset coding, the detection loss, NMS, a toy
//! multi-scale detector with deconvolution fusion modules, and VOC-style
//! mAP evaluation.
//!
//! All box math runs in normalized image coordinates (corners in `[0,1]`,
//! though priors may extend past the frame before clipping). Pixel-space
//! annotations are converted at the boundary.

mod boxes;
mod eval;
mod loss;
mod matching;
mod model;
mod nms;

pub use boxes::{
    decode_offsets, encode_offsets, gen_prior_boxes, iou, BBox, LayerSpec, PriorBox, PriorLayout,
};
pub use eval::{eval_map, format_ap_table, EvalBox, EvalResult};
pub use loss::{detection_loss, LossStats};
pub use matching::{match_anchors, Assignment, MatchResult};
pub use model::{detect_image, softmax_rows, DetOut, Detector, DetectorConfig, FusionKind};
pub use nms::{dump_detections_csv, nms, Detection};

use crate::numkit::NumError;
use thiserror::Error;

/// Errors from detection machinery.
#[derive(Debug, Error)]
pub enum DetError {
    #[error("config error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Num(#[from] NumError),
}
