//! Detection loss: weighted softmax cross-entropy with hard-negative mining
//! plus smooth-L1 localization over matched anchors.

use super::boxes::{encode_offsets, BBox, PriorBox, PriorLayout};
use super::matching::{Assignment, MatchResult};
use super::DetError;
use crate::numkit::{Graph, Tensor, Var};
use crate::scalar::Real;

/// Bookkeeping from one loss evaluation.
#[derive(Clone, Copy, Debug)]
pub struct LossStats {
    pub n_pos: usize,
    pub n_neg: usize,
    /// Set when no anchor matched any ground truth (the classification term
    /// then runs over mined negatives alone).
    pub warned: bool,
}

/// Builds the detection loss `(cls + loc) / max(1, N_pos)` into the graph.
///
/// `cls_logits` is `[batch * P, C+1]` (class 0 is background, object class
/// `c` sits at column `c+1`) and `loc_preds` is `[batch * P, 4]`, both in
/// the row order produced by the detector head (see [`PriorLayout::row`]).
/// Positive anchors contribute cross-entropy and smooth-L1 against their
/// encoded ground truth; negatives are mined per image at `neg_pos_ratio`
/// negatives per positive (at least `neg_pos_ratio` when an image has no
/// positives), hardest first by background cross-entropy.
#[allow(clippy::too_many_arguments)]
pub fn detection_loss<T: Real>(
    g: &mut Graph<T>,
    cls_logits: Var,
    loc_preds: Var,
    gts: &[Vec<(BBox, usize)>],
    matches: &[MatchResult],
    priors: &[PriorBox],
    layout: &PriorLayout,
    neg_pos_ratio: usize,
) -> Result<(Var, LossStats), DetError> {
    let batch = gts.len();
    if matches.len() != batch {
        return Err(DetError::Contract(format!(
            "{batch} ground-truth lists but {} match results",
            matches.len()
        )));
    }
    let p_total = layout.total();
    if priors.len() != p_total {
        return Err(DetError::Contract(format!(
            "layout declares {p_total} priors but {} were supplied",
            priors.len()
        )));
    }
    let rows = batch * p_total;
    let cls_shape = g.value(cls_logits).shape().to_vec();
    if cls_shape.len() != 2 || cls_shape[0] != rows || cls_shape[1] < 2 {
        return Err(DetError::Contract(format!(
            "class logits must be [{rows}, C+1] with C >= 1, got {cls_shape:?}"
        )));
    }
    let classes = cls_shape[1];
    let loc_shape = g.value(loc_preds).shape().to_vec();
    if loc_shape != [rows, 4] {
        return Err(DetError::Contract(format!(
            "offset predictions must be [{rows}, 4], got {loc_shape:?}"
        )));
    }

    let logit_data = g.value(cls_logits).to_f64_vec();
    let mut targets = vec![0usize; rows];
    let mut cls_weights = vec![T::zero(); rows];
    let mut loc_target = vec![T::zero(); rows * 4];
    let mut loc_weights = vec![T::zero(); rows];
    let mut n_pos = 0;
    let mut n_neg = 0;

    for (n, (image_gts, m)) in gts.iter().zip(matches).enumerate() {
        if m.assignments.len() != p_total {
            return Err(DetError::Contract(format!(
                "match result {n} covers {} priors, expected {p_total}",
                m.assignments.len()
            )));
        }
        let mut image_pos = 0;
        let mut negatives: Vec<(f64, usize)> = Vec::new();
        for (p, assignment) in m.assignments.iter().enumerate() {
            let row = layout.row(n, batch, p);
            match *assignment {
                Assignment::Matched(gi) => {
                    let Some(&(gt_box, class_id)) = image_gts.get(gi) else {
                        return Err(DetError::Contract(format!(
                            "match result {n} references missing ground truth {gi}"
                        )));
                    };
                    if class_id + 1 >= classes {
                        return Err(DetError::Contract(format!(
                            "class id {class_id} does not fit {classes} logit columns"
                        )));
                    }
                    targets[row] = class_id + 1;
                    cls_weights[row] = T::one();
                    let enc = encode_offsets(&gt_box, &priors[p])
                        .map_err(|e| DetError::Contract(e.to_string()))?;
                    for (j, &v) in enc.iter().enumerate() {
                        loc_target[row * 4 + j] = T::of(v);
                    }
                    loc_weights[row] = T::one();
                    image_pos += 1;
                }
                Assignment::Background => {
                    let logits = &logit_data[row * classes..(row + 1) * classes];
                    negatives.push((log_sum_exp(logits) - logits[0], p));
                }
            }
        }
        // Hardest negatives first; ties break to the lower prior index.
        // total_cmp keeps the sort well-defined when logits have gone
        // non-finite; the caller sees the non-finite loss and aborts.
        negatives.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let want = neg_pos_ratio * image_pos.max(1);
        for &(_, p) in negatives.iter().take(want) {
            cls_weights[layout.row(n, batch, p)] = T::one();
            n_neg += 1;
        }
        n_pos += image_pos;
    }

    let cls_term = g.softmax_ce(cls_logits, targets, cls_weights)?;
    let loc_term = g.smooth_l1(
        loc_preds,
        Tensor::new(vec![rows, 4], loc_target).expect("loc target shape"),
        loc_weights,
    )?;
    let total = g.add(cls_term, loc_term)?;
    let scale = T::one() / T::of(n_pos.max(1) as f64);
    let loss = g.affine(total, scale, T::zero());
    Ok((loss, LossStats { n_pos, n_neg, warned: n_pos == 0 }))
}

fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln()
}
