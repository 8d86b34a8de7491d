//! Anchor-to-ground-truth assignment.

use super::boxes::{iou, BBox, PriorBox};
use super::DetError;

/// Per-anchor assignment produced by [`match_anchors`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Assignment {
    Background,
    /// Index into the ground-truth list.
    Matched(usize),
}

/// Result of matching priors against one image's ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct MatchResult {
    /// One entry per prior.
    pub assignments: Vec<Assignment>,
    /// Best prior index per ground-truth box (the force-matched one).
    pub best_prior: Vec<usize>,
}

impl MatchResult {
    pub fn matched_count(&self) -> usize {
        self.assignments
            .iter()
            .filter(|a| matches!(a, Assignment::Matched(_)))
            .count()
    }
}

/// Matches priors to ground truth the SSD way: every prior whose best IoU
/// reaches `pos_threshold` is assigned its argmax ground-truth box, and every
/// ground-truth box additionally force-matches its best prior (so each box
/// keeps at least one anchor even below threshold). Ties break to the lower
/// index. Force-matching walks boxes in index order and each claims its best
/// prior among those no earlier box claimed, so boxes never rob each other
/// of their only anchor (as long as priors outnumber boxes).
pub fn match_anchors(
    gts: &[BBox],
    priors: &[PriorBox],
    pos_threshold: f64,
) -> Result<MatchResult, DetError> {
    if !(pos_threshold > 0.0 && pos_threshold < 1.0) {
        return Err(DetError::Config(format!(
            "positive-match threshold must lie in (0, 1), got {pos_threshold}"
        )));
    }
    if priors.is_empty() && !gts.is_empty() {
        return Err(DetError::Contract(
            "cannot match ground truth against an empty prior list".into(),
        ));
    }
    let corners: Vec<BBox> = priors.iter().map(PriorBox::to_corner).collect();
    let mut assignments = vec![Assignment::Background; priors.len()];
    for (p, prior) in corners.iter().enumerate() {
        let mut best = (0.0, usize::MAX);
        for (g, gt) in gts.iter().enumerate() {
            let v = iou(prior, gt);
            if v > best.0 {
                best = (v, g);
            }
        }
        if best.0 >= pos_threshold {
            assignments[p] = Assignment::Matched(best.1);
        }
    }
    let mut claimed = vec![false; priors.len()];
    let mut best_prior = Vec::with_capacity(gts.len());
    for (g, gt) in gts.iter().enumerate() {
        let mut best: Option<(f64, usize)> = None;
        for (p, prior) in corners.iter().enumerate() {
            if claimed[p] {
                continue;
            }
            let v = iou(prior, gt);
            if best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, p));
            }
        }
        // Unclaimable only when boxes outnumber priors; fall back to the
        // global best so the assignment stays total.
        let p = match best {
            Some((_, p)) => p,
            None => {
                let mut global = (-1.0, 0);
                for (p, prior) in corners.iter().enumerate() {
                    let v = iou(prior, gt);
                    if v > global.0 {
                        global = (v, p);
                    }
                }
                global.1
            }
        };
        claimed[p] = true;
        assignments[p] = Assignment::Matched(g);
        best_prior.push(p);
    }
    Ok(MatchResult { assignments, best_prior })
}
