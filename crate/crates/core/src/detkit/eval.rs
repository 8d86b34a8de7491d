//! VOC2007-style 11-point average precision.

use super::boxes::{iou, BBox};
use super::nms::Detection;
use super::DetError;

/// Ground truth for evaluation: a normalized box, its class, and the
/// difficult flag (difficult boxes count neither as targets nor as errors).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalBox {
    pub bbox: BBox,
    pub class_id: usize,
    pub difficult: bool,
}

/// Per-class AP plus the mean. Classes without ground truth have no defined
/// AP (`None`) and are excluded from the mean.
#[derive(Clone, Debug)]
pub struct EvalResult {
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

impl EvalResult {
    /// Indices of classes that had no ground truth.
    pub fn skipped_classes(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter(|(_, ap)| ap.is_none())
            .map(|(c, _)| c)
            .collect()
    }
}

/// Computes 11-point interpolated AP per class and the unweighted mean.
///
/// Detections are pooled across images per class and visited in descending
/// confidence (ties by image index, then box coordinates, making the result
/// independent of input order). Each ground-truth box is credited at most
/// once; a detection whose best overlap (at or above `iou_threshold`) is a
/// difficult box is ignored.
pub fn eval_map(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<EvalBox>],
    iou_threshold: f64,
    class_count: usize,
) -> Result<EvalResult, DetError> {
    if dets_per_image.len() != gts_per_image.len() {
        return Err(DetError::Contract(format!(
            "{} detection lists vs {} ground-truth lists",
            dets_per_image.len(),
            gts_per_image.len()
        )));
    }
    if class_count == 0 {
        return Err(DetError::Config("evaluation needs at least one class".into()));
    }
    let mut per_class = Vec::with_capacity(class_count);
    for class in 0..class_count {
        per_class.push(class_ap(dets_per_image, gts_per_image, iou_threshold, class));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let map = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    Ok(EvalResult { per_class, map })
}

fn class_ap(
    dets_per_image: &[Vec<Detection>],
    gts_per_image: &[Vec<EvalBox>],
    iou_threshold: f64,
    class: usize,
) -> Option<f64> {
    let npos: usize = gts_per_image
        .iter()
        .flatten()
        .filter(|g| g.class_id == class && !g.difficult)
        .count();
    if npos == 0 {
        return None;
    }
    let mut pool: Vec<(usize, Detection)> = Vec::new();
    for (img, dets) in dets_per_image.iter().enumerate() {
        pool.extend(dets.iter().filter(|d| d.class_id == class).map(|d| (img, *d)));
    }
    pool.sort_by(|(ia, a), (ib, b)| {
        b.confidence
            .partial_cmp(&a.confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(ia.cmp(ib))
            .then(a.bbox.xmin.total_cmp(&b.bbox.xmin))
            .then(a.bbox.ymin.total_cmp(&b.bbox.ymin))
            .then(a.bbox.xmax.total_cmp(&b.bbox.xmax))
            .then(a.bbox.ymax.total_cmp(&b.bbox.ymax))
    });

    let mut claimed: Vec<Vec<bool>> = gts_per_image.iter().map(|g| vec![false; g.len()]).collect();
    let mut tp = Vec::with_capacity(pool.len());
    let mut fp = Vec::with_capacity(pool.len());
    for (img, det) in pool {
        let gts = &gts_per_image[img];
        let mut best: Option<(f64, usize)> = None;
        for (gi, gt) in gts.iter().enumerate() {
            if gt.class_id != class {
                continue;
            }
            let v = iou(&det.bbox, &gt.bbox);
            if v >= iou_threshold && best.map_or(true, |(bv, _)| v > bv) {
                best = Some((v, gi));
            }
        }
        match best {
            Some((_, gi)) if gts[gi].difficult => continue,
            Some((_, gi)) if !claimed[img][gi] => {
                claimed[img][gi] = true;
                tp.push(1.0);
                fp.push(0.0);
            }
            _ => {
                tp.push(0.0);
                fp.push(1.0);
            }
        }
    }

    let mut cum_tp = 0.0;
    let mut cum_fp = 0.0;
    let mut precision = Vec::with_capacity(tp.len());
    let mut recall = Vec::with_capacity(tp.len());
    for i in 0..tp.len() {
        cum_tp += tp[i];
        cum_fp += fp[i];
        precision.push(cum_tp / (cum_tp + cum_fp));
        recall.push(cum_tp / npos as f64);
    }
    Some(eleven_point_ap(&precision, &recall))
}

/// 11-point interpolation: mean over recall thresholds {0, 0.1, ..., 1.0}
/// of the maximum precision at recall >= threshold.
fn eleven_point_ap(precision: &[f64], recall: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in 0..=10 {
        let r = t as f64 / 10.0;
        let p = precision
            .iter()
            .zip(recall)
            .filter(|(_, &rec)| rec >= r - 1e-12)
            .map(|(&p, _)| p)
            .fold(0.0, f64::max);
        total += p;
    }
    total / 11.0
}

/// Renders the per-class AP table as text, one row per class plus the mean.
pub fn format_ap_table(result: &EvalResult, class_names: &[String]) -> String {
    let mut out = String::new();
    out.push_str("class                AP\n");
    out.push_str("-----                --\n");
    for (c, ap) in result.per_class.iter().enumerate() {
        let name = class_names.get(c).map_or("?", |s| s.as_str());
        match ap {
            Some(v) => out.push_str(&format!("{name:<20} {v:.4}\n")),
            None => out.push_str(&format!("{name:<20} n/a (no ground truth)\n")),
        }
    }
    out.push_str(&format!("{:<20} {:.4}\n", "mAP", result.map));
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn det(b: BBox, class_id: usize, confidence: f64) -> Detection {
        Detection { bbox: b, class_id, confidence }
    }

    fn gt(b: BBox, class_id: usize) -> EvalBox {
        EvalBox { bbox: b, class_id, difficult: false }
    }

    #[test]
    fn single_good_detection_gives_ap_one() {
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let d = BBox::new(0.12, 0.1, 0.5, 0.5);
        assert!(iou(&g, &d) > 0.9);
        let r = eval_map(&[vec![det(d, 0, 0.8)]], &[vec![gt(g, 0)]], 0.5, 1).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0)]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn low_overlap_detection_gives_ap_zero() {
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let d = BBox::new(0.35, 0.35, 0.75, 0.75);
        assert!(iou(&g, &d) < 0.5);
        let r = eval_map(&[vec![det(d, 0, 0.8)]], &[vec![gt(g, 0)]], 0.5, 1).unwrap();
        assert_eq!(r.per_class, vec![Some(0.0)]);
    }

    #[test]
    fn true_positive_before_false_positive_keeps_ap_one() {
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let far = BBox::new(0.6, 0.6, 0.9, 0.9);
        let dets = vec![det(g, 0, 0.9), det(far, 0, 0.8)];
        let r = eval_map(&[dets], &[vec![gt(g, 0)]], 0.5, 1).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0)]);
    }

    #[test]
    fn false_positive_first_halves_interpolated_precision() {
        // FP at 0.9, TP at 0.8: the PR curve's only positive point is
        // precision 0.5 at recall 1.0, so every recall threshold
        // interpolates to 0.5.
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let far = BBox::new(0.6, 0.6, 0.9, 0.9);
        let dets = vec![det(far, 0, 0.9), det(g, 0, 0.8)];
        let r = eval_map(&[dets], &[vec![gt(g, 0)]], 0.5, 1).unwrap();
        assert!((r.per_class[0].unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn each_gt_is_credited_once() {
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let dets = vec![det(g, 0, 0.9), det(g, 0, 0.8)];
        let r = eval_map(&[dets], &[vec![gt(g, 0)]], 0.5, 1).unwrap();
        // Second detection is a duplicate: precision points (1, 1/2),
        // recall points (1, 1). Interpolated precision is 1 everywhere.
        assert_eq!(r.per_class, vec![Some(1.0)]);
    }

    #[test]
    fn difficult_gt_is_neither_target_nor_error() {
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let easy = BBox::new(0.6, 0.6, 0.9, 0.9);
        let gts = vec![
            EvalBox { bbox: g, class_id: 0, difficult: true },
            gt(easy, 0),
        ];
        // One detection on the difficult box (ignored), one on the easy box.
        let dets = vec![det(g, 0, 0.9), det(easy, 0, 0.8)];
        let r = eval_map(&[dets], &[gts], 0.5, 1).unwrap();
        assert_eq!(r.per_class, vec![Some(1.0)]);
    }

    #[test]
    fn zero_gt_class_is_excluded_from_mean() {
        let g = BBox::new(0.1, 0.1, 0.5, 0.5);
        let r = eval_map(&[vec![det(g, 0, 0.9)]], &[vec![gt(g, 0)]], 0.5, 3).unwrap();
        assert_eq!(r.per_class[0], Some(1.0));
        assert_eq!(r.per_class[1], None);
        assert_eq!(r.per_class[2], None);
        assert_eq!(r.map, 1.0);
        assert_eq!(r.skipped_classes(), vec![1, 2]);
    }

    #[test]
    fn detection_order_does_not_matter() {
        let g1 = BBox::new(0.1, 0.1, 0.4, 0.4);
        let g2 = BBox::new(0.5, 0.5, 0.8, 0.8);
        let far = BBox::new(0.0, 0.6, 0.3, 0.9);
        let mut dets = vec![det(g1, 0, 0.9), det(far, 0, 0.7), det(g2, 0, 0.5)];
        let gts = vec![vec![gt(g1, 0), gt(g2, 0)]];
        let a = eval_map(&[dets.clone()], &gts, 0.5, 1).unwrap();
        dets.reverse();
        let b = eval_map(&[dets], &gts, 0.5, 1).unwrap();
        assert_eq!(a.per_class, b.per_class);
    }

    #[test]
    fn eleven_point_ap_matches_hand_sums() {
        // Two points: (p=1, r=0.5), (p=2/3, r=1.0). Thresholds 0..0.5 take
        // precision 1 (6 points), 0.6..1.0 take 2/3 (5 points).
        let ap = eleven_point_ap(&[1.0, 0.5, 2.0 / 3.0], &[0.5, 0.5, 1.0]);
        let expected = (6.0 * 1.0 + 5.0 * (2.0 / 3.0)) / 11.0;
        assert!((ap - expected).abs() < 1e-12);
    }

    #[test]
    fn table_lists_every_class_and_the_mean() {
        let r = EvalResult { per_class: vec![Some(0.5), None], map: 0.5 };
        let names = vec!["rect".to_string(), "disc".to_string()];
        let table = format_ap_table(&r, &names);
        assert!(table.contains("rect"));
        assert!(table.contains("n/a (no ground truth)"));
        assert!(table.contains("mAP"));
        assert!(table.contains("0.5000"));
    }

    #[test]
    fn mismatched_image_counts_error() {
        assert!(eval_map(&[vec![]], &[], 0.5, 1).is_err());
    }
}
