//! Non-maximum suppression and detection dumps.

use super::boxes::{iou, BBox};

/// A scored, classified box. `class_id` is the 0-based object class (the
/// background class never surfaces as a detection).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub class_id: usize,
    pub confidence: f64,
}

/// Greedy non-maximum suppression.
///
/// Detections are visited in descending confidence (ties by lower input
/// index); a detection is suppressed when its IoU with an already-kept box
/// strictly exceeds `iou_threshold` and, when `per_class` is set, the two
/// share a class. The result is ordered by confidence then input index.
pub fn nms(dets: &[Detection], iou_threshold: f64, per_class: bool) -> Vec<Detection> {
    let mut order: Vec<usize> = (0..dets.len()).collect();
    order.sort_by(|&a, &b| {
        dets[b]
            .confidence
            .partial_cmp(&dets[a].confidence)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept: Vec<usize> = Vec::new();
    for &i in &order {
        let suppressed = kept.iter().any(|&k| {
            (!per_class || dets[k].class_id == dets[i].class_id)
                && iou(&dets[k].bbox, &dets[i].bbox) > iou_threshold
        });
        if !suppressed {
            kept.push(i);
        }
    }
    kept.into_iter().map(|i| dets[i]).collect()
}

/// Formats detections as CSV lines `class_id,confidence,xmin,ymin,xmax,ymax`
/// (one per detection, with a header), in the coordinate frame of the input.
pub fn dump_detections_csv(dets: &[Detection]) -> String {
    let mut out = String::from("class_id,confidence,xmin,ymin,xmax,ymax\n");
    for d in dets {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            d.class_id, d.confidence, d.bbox.xmin, d.bbox.ymin, d.bbox.xmax, d.bbox.ymax
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{index, seeded, uniform};

    fn det(x0: f64, y0: f64, x1: f64, y1: f64, class_id: usize, confidence: f64) -> Detection {
        Detection { bbox: BBox::new(x0, y0, x1, y1), class_id, confidence }
    }

    #[test]
    fn single_detection_is_kept() {
        let d = det(0.1, 0.1, 0.3, 0.3, 0, 0.7);
        assert_eq!(nms(&[d], 0.45, true), vec![d]);
    }

    #[test]
    fn duplicate_box_keeps_only_higher_confidence() {
        let hi = det(0.1, 0.1, 0.3, 0.3, 0, 0.9);
        let lo = det(0.1, 0.1, 0.3, 0.3, 0, 0.8);
        assert_eq!(nms(&[lo, hi], 0.45, true), vec![hi]);
    }

    #[test]
    fn different_classes_do_not_suppress_in_per_class_mode() {
        let a = det(0.1, 0.1, 0.3, 0.3, 0, 0.9);
        let b = det(0.1, 0.1, 0.3, 0.3, 1, 0.8);
        assert_eq!(nms(&[a, b], 0.45, true).len(), 2);
        assert_eq!(nms(&[a, b], 0.45, false).len(), 1);
    }

    #[test]
    fn confidence_ties_break_to_lower_index() {
        let a = det(0.1, 0.1, 0.3, 0.3, 0, 0.8);
        let b = det(0.11, 0.1, 0.31, 0.3, 0, 0.8);
        let kept = nms(&[a, b], 0.45, true);
        assert_eq!(kept, vec![a]);
    }

    /// Reference implementation: repeatedly extract the globally best
    /// unsuppressed detection and mark its overlaps.
    fn nms_reference(dets: &[Detection], thr: f64, per_class: bool) -> Vec<Detection> {
        let mut alive: Vec<bool> = vec![true; dets.len()];
        let mut kept = Vec::new();
        loop {
            let mut best: Option<usize> = None;
            for i in 0..dets.len() {
                if !alive[i] {
                    continue;
                }
                best = match best {
                    None => Some(i),
                    Some(j) if dets[i].confidence > dets[j].confidence => Some(i),
                    other => other,
                };
            }
            let Some(b) = best else { break };
            alive[b] = false;
            kept.push(dets[b]);
            for i in 0..dets.len() {
                if alive[i]
                    && (!per_class || dets[i].class_id == dets[b].class_id)
                    && iou(&dets[i].bbox, &dets[b].bbox) > thr
                {
                    alive[i] = false;
                }
            }
        }
        kept
    }

    #[test]
    fn matches_exhaustive_reference_on_random_cases() {
        let mut rng = seeded(2024);
        for _ in 0..1000 {
            let n = index(&mut rng, 11);
            let dets: Vec<Detection> = (0..n)
                .map(|_| {
                    let x0 = uniform(&mut rng, 0.0, 0.7);
                    let y0 = uniform(&mut rng, 0.0, 0.7);
                    det(
                        x0,
                        y0,
                        x0 + uniform(&mut rng, 0.05, 0.3),
                        y0 + uniform(&mut rng, 0.05, 0.3),
                        index(&mut rng, 3),
                        uniform(&mut rng, 0.0, 1.0),
                    )
                })
                .collect();
            let per_class = index(&mut rng, 2) == 0;
            assert_eq!(
                nms(&dets, 0.45, per_class),
                nms_reference(&dets, 0.45, per_class)
            );
        }
    }

    #[test]
    fn output_is_subsequence_with_no_overlapping_same_class_pair() {
        let mut rng = seeded(55);
        for _ in 0..100 {
            let dets: Vec<Detection> = (0..8)
                .map(|_| {
                    let x0 = uniform(&mut rng, 0.0, 0.6);
                    let y0 = uniform(&mut rng, 0.0, 0.6);
                    det(
                        x0,
                        y0,
                        x0 + uniform(&mut rng, 0.1, 0.4),
                        y0 + uniform(&mut rng, 0.1, 0.4),
                        index(&mut rng, 2),
                        uniform(&mut rng, 0.0, 1.0),
                    )
                })
                .collect();
            let kept = nms(&dets, 0.45, true);
            for k in &kept {
                assert!(dets.contains(k));
            }
            for i in 0..kept.len() {
                for j in i + 1..kept.len() {
                    if kept[i].class_id == kept[j].class_id {
                        assert!(iou(&kept[i].bbox, &kept[j].bbox) <= 0.45);
                    }
                }
            }
        }
    }

    #[test]
    fn csv_dump_is_line_per_detection() {
        let dets = vec![det(0.1, 0.2, 0.3, 0.4, 2, 0.75)];
        let csv = dump_detections_csv(&dets);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0], "class_id,confidence,xmin,ymin,xmax,ymax");
        assert_eq!(lines[1], "2,0.75,0.1,0.2,0.3,0.4");
    }
}
