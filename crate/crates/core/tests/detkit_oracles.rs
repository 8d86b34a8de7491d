//! Oracle-equivalence tests for the detection machinery: each operation is
//! checked against an independently coded reference on randomized cases.

use maskforge_core::detkit::{
    eval_map, gen_prior_boxes, iou, match_anchors, Assignment, BBox, Detection, EvalBox,
    LayerSpec, PriorBox,
};
use maskforge_core::rng::{index, seeded, uniform, Prng};

fn random_box(rng: &mut Prng) -> BBox {
    let x0 = uniform(rng, 0.0, 0.7);
    let y0 = uniform(rng, 0.0, 0.7);
    BBox::new(
        x0,
        y0,
        x0 + uniform(rng, 0.05, 0.3),
        y0 + uniform(rng, 0.05, 0.3),
    )
}

/// Counts grid-cell centers of a `res`-cell subdivision of [0,1] that fall
/// inside `[lo, hi)`.
fn cells_inside(lo: f64, hi: f64, res: usize) -> usize {
    (0..res)
        .filter(|&i| {
            let c = (i as f64 + 0.5) / res as f64;
            c >= lo && c < hi
        })
        .count()
}

#[test]
fn iou_matches_rasterized_counting() {
    // Axis-aligned boxes factor into per-axis cell counts, so the 2D
    // raster count is the product of two 1D counts.
    let res = 100_000;
    let mut rng = seeded(4001);
    for _ in 0..200 {
        let a = random_box(&mut rng);
        let b = random_box(&mut rng);
        let ax = cells_inside(a.xmin, a.xmax, res);
        let ay = cells_inside(a.ymin, a.ymax, res);
        let bx = cells_inside(b.xmin, b.xmax, res);
        let by = cells_inside(b.ymin, b.ymax, res);
        let ix = cells_inside(a.xmin.max(b.xmin), a.xmax.min(b.xmax), res);
        let iy = cells_inside(a.ymin.max(b.ymin), a.ymax.min(b.ymax), res);
        let inter = (ix * iy) as f64;
        let union = (ax * ay + bx * by) as f64 - inter;
        let raster = if union == 0.0 { 0.0 } else { inter / union };
        assert!(
            (iou(&a, &b) - raster).abs() < 1e-3,
            "iou {} vs raster {raster}",
            iou(&a, &b)
        );
    }
}

/// Reference matcher: same stated rule, independently coded with explicit
/// IoU tables and tie handling.
fn match_reference(gts: &[BBox], priors: &[PriorBox], thr: f64) -> Vec<Assignment> {
    let table: Vec<Vec<f64>> = priors
        .iter()
        .map(|p| gts.iter().map(|g| iou(&p.to_corner(), g)).collect())
        .collect();
    let mut out = vec![Assignment::Background; priors.len()];
    for (p, row) in table.iter().enumerate() {
        let mut best_g = None;
        let mut best_v = 0.0;
        for (g, &v) in row.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best_g = Some(g);
            }
        }
        if let Some(g) = best_g {
            if best_v >= thr {
                out[p] = Assignment::Matched(g);
            }
        }
    }
    let mut used = vec![false; priors.len()];
    for g in 0..gts.len() {
        let mut best_p = None;
        let mut best_v = -1.0;
        for p in 0..priors.len() {
            if used[p] {
                continue;
            }
            if table[p][g] > best_v {
                best_v = table[p][g];
                best_p = Some(p);
            }
        }
        let p = best_p.expect("more priors than ground-truth boxes in these cases");
        used[p] = true;
        out[p] = Assignment::Matched(g);
    }
    out
}

#[test]
fn matching_equals_brute_force_on_random_cases() {
    let specs = vec![
        LayerSpec::new(6, 0.2, vec![2.0]).unwrap(),
        LayerSpec::new(3, 0.5, vec![2.0]).unwrap(),
    ];
    let priors = gen_prior_boxes(&specs).unwrap();
    let mut rng = seeded(4002);
    for case in 0..200 {
        let n_gt = 1 + index(&mut rng, 5);
        let gts: Vec<BBox> = (0..n_gt).map(|_| random_box(&mut rng)).collect();
        let got = match_anchors(&gts, &priors, 0.5).unwrap();
        let expected = match_reference(&gts, &priors, 0.5);
        assert_eq!(got.assignments, expected, "case {case}");
        for (g, &p) in got.best_prior.iter().enumerate() {
            assert_eq!(got.assignments[p], Assignment::Matched(g));
        }
    }
}

#[test]
fn pyramid_prior_count_is_exact() {
    let resolutions = [41, 21, 11, 6, 3, 2];
    let ratio_sets: [&[f64]; 6] = [
        &[2.0],
        &[2.0, 3.0, 1.6],
        &[2.0, 3.0, 1.6],
        &[2.0, 3.0, 1.6],
        &[2.0],
        &[2.0],
    ];
    let specs: Vec<LayerSpec> = resolutions
        .iter()
        .zip(ratio_sets)
        .enumerate()
        .map(|(i, (&res, ratios))| {
            LayerSpec::new(res, 0.1 + 0.8 * i as f64 / 5.0, ratios.to_vec()).unwrap()
        })
        .collect();
    assert_eq!(gen_prior_boxes(&specs).unwrap().len(), 11560);
}

/// A constructed ranking case: detections are exact copies of ground-truth
/// boxes or a far-away false-positive box, so the TP/FP outcome of each
/// detection is decidable without IoU arithmetic.
struct RankCase {
    dets: Vec<Detection>,
    /// Some(gt index) for copies, None for false positives.
    source: Vec<Option<usize>>,
    n_gt: usize,
}

fn build_rank_case(rng: &mut Prng) -> RankCase {
    let n_gt = 1 + index(rng, 4);
    let n_det = 1 + index(rng, 8);
    // Distinct confidences rule out ordering ambiguity.
    let mut confs: Vec<f64> = (0..n_det).map(|i| 0.05 + 0.9 * i as f64 / n_det as f64).collect();
    for i in (1..confs.len()).rev() {
        confs.swap(i, index(rng, i + 1));
    }
    let mut dets = Vec::new();
    let mut source = Vec::new();
    for conf in confs {
        if index(rng, 3) == 0 {
            let fp = BBox::new(0.9, 0.9, 0.99, 0.99);
            dets.push(Detection { bbox: fp, class_id: 0, confidence: conf });
            source.push(None);
        } else {
            let g = index(rng, n_gt);
            dets.push(Detection { bbox: gt_box(g), class_id: 0, confidence: conf });
            source.push(Some(g));
        }
    }
    RankCase { dets, source, n_gt }
}

/// Ground-truth boxes on a diagonal, pairwise disjoint and far from the
/// false-positive corner.
fn gt_box(i: usize) -> BBox {
    let o = 0.02 + 0.2 * i as f64;
    BBox::new(o, o, o + 0.1, o + 0.1)
}

/// Direct 11-point summation from first principles.
fn ap_reference(case: &RankCase) -> f64 {
    let mut order: Vec<usize> = (0..case.dets.len()).collect();
    order.sort_by(|&a, &b| case.dets[b].confidence.partial_cmp(&case.dets[a].confidence).unwrap());
    let mut credited = vec![false; case.n_gt];
    let mut points = Vec::new();
    let mut tp = 0usize;
    let mut fpc = 0usize;
    for &i in &order {
        match case.source[i] {
            Some(g) if !credited[g] => {
                credited[g] = true;
                tp += 1;
            }
            _ => fpc += 1,
        }
        points.push((
            tp as f64 / (tp + fpc) as f64,
            tp as f64 / case.n_gt as f64,
        ));
    }
    let mut total = 0.0;
    for t in 0..=10 {
        let thr = t as f64 / 10.0;
        let mut best = 0.0;
        for &(p, r) in &points {
            if r + 1e-12 >= thr && p > best {
                best = p;
            }
        }
        total += best;
    }
    total / 11.0
}

#[test]
fn eleven_point_ap_matches_direct_summation() {
    let mut rng = seeded(4003);
    for case_idx in 0..50 {
        let case = build_rank_case(&mut rng);
        let gts: Vec<EvalBox> = (0..case.n_gt)
            .map(|g| EvalBox { bbox: gt_box(g), class_id: 0, difficult: false })
            .collect();
        let result = eval_map(&[case.dets.clone()], &[gts], 0.5, 1).unwrap();
        let expected = ap_reference(&case);
        let got = result.per_class[0].unwrap();
        assert!(
            (got - expected).abs() < 1e-12,
            "case {case_idx}: got {got}, reference {expected}"
        );
    }
}

#[test]
fn ap_spans_multiple_images() {
    // The same ranking split across two images must evaluate identically
    // to the single-image pooling.
    let g0 = gt_box(0);
    let g1 = gt_box(1);
    let d = |b: BBox, conf: f64| Detection { bbox: b, class_id: 0, confidence: conf };
    let single = eval_map(
        &[vec![d(g0, 0.9), d(g1, 0.6), d(BBox::new(0.9, 0.9, 0.99, 0.99), 0.75)]],
        &[vec![
            EvalBox { bbox: g0, class_id: 0, difficult: false },
            EvalBox { bbox: g1, class_id: 0, difficult: false },
        ]],
        0.5,
        1,
    )
    .unwrap();
    let split = eval_map(
        &[
            vec![d(g0, 0.9), d(BBox::new(0.9, 0.9, 0.99, 0.99), 0.75)],
            vec![d(g1, 0.6)],
        ],
        &[
            vec![EvalBox { bbox: g0, class_id: 0, difficult: false }],
            vec![EvalBox { bbox: g1, class_id: 0, difficult: false }],
        ],
        0.5,
        1,
    )
    .unwrap();
    assert_eq!(single.per_class, split.per_class);
}
