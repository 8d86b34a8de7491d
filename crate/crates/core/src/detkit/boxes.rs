//! Box geometry: corner boxes, IoU, prior-box generation, offset coding.

use super::DetError;

/// Encoding variances for the center offsets and the log size offsets.
const VAR_CENTER: f64 = 0.1;
const VAR_SIZE: f64 = 0.2;

/// Axis-aligned box in corner form. Detection-side boxes are normalized to
/// the unit square; the struct itself is unit-agnostic.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Self {
        BBox { xmin, ymin, xmax, ymax }
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Center-size view: (cx, cy, w, h).
    pub fn to_center_size(&self) -> (f64, f64, f64, f64) {
        (
            (self.xmin + self.xmax) / 2.0,
            (self.ymin + self.ymax) / 2.0,
            self.width(),
            self.height(),
        )
    }

    pub fn from_center_size(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        BBox::new(cx - w / 2.0, cy - h / 2.0, cx + w / 2.0, cy + h / 2.0)
    }

    /// Clips the box to the unit square.
    pub fn clip_unit(&self) -> Self {
        BBox::new(
            self.xmin.clamp(0.0, 1.0),
            self.ymin.clamp(0.0, 1.0),
            self.xmax.clamp(0.0, 1.0),
            self.ymax.clamp(0.0, 1.0),
        )
    }
}

/// Intersection over union. Degenerate (zero-area) boxes contribute no
/// intersection, so pairs involving them score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let iy = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = ix * iy;
    let union = a.area().max(0.0) + b.area().max(0.0) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// One feature-map scale contributing prior boxes.
///
/// Each listed aspect ratio `r` contributes two boxes (`r` and `1/r`), on
/// top of the two ratio-1 boxes every cell gets, so a cell emits `2 + 2k`
/// priors for `k` ratios.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    resolution: usize,
    scale: f64,
    aspect_ratios: Vec<f64>,
}

impl LayerSpec {
    pub fn new(resolution: usize, scale: f64, aspect_ratios: Vec<f64>) -> Result<Self, DetError> {
        if resolution == 0 {
            return Err(DetError::Config("layer resolution must be at least 1".into()));
        }
        if !(scale > 0.0 && scale <= 1.0) {
            return Err(DetError::Config(format!(
                "layer scale must lie in (0, 1], got {scale}"
            )));
        }
        for (i, &r) in aspect_ratios.iter().enumerate() {
            if !(r > 0.0) {
                return Err(DetError::Config(format!("aspect ratio {r} is not positive")));
            }
            if aspect_ratios[..i].contains(&r) {
                return Err(DetError::Config(format!("duplicate aspect ratio {r}")));
            }
        }
        Ok(LayerSpec { resolution, scale, aspect_ratios })
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn aspect_ratios(&self) -> &[f64] {
        &self.aspect_ratios
    }

    /// Priors per grid cell.
    pub fn anchors_per_cell(&self) -> usize {
        2 + 2 * self.aspect_ratios.len()
    }

    /// Priors contributed by the whole layer.
    pub fn prior_count(&self) -> usize {
        self.resolution * self.resolution * self.anchors_per_cell()
    }
}

/// Prior (anchor) box in normalized center-size coordinates. Width and
/// height are positive; boxes near the frame edge may extend past `[0,1]`
/// until clipped at decode time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PriorBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl PriorBox {
    pub fn to_corner(&self) -> BBox {
        BBox::from_center_size(self.cx, self.cy, self.w, self.h)
    }
}

/// Generates prior boxes for every spec, concatenated in spec order.
///
/// Per cell, in order: the ratio-1 box at the layer scale, a ratio-1 box at
/// the geometric mean of this and the next layer's scale (1.0 past the last
/// layer), then for each listed ratio `r` the pair (`r`, `1/r`). Cells are
/// visited row-major; centers sit at cell midpoints.
pub fn gen_prior_boxes(specs: &[LayerSpec]) -> Result<Vec<PriorBox>, DetError> {
    if specs.is_empty() {
        return Err(DetError::Config("prior generation needs at least one layer".into()));
    }
    let mut priors = Vec::new();
    for (si, spec) in specs.iter().enumerate() {
        let s = spec.scale;
        let s_next = specs.get(si + 1).map_or(1.0, |n| n.scale);
        let s_prime = (s * s_next).sqrt();
        let res = spec.resolution;
        for row in 0..res {
            for col in 0..res {
                let cx = (col as f64 + 0.5) / res as f64;
                let cy = (row as f64 + 0.5) / res as f64;
                priors.push(PriorBox { cx, cy, w: s, h: s });
                priors.push(PriorBox { cx, cy, w: s_prime, h: s_prime });
                for &r in &spec.aspect_ratios {
                    let sq = r.sqrt();
                    priors.push(PriorBox { cx, cy, w: s * sq, h: s / sq });
                    priors.push(PriorBox { cx, cy, w: s / sq, h: s * sq });
                }
            }
        }
    }
    Ok(priors)
}

/// Maps per-image prior indices to rows of batched head output.
///
/// Head tensors are concatenated scale-major: all rows of scale 0 (for every
/// batch image) precede scale 1. Within a scale, rows are image-major, and
/// within an image they follow the prior order of [`gen_prior_boxes`].
#[derive(Clone, Debug)]
pub struct PriorLayout {
    blocks: Vec<(usize, usize)>,
    total: usize,
}

impl PriorLayout {
    pub fn new(specs: &[LayerSpec]) -> Self {
        let mut blocks = Vec::with_capacity(specs.len());
        let mut start = 0;
        for spec in specs {
            let len = spec.prior_count();
            blocks.push((start, len));
            start += len;
        }
        PriorLayout { blocks, total: start }
    }

    /// Priors per image.
    pub fn total(&self) -> usize {
        self.total
    }

    /// Row of prior `prior` for image `n` in a batch of `batch` images.
    pub fn row(&self, n: usize, batch: usize, prior: usize) -> usize {
        debug_assert!(n < batch && prior < self.total);
        for &(start, len) in &self.blocks {
            if prior < start + len {
                return batch * start + n * len + (prior - start);
            }
        }
        unreachable!("prior index out of range");
    }
}

/// Encodes a ground-truth box against a prior in SSD center-size form:
/// `(dcx/w_p/v1, dcy/h_p/v1, ln(w_g/w_p)/v2, ln(h_g/h_p)/v2)` with
/// variances (0.1, 0.2).
pub fn encode_offsets(gt: &BBox, prior: &PriorBox) -> Result<[f64; 4], DetError> {
    let (gcx, gcy, gw, gh) = gt.to_center_size();
    if !(gw > 0.0 && gh > 0.0) {
        return Err(DetError::Contract(format!(
            "encode needs positive box dimensions, got {gw}x{gh}"
        )));
    }
    Ok([
        (gcx - prior.cx) / prior.w / VAR_CENTER,
        (gcy - prior.cy) / prior.h / VAR_CENTER,
        (gw / prior.w).ln() / VAR_SIZE,
        (gh / prior.h).ln() / VAR_SIZE,
    ])
}

/// Inverts [`encode_offsets`].
pub fn decode_offsets(offsets: &[f64; 4], prior: &PriorBox) -> BBox {
    let cx = prior.cx + offsets[0] * VAR_CENTER * prior.w;
    let cy = prior.cy + offsets[1] * VAR_CENTER * prior.h;
    let w = prior.w * (offsets[2] * VAR_SIZE).exp();
    let h = prior.h * (offsets[3] * VAR_SIZE).exp();
    BBox::from_center_size(cx, cy, w, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{seeded, uniform};

    #[test]
    fn iou_of_identical_boxes_is_one() {
        let b = BBox::new(0.1, 0.2, 0.5, 0.9);
        assert_eq!(iou(&b, &b), 1.0);
    }

    #[test]
    fn iou_of_disjoint_boxes_is_zero() {
        let a = BBox::new(0.0, 0.0, 0.2, 0.2);
        let b = BBox::new(0.5, 0.5, 0.9, 0.9);
        assert_eq!(iou(&a, &b), 0.0);
    }

    #[test]
    fn iou_matches_analytic_overlap() {
        // (0,0,2,2) vs (1,1,3,3): intersection 1, union 7.
        let a = BBox::new(0.0, 0.0, 2.0, 2.0);
        let b = BBox::new(1.0, 1.0, 3.0, 3.0);
        assert!((iou(&a, &b) - 1.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn iou_is_symmetric() {
        let mut rng = seeded(31);
        for _ in 0..100 {
            let a = random_box(&mut rng);
            let b = random_box(&mut rng);
            assert_eq!(iou(&a, &b), iou(&b, &a));
        }
    }

    #[test]
    fn degenerate_boxes_score_zero() {
        let a = BBox::new(0.3, 0.3, 0.3, 0.8);
        let b = BBox::new(0.0, 0.0, 1.0, 1.0);
        assert_eq!(iou(&a, &b), 0.0);
        assert_eq!(iou(&a, &a), 0.0);
    }

    fn random_box(rng: &mut crate::rng::Prng) -> BBox {
        let x0 = uniform(rng, 0.0, 0.8);
        let y0 = uniform(rng, 0.0, 0.8);
        let x1 = x0 + uniform(rng, 0.05, 0.2);
        let y1 = y0 + uniform(rng, 0.05, 0.2);
        BBox::new(x0, y0, x1, y1)
    }

    #[test]
    fn single_cell_single_ratio_gives_four_priors() {
        let spec = LayerSpec::new(1, 0.5, vec![2.0]).unwrap();
        let priors = gen_prior_boxes(&[spec]).unwrap();
        assert_eq!(priors.len(), 4);
        for p in &priors {
            assert_eq!((p.cx, p.cy), (0.5, 0.5));
            assert!(p.w > 0.0 && p.h > 0.0);
        }
        // Ratio-1 box at the layer scale comes first.
        assert_eq!((priors[0].w, priors[0].h), (0.5, 0.5));
        // Ratio pair: w/h = 2 then 1/2.
        assert!((priors[2].w / priors[2].h - 2.0).abs() < 1e-12);
        assert!((priors[3].w / priors[3].h - 0.5).abs() < 1e-12);
    }

    #[test]
    fn three_ratio_layer_gives_eight_per_cell() {
        let spec = LayerSpec::new(3, 0.4, vec![2.0, 3.0, 1.6]).unwrap();
        let priors = gen_prior_boxes(&[spec]).unwrap();
        assert_eq!(priors.len(), 72);
    }

    #[test]
    fn six_layer_pyramid_matches_hand_count() {
        // 41^2*4 + 21^2*8 + 11^2*8 + 6^2*8 + 3^2*4 + 2^2*4 = 11560.
        let priors = gen_prior_boxes(&pyramid_specs()).unwrap();
        assert_eq!(priors.len(), 11560);
    }

    fn pyramid_specs() -> Vec<LayerSpec> {
        let resolutions = [41, 21, 11, 6, 3, 2];
        let ratio_sets: [&[f64]; 6] = [
            &[2.0],
            &[2.0, 3.0, 1.6],
            &[2.0, 3.0, 1.6],
            &[2.0, 3.0, 1.6],
            &[2.0],
            &[2.0],
        ];
        resolutions
            .iter()
            .zip(ratio_sets)
            .enumerate()
            .map(|(i, (&res, ratios))| {
                let scale = 0.1 + 0.8 * i as f64 / 5.0;
                LayerSpec::new(res, scale, ratios.to_vec()).unwrap()
            })
            .collect()
    }

    #[test]
    fn prior_count_formula_matches_enumeration() {
        let mut rng = seeded(77);
        for _ in 0..20 {
            let n_specs = 1 + crate::rng::index(&mut rng, 3);
            let specs: Vec<LayerSpec> = (0..n_specs)
                .map(|_| {
                    let res = 1 + crate::rng::index(&mut rng, 9);
                    let k = crate::rng::index(&mut rng, 3);
                    let ratios: Vec<f64> =
                        (0..k).map(|j| 1.5 + j as f64 + uniform(&mut rng, 0.0, 0.4)).collect();
                    LayerSpec::new(res, uniform(&mut rng, 0.1, 0.9), ratios).unwrap()
                })
                .collect();
            let expected: usize = specs.iter().map(|s| s.prior_count()).sum();
            assert_eq!(gen_prior_boxes(&specs).unwrap().len(), expected);
        }
    }

    #[test]
    fn centers_sit_at_cell_midpoints() {
        let spec = LayerSpec::new(2, 0.3, vec![]).unwrap();
        let priors = gen_prior_boxes(&[spec]).unwrap();
        assert_eq!(priors.len(), 8);
        assert_eq!((priors[0].cx, priors[0].cy), (0.25, 0.25));
        assert_eq!((priors[2].cx, priors[2].cy), (0.75, 0.25));
        assert_eq!((priors[4].cx, priors[4].cy), (0.25, 0.75));
    }

    #[test]
    fn bad_specs_are_rejected() {
        assert!(LayerSpec::new(0, 0.5, vec![]).is_err());
        assert!(LayerSpec::new(4, 0.0, vec![]).is_err());
        assert!(LayerSpec::new(4, 1.5, vec![]).is_err());
        assert!(LayerSpec::new(4, 0.5, vec![-2.0]).is_err());
        assert!(LayerSpec::new(4, 0.5, vec![2.0, 2.0]).is_err());
        assert!(gen_prior_boxes(&[]).is_err());
    }

    #[test]
    fn layout_rows_are_scale_then_image_major() {
        let specs = vec![
            LayerSpec::new(2, 0.2, vec![]).unwrap(),
            LayerSpec::new(1, 0.6, vec![]).unwrap(),
        ];
        let layout = PriorLayout::new(&specs);
        assert_eq!(layout.total(), 8 + 2);
        // Batch of 3: scale-0 rows occupy 0..24, scale-1 rows 24..30.
        assert_eq!(layout.row(0, 3, 0), 0);
        assert_eq!(layout.row(1, 3, 0), 8);
        assert_eq!(layout.row(2, 3, 7), 23);
        assert_eq!(layout.row(0, 3, 8), 24);
        assert_eq!(layout.row(2, 3, 9), 29);
    }

    #[test]
    fn layout_covers_all_rows_exactly_once() {
        let specs = vec![
            LayerSpec::new(3, 0.2, vec![2.0]).unwrap(),
            LayerSpec::new(2, 0.5, vec![]).unwrap(),
        ];
        let layout = PriorLayout::new(&specs);
        let batch = 4;
        let mut seen = vec![false; batch * layout.total()];
        for n in 0..batch {
            for p in 0..layout.total() {
                let row = layout.row(n, batch, p);
                assert!(!seen[row]);
                seen[row] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn encode_of_identical_boxes_is_zero() {
        let prior = PriorBox { cx: 0.5, cy: 0.5, w: 0.2, h: 0.3 };
        let offs = encode_offsets(&prior.to_corner(), &prior).unwrap();
        for o in offs {
            assert!(o.abs() < 1e-12);
        }
    }

    #[test]
    fn encode_matches_analytic_formula() {
        let prior = PriorBox { cx: 0.5, cy: 0.5, w: 0.2, h: 0.2 };
        let gt = BBox::from_center_size(0.55, 0.5, 0.4, 0.2);
        let offs = encode_offsets(&gt, &prior).unwrap();
        assert!((offs[0] - 2.5).abs() < 1e-12);
        assert!(offs[1].abs() < 1e-12);
        assert!((offs[2] - 2.0f64.ln() / 0.2).abs() < 1e-12);
        assert!(offs[3].abs() < 1e-12);
    }

    #[test]
    fn decode_inverts_encode() {
        let mut rng = seeded(5);
        for _ in 0..200 {
            let prior = PriorBox {
                cx: uniform(&mut rng, 0.1, 0.9),
                cy: uniform(&mut rng, 0.1, 0.9),
                w: uniform(&mut rng, 0.05, 0.5),
                h: uniform(&mut rng, 0.05, 0.5),
            };
            let gt = random_box(&mut rng);
            let offs = encode_offsets(&gt, &prior).unwrap();
            let back = decode_offsets(&offs, &prior);
            assert!((back.xmin - gt.xmin).abs() < 1e-12);
            assert!((back.ymin - gt.ymin).abs() < 1e-12);
            assert!((back.xmax - gt.xmax).abs() < 1e-12);
            assert!((back.ymax - gt.ymax).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_rejects_degenerate_gt() {
        let prior = PriorBox { cx: 0.5, cy: 0.5, w: 0.2, h: 0.2 };
        let gt = BBox::new(0.3, 0.3, 0.3, 0.6);
        assert!(encode_offsets(&gt, &prior).is_err());
    }
}
