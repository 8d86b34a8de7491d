//! Geometry-changing baseline augmentations: flip, crop, brightness.

use super::AugError;
use crate::imageio::{box_covers_foreground, GTBox, PairedSample};
use crate::rng::{index, uniform, Prng};
use crate::scalar::Real;

/// Smallest crop window as a fraction of each image dimension.
const MIN_CROP_SCALE: f64 = 0.6;
/// Attempts to find a crop window containing at least one box center.
const CROP_ATTEMPTS: usize = 50;
/// Brightness shift bound (applied to the whole image, then clamped).
const BRIGHTNESS_DELTA: f64 = 0.125;

/// Mirrors a sample horizontally: image, mask, and boxes together.
/// An involution: flipping twice restores the sample exactly.
pub fn hflip<T: Real>(sample: &PairedSample<T>) -> PairedSample<T> {
    let src = sample.image();
    let (w, h) = (src.width(), src.height());
    let mut image = src.clone();
    let mut mask = sample.mask().clone();
    for y in 0..h {
        for x in 0..w {
            let mx = w - 1 - x;
            for c in 0..src.channels() {
                image.set(x, y, c, src.get(mx, y, c));
            }
            mask.set(x, y, sample.mask().get(mx, y));
        }
    }
    let boxes = sample
        .boxes()
        .iter()
        .map(|b| GTBox {
            xmin: w as f64 - b.xmax,
            xmax: w as f64 - b.xmin,
            ..*b
        })
        .collect();
    PairedSample::new_unchecked(image, mask, boxes).expect("flip preserves dimensions")
}

/// Crops the window `[x0, x0+cw) x [y0, y0+ch)` and resizes it back to the
/// original dimensions by nearest-neighbor sampling, so the mask stays
/// binary. Boxes keep only those whose center lies in the window; survivors
/// are clipped, rescaled, and dropped if they no longer cover any
/// mask-positive pixel. Cropping to the full extent is the identity.
pub fn crop_to_window<T: Real>(
    sample: &PairedSample<T>,
    x0: usize,
    y0: usize,
    cw: usize,
    ch: usize,
) -> Result<PairedSample<T>, AugError> {
    let src = sample.image();
    let (w, h) = (src.width(), src.height());
    if cw == 0 || ch == 0 || x0 + cw > w || y0 + ch > h {
        return Err(AugError::Contract(format!(
            "crop window ({x0},{y0}) {cw}x{ch} exceeds image {w}x{h}"
        )));
    }
    let mut image = src.clone();
    let mut mask = sample.mask().clone();
    for y in 0..h {
        let sy = y0 + nearest_src(y, ch, h);
        for x in 0..w {
            let sx = x0 + nearest_src(x, cw, w);
            for c in 0..src.channels() {
                image.set(x, y, c, src.get(sx, sy, c));
            }
            mask.set(x, y, sample.mask().get(sx, sy));
        }
    }
    let sx_scale = w as f64 / cw as f64;
    let sy_scale = h as f64 / ch as f64;
    let mut boxes = Vec::new();
    for b in sample.boxes() {
        let cx = (b.xmin + b.xmax) / 2.0;
        let cy = (b.ymin + b.ymax) / 2.0;
        let in_window = cx >= x0 as f64
            && cx < (x0 + cw) as f64
            && cy >= y0 as f64
            && cy < (y0 + ch) as f64;
        if !in_window {
            continue;
        }
        let nxmin = (b.xmin - x0 as f64).max(0.0) * sx_scale;
        let nxmax = (b.xmax - x0 as f64).min(cw as f64) * sx_scale;
        let nymin = (b.ymin - y0 as f64).max(0.0) * sy_scale;
        let nymax = (b.ymax - y0 as f64).min(ch as f64) * sy_scale;
        let Ok(nb) = GTBox::new(nxmin, nymin, nxmax, nymax, b.class_id, b.difficult) else {
            continue;
        };
        if box_covers_foreground(&nb, &mask) {
            boxes.push(nb);
        }
    }
    PairedSample::new_unchecked(image, mask, boxes)
        .map_err(|e| AugError::Contract(e.to_string()))
}

/// Nearest-neighbor source index when stretching `src_len` samples to
/// `dst_len` slots: pixel centers are aligned, result is in `0..src_len`.
fn nearest_src(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64;
    (pos as usize).min(src_len - 1)
}

/// Standard training-time augmentation: horizontal flip with probability
/// 0.5, a random crop that keeps at least one box center (falling back to
/// the full frame), and a whole-image brightness shift. Geometry transforms
/// keep image, mask, and boxes consistent.
pub fn baseline_augment<T: Real>(sample: &PairedSample<T>, rng: &mut Prng) -> PairedSample<T> {
    let mut out = if uniform(rng, 0.0, 1.0) < 0.5 {
        hflip(sample)
    } else {
        sample.clone()
    };

    let (w, h) = (out.image().width(), out.image().height());
    for _ in 0..CROP_ATTEMPTS {
        let scale = uniform(rng, MIN_CROP_SCALE, 1.0);
        let cw = ((scale * w as f64).round() as usize).clamp(1, w);
        let ch = ((scale * h as f64).round() as usize).clamp(1, h);
        let x0 = index(rng, w - cw + 1);
        let y0 = index(rng, h - ch + 1);
        let keeps_center = out.boxes().is_empty()
            || out.boxes().iter().any(|b| {
                let cx = (b.xmin + b.xmax) / 2.0;
                let cy = (b.ymin + b.ymax) / 2.0;
                cx >= x0 as f64
                    && cx < (x0 + cw) as f64
                    && cy >= y0 as f64
                    && cy < (y0 + ch) as f64
            });
        if !keeps_center {
            continue;
        }
        if let Ok(cropped) = crop_to_window(&out, x0, y0, cw, ch) {
            out = cropped;
        }
        break;
    }

    let delta = T::of(uniform(rng, -BRIGHTNESS_DELTA, BRIGHTNESS_DELTA));
    let mut image = out.image().clone();
    for v in image.pixels_mut() {
        *v = (*v + delta).max(T::zero()).min(T::one());
    }
    let (_, mask, boxes) = out.into_parts();
    PairedSample::new_unchecked(image, mask, boxes).expect("brightness preserves dimensions")
}
