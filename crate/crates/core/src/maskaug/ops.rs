//! Pixel-level mask ops: thresholding, masking, and the three object
//! perturbations (channel permutation, salt noise, contrast stretch).

use super::AugError;
use crate::imageio::{BinaryMask, Image};
use crate::numkit::Tensor;
use crate::rng::{index, uniform, Prng};
use crate::scalar::Real;

/// The five non-identity permutations of (R, G, B), as source indices:
/// output channel `c` reads input channel `perm[c]`.
const CHANNEL_PERMS: [[usize; 3]; 5] = [
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

/// Thresholds a probability map into a binary mask. Values greater than or
/// equal to `threshold` map to 1, so a value exactly at the threshold counts
/// as foreground.
///
/// Accepts a `[H, W]` or `[1, 1, H, W]` tensor.
pub fn binarize<T: Real>(prob_map: &Tensor<T>, threshold: T) -> Result<BinaryMask, AugError> {
    let (h, w) = match prob_map.shape() {
        [h, w] => (*h, *w),
        [1, 1, h, w] => (*h, *w),
        other => {
            return Err(AugError::Dimension(format!(
                "binarize expects [H, W] or [1, 1, H, W], got {other:?}"
            )))
        }
    };
    let values = prob_map
        .data()
        .iter()
        .map(|&v| u8::from(v >= threshold))
        .collect();
    BinaryMask::new(w, h, values).map_err(|e| AugError::Contract(e.to_string()))
}

/// Multiplies an image by a binary mask, broadcasting the mask across
/// channels. Background pixels become exactly zero.
pub fn mask_multiply<T: Real>(image: &Image<T>, mask: &BinaryMask) -> Result<Image<T>, AugError> {
    check_dims("mask_multiply", image, mask)?;
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if !mask.get(x, y) {
                for c in 0..image.channels() {
                    out.set(x, y, c, T::zero());
                }
            }
        }
    }
    Ok(out)
}

/// Applies a uniformly drawn non-identity RGB permutation to the pixels
/// inside the mask. Background pixels are untouched. Only defined for
/// 3-channel images.
pub fn perturb_channels<T: Real>(
    image: &Image<T>,
    mask: &BinaryMask,
    rng: &mut Prng,
) -> Result<Image<T>, AugError> {
    check_dims("perturb_channels", image, mask)?;
    if image.channels() != 3 {
        return Err(AugError::Contract(format!(
            "perturb_channels requires a 3-channel image, got {} channels",
            image.channels()
        )));
    }
    let perm = CHANNEL_PERMS[index(rng, CHANNEL_PERMS.len())];
    Ok(apply_channel_perm(image, mask, perm))
}

fn apply_channel_perm<T: Real>(image: &Image<T>, mask: &BinaryMask, perm: [usize; 3]) -> Image<T> {
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                for c in 0..3 {
                    out.set(x, y, c, image.get(x, y, perm[c]));
                }
            }
        }
    }
    out
}

/// Sets `round(density * foreground_count)` distinct mask-positive pixels to
/// full white (1.0 in every channel). Positions are sampled without
/// replacement; background pixels are untouched.
pub fn add_salt_noise<T: Real>(
    image: &Image<T>,
    mask: &BinaryMask,
    density: f64,
    rng: &mut Prng,
) -> Result<Image<T>, AugError> {
    check_dims("add_salt_noise", image, mask)?;
    if !(0.0..=1.0).contains(&density) {
        return Err(AugError::Contract(format!(
            "salt density must lie in [0, 1], got {density}"
        )));
    }
    let mut fg: Vec<(usize, usize)> = Vec::with_capacity(mask.count_ones());
    for y in 0..mask.height() {
        for x in 0..mask.width() {
            if mask.get(x, y) {
                fg.push((x, y));
            }
        }
    }
    let count = (density * fg.len() as f64).round() as usize;
    // Partial Fisher-Yates: after the loop the first `count` entries are a
    // uniform sample without replacement.
    for i in 0..count {
        let j = i + index(rng, fg.len() - i);
        fg.swap(i, j);
    }
    let mut out = image.clone();
    for &(x, y) in &fg[..count] {
        for c in 0..image.channels() {
            out.set(x, y, c, T::one());
        }
    }
    Ok(out)
}

/// Stretches contrast inside the mask: each channel is remapped as
/// `clamp(mean + alpha * (v - mean), 0, 1)` where `mean` is that channel's
/// average over mask-positive pixels. An empty mask is a no-op.
pub fn enhance_contrast<T: Real>(
    image: &Image<T>,
    mask: &BinaryMask,
    alpha: T,
) -> Result<Image<T>, AugError> {
    check_dims("enhance_contrast", image, mask)?;
    if !(alpha > T::zero()) {
        return Err(AugError::Contract(format!(
            "contrast alpha must be positive, got {alpha}"
        )));
    }
    let fg_count = mask.count_ones();
    // `mean + 1 * (v - mean)` rounds away from `v` in floating point, so the
    // alpha = 1 identity is handled explicitly.
    if fg_count == 0 || alpha == T::one() {
        return Ok(image.clone());
    }
    let n = T::of(fg_count as f64);
    let mut means = vec![T::zero(); image.channels()];
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                for (c, m) in means.iter_mut().enumerate() {
                    *m += image.get(x, y, c);
                }
            }
        }
    }
    for m in &mut means {
        *m /= n;
    }
    let mut out = image.clone();
    for y in 0..image.height() {
        for x in 0..image.width() {
            if mask.get(x, y) {
                for (c, &m) in means.iter().enumerate() {
                    let v = m + alpha * (image.get(x, y, c) - m);
                    out.set(x, y, c, v.max(T::zero()).min(T::one()));
                }
            }
        }
    }
    Ok(out)
}

/// Draws a contrast alpha uniformly from `range` and applies it.
pub(crate) fn contrast_with_range<T: Real>(
    image: &Image<T>,
    mask: &BinaryMask,
    range: (f64, f64),
    rng: &mut Prng,
) -> Result<Image<T>, AugError> {
    let alpha = uniform(rng, range.0, range.1);
    enhance_contrast(image, mask, T::of(alpha))
}

fn check_dims<T: Real>(op: &str, image: &Image<T>, mask: &BinaryMask) -> Result<(), AugError> {
    if image.width() != mask.width() || image.height() != mask.height() {
        return Err(AugError::Dimension(format!(
            "{op}: image is {}x{} but mask is {}x{}",
            image.width(),
            image.height(),
            mask.width(),
            mask.height()
        )));
    }
    Ok(())
}
