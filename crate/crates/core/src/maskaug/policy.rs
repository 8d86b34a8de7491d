//! Batch-level perturbation policy.

use super::ops::{add_salt_noise, contrast_with_range, perturb_channels};
use super::AugError;
use crate::imageio::PairedSample;
use crate::rng::{index, uniform, Prng};
use crate::scalar::Real;

/// Which object perturbation was applied to a sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbMode {
    Channel,
    Salt,
    Contrast,
}

impl PerturbMode {
    pub fn name(self) -> &'static str {
        match self {
            PerturbMode::Channel => "channel",
            PerturbMode::Salt => "salt",
            PerturbMode::Contrast => "contrast",
        }
    }
}

/// Controls how [`enhance_batch`] perturbs a training batch.
///
/// With probability `batch_prob` a batch is enhanced: a count `n` is drawn
/// uniformly from `n_range` and each of the first `n` samples receives one
/// perturbation mode drawn from `mode_weights` (ordered channel, salt,
/// contrast). Weights must sum to 1 and `n_range` must sit inside
/// `[1, batch_size]`.
#[derive(Debug, Clone)]
pub struct AugmentPolicy {
    pub batch_prob: f64,
    pub batch_size: usize,
    pub n_range: (usize, usize),
    pub mode_weights: [f64; 3],
    pub salt_density: f64,
    pub contrast_alpha_range: (f64, f64),
    pub rng_seed: u64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            batch_prob: 0.5,
            batch_size: 8,
            n_range: (1, 7),
            mode_weights: [1.0 / 3.0; 3],
            salt_density: 0.05,
            contrast_alpha_range: (1.2, 1.8),
            rng_seed: 0,
        }
    }
}

impl AugmentPolicy {
    pub fn validate(&self) -> Result<(), AugError> {
        if !(0.0..=1.0).contains(&self.batch_prob) {
            return Err(AugError::Policy(format!(
                "batch_prob must lie in [0, 1], got {}",
                self.batch_prob
            )));
        }
        if self.batch_size == 0 {
            return Err(AugError::Policy("batch_size must be positive".into()));
        }
        let (lo, hi) = self.n_range;
        if lo < 1 || hi < lo || hi > self.batch_size {
            return Err(AugError::Policy(format!(
                "n_range [{lo}, {hi}] must sit inside [1, {}]",
                self.batch_size
            )));
        }
        if self.mode_weights.iter().any(|&w| w < 0.0) {
            return Err(AugError::Policy("mode weights must be non-negative".into()));
        }
        let sum: f64 = self.mode_weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(AugError::Policy(format!(
                "mode weights must sum to 1, got {sum}"
            )));
        }
        if !(0.0..=1.0).contains(&self.salt_density) {
            return Err(AugError::Policy(format!(
                "salt_density must lie in [0, 1], got {}",
                self.salt_density
            )));
        }
        let (alo, ahi) = self.contrast_alpha_range;
        if !(alo > 0.0) || ahi < alo {
            return Err(AugError::Policy(format!(
                "contrast_alpha_range ({alo}, {ahi}) must satisfy 0 < lo <= hi"
            )));
        }
        Ok(())
    }

    fn draw_mode(&self, rng: &mut Prng) -> PerturbMode {
        let u = uniform(rng, 0.0, 1.0);
        let mut acc = 0.0;
        for (i, &w) in self.mode_weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return [PerturbMode::Channel, PerturbMode::Salt, PerturbMode::Contrast][i];
            }
        }
        PerturbMode::Contrast
    }
}

/// What [`enhance_batch_logged`] did to one batch.
#[derive(Debug, Clone)]
pub struct BatchLog {
    /// Whether the batch-level coin came up heads.
    pub applied: bool,
    /// How many leading samples were perturbed (0 when not applied).
    pub n: usize,
    /// `(sample index, mode)` per perturbed sample.
    pub modes: Vec<(usize, PerturbMode)>,
}

/// Perturbs a training batch under `policy`. Boxes and masks pass through
/// unmodified; only image pixels inside each sample's mask may change.
pub fn enhance_batch<T: Real>(
    batch: &[PairedSample<T>],
    policy: &AugmentPolicy,
    rng: &mut Prng,
) -> Result<Vec<PairedSample<T>>, AugError> {
    enhance_batch_logged(batch, policy, rng).map(|(samples, _)| samples)
}

/// Like [`enhance_batch`] but also reports which samples were perturbed and
/// how, for provenance sidecars.
pub fn enhance_batch_logged<T: Real>(
    batch: &[PairedSample<T>],
    policy: &AugmentPolicy,
    rng: &mut Prng,
) -> Result<(Vec<PairedSample<T>>, BatchLog), AugError> {
    policy.validate()?;
    if batch.len() != policy.batch_size {
        return Err(AugError::Contract(format!(
            "batch has {} samples but policy.batch_size is {}",
            batch.len(),
            policy.batch_size
        )));
    }
    if uniform(rng, 0.0, 1.0) >= policy.batch_prob {
        let log = BatchLog {
            applied: false,
            n: 0,
            modes: Vec::new(),
        };
        return Ok((batch.to_vec(), log));
    }
    let (lo, hi) = policy.n_range;
    let n = lo + index(rng, hi - lo + 1);
    let mut out = Vec::with_capacity(batch.len());
    let mut modes = Vec::with_capacity(n);
    for (i, sample) in batch.iter().enumerate() {
        if i >= n {
            out.push(sample.clone());
            continue;
        }
        let mode = policy.draw_mode(rng);
        let image = match mode {
            PerturbMode::Channel => perturb_channels(sample.image(), sample.mask(), rng)?,
            PerturbMode::Salt => {
                add_salt_noise(sample.image(), sample.mask(), policy.salt_density, rng)?
            }
            PerturbMode::Contrast => {
                contrast_with_range(sample.image(), sample.mask(), policy.contrast_alpha_range, rng)?
            }
        };
        modes.push((i, mode));
        // Masks here may be predictions rather than ground truth, so skip the
        // box/mask coverage re-check; dimensions are unchanged by every mode.
        let rebuilt =
            PairedSample::new_unchecked(image, sample.mask().clone(), sample.boxes().to_vec())
                .map_err(|e| AugError::Contract(e.to_string()))?;
        out.push(rebuilt);
    }
    let log = BatchLog {
        applied: true,
        n,
        modes,
    };
    Ok((out, log))
}
