//! Adversarial and perceptual losses, each in two forms: a plain-value
//! function used as the numeric reference, and a graph builder used for
//! training. Both forms compute identical values.

use super::SepError;
use crate::numkit::{Graph, Tensor, Var};
use crate::scalar::Real;

/// Scores are clamped to `[GAN_EPS, 1 - GAN_EPS]` before taking logs.
pub const GAN_EPS: f64 = 1e-7;

/// Loss summary for one generator step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SepGanLossReport {
    pub l_gan_d: f64,
    pub l_gan_g: f64,
    pub l_perceptual: f64,
    pub lambda_p: f64,
    pub total_g: f64,
}

impl SepGanLossReport {
    pub fn new(l_gan_d: f64, l_gan_g: f64, l_perceptual: f64, lambda_p: f64) -> Self {
        SepGanLossReport {
            l_gan_d,
            l_gan_g,
            l_perceptual,
            lambda_p,
            total_g: l_gan_g + lambda_p * l_perceptual,
        }
    }
}

fn clamped_ln<T: Real>(v: T) -> T {
    let eps = T::of(GAN_EPS);
    v.max(eps).min(T::one() - eps).ln()
}

fn mean_of<T: Real>(values: impl Iterator<Item = T>, n: usize) -> T {
    values.sum::<T>() / T::of(n as f64)
}

/// Adversarial losses from raw scores: the discriminator minimizes
/// `-(mean(log d_real) + mean(log(1 - d_fake)))` and the generator
/// minimizes the non-saturating `-mean(log d_fake)`.
pub fn gan_loss<T: Real>(d_real: &[T], d_fake: &[T]) -> Result<(T, T), SepError> {
    if d_real.is_empty() || d_fake.is_empty() {
        return Err(SepError::Contract("gan_loss needs non-empty score sequences".into()));
    }
    let real_term = mean_of(d_real.iter().map(|&v| clamped_ln(v)), d_real.len());
    let fake_term = mean_of(
        d_fake.iter().map(|&v| clamped_ln(T::one() - v)),
        d_fake.len(),
    );
    let loss_d = -(real_term + fake_term);
    let loss_g = -mean_of(d_fake.iter().map(|&v| clamped_ln(v)), d_fake.len());
    Ok((loss_d, loss_g))
}

fn check_scores<T: Real>(g: &Graph<T>, scores: Var, side: &str) -> Result<(), SepError> {
    if g.value(scores).is_empty() {
        return Err(SepError::Contract(format!("gan_loss got an empty {side} score batch")));
    }
    Ok(())
}

fn mean_log<T: Real>(g: &mut Graph<T>, scores: Var) -> Var {
    let eps = T::of(GAN_EPS);
    let clamped = g.clamp(scores, eps, T::one() - eps);
    let logs = g.log(clamped);
    g.mean(logs)
}

/// Discriminator loss as a graph node over score batches.
pub fn gan_loss_d_graph<T: Real>(
    g: &mut Graph<T>,
    d_real: Var,
    d_fake: Var,
) -> Result<Var, SepError> {
    check_scores(g, d_real, "real")?;
    check_scores(g, d_fake, "fake")?;
    let real_term = mean_log(g, d_real);
    let flipped = g.affine(d_fake, -T::one(), T::one());
    let fake_term = mean_log(g, flipped);
    let value = g.add(real_term, fake_term)?;
    Ok(g.affine(value, -T::one(), T::zero()))
}

/// Non-saturating generator loss as a graph node.
pub fn gan_loss_g_graph<T: Real>(g: &mut Graph<T>, d_fake: Var) -> Result<Var, SepError> {
    check_scores(g, d_fake, "fake")?;
    let term = mean_log(g, d_fake);
    Ok(g.affine(term, -T::one(), T::zero()))
}

/// Sum over feature layers of `‖fm(x) - fm(y)‖₂ / element_count`.
pub fn perceptual_loss<T: Real>(
    features_fake: &[Tensor<T>],
    features_real: &[Tensor<T>],
) -> Result<T, SepError> {
    if features_fake.len() != features_real.len() {
        return Err(SepError::Contract(format!(
            "feature sequences have lengths {} and {}",
            features_fake.len(),
            features_real.len()
        )));
    }
    let mut total = T::zero();
    for (i, (x, y)) in features_fake.iter().zip(features_real).enumerate() {
        if x.shape() != y.shape() {
            return Err(SepError::Contract(format!(
                "feature layer {i} shapes differ: {:?} vs {:?}",
                x.shape(),
                y.shape()
            )));
        }
        let sq = x
            .data()
            .iter()
            .zip(y.data())
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>();
        total += sq.sqrt() / T::of(x.len() as f64);
    }
    Ok(total)
}

/// Perceptual loss as a graph node over feature-map variables.
pub fn perceptual_loss_graph<T: Real>(
    g: &mut Graph<T>,
    features_fake: &[Var],
    features_real: &[Var],
) -> Result<Var, SepError> {
    if features_fake.len() != features_real.len() {
        return Err(SepError::Contract(format!(
            "feature sequences have lengths {} and {}",
            features_fake.len(),
            features_real.len()
        )));
    }
    let mut total: Option<Var> = None;
    for (&x, &y) in features_fake.iter().zip(features_real) {
        let n = g.value(x).len();
        let diff = g.sub(x, y)?;
        let sq = g.mul(diff, diff)?;
        let sum = g.sum(sq);
        let norm = g.sqrt(sum);
        let scaled = g.affine(norm, T::one() / T::of(n as f64), T::zero());
        total = Some(match total {
            Some(acc) => g.add(acc, scaled)?,
            None => scaled,
        });
    }
    match total {
        Some(v) => Ok(v),
        None => Ok(g.input(Tensor::scalar(T::zero()))),
    }
}
