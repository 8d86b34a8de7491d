//! Alternating adversarial training with a frozen detector.

use super::loss::{gan_loss_d_graph, gan_loss_g_graph, perceptual_loss_graph};
use super::model::{Discriminator, Generator};
use super::SepError;
use crate::detkit::Detector;
use crate::imageio::PairedSample;
use crate::numkit::{BoundParams, Graph, ParamSet, Tensor, Var};
use crate::rng::{index, substream};
use crate::scalar::Real;
use std::io::Write;
use std::path::Path;

/// Hyperparameters for one adversarial training run.
#[derive(Clone, Debug)]
pub struct SepGanConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_d: f64,
    pub lr_g: f64,
    /// Weight of the perceptual term in the generator objective.
    pub lambda_p: f64,
    pub seed: u64,
}

impl Default for SepGanConfig {
    fn default() -> Self {
        SepGanConfig {
            epochs: 20,
            batch_size: 8,
            lr_d: 1e-3,
            lr_g: 1e-3,
            lambda_p: 10.0,
            seed: 0,
        }
    }
}

impl SepGanConfig {
    pub fn validate(&self) -> Result<(), SepError> {
        if self.batch_size == 0 {
            return Err(SepError::Config("batch size must be positive".into()));
        }
        for (name, lr) in [("discriminator", self.lr_d), ("generator", self.lr_g)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(SepError::Config(format!("{name} learning rate must be positive")));
            }
        }
        if !(self.lambda_p >= 0.0 && self.lambda_p.is_finite()) {
            return Err(SepError::Config("lambda_p must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean batch losses for one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_gan_d: f64,
    pub l_gan_g: f64,
    pub l_perceptual: f64,
}

/// Writes the loss history as `epoch,l_gan_d,l_gan_g,l_perceptual` rows.
pub fn write_loss_csv(history: &[EpochLoss], path: &Path) -> std::io::Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(out, "epoch,l_gan_d,l_gan_g,l_perceptual")?;
    for e in history {
        writeln!(out, "{},{},{},{}", e.epoch, e.l_gan_d, e.l_gan_g, e.l_perceptual)?;
    }
    out.flush()
}

/// Combines generator and discriminator parameters into one set for
/// checkpointing; names stay disjoint through their prefixes.
pub fn merge_params<T: Real>(gen: &Generator<T>, disc: &Discriminator<T>) -> ParamSet<T> {
    let mut merged = ParamSet::new();
    for (name, tensor) in gen.params().iter().chain(disc.params().iter()) {
        merged.insert(name, tensor.clone());
    }
    merged
}

/// Splits a merged checkpoint back into validated models.
pub fn split_params<T: Real>(
    params: &ParamSet<T>,
) -> Result<(Generator<T>, Discriminator<T>), SepError> {
    let mut gen_params = ParamSet::new();
    let mut disc_params = ParamSet::new();
    for (name, tensor) in params.iter() {
        if name.starts_with("G/") {
            gen_params.insert(name, tensor.clone());
        } else if name.starts_with("D/") {
            disc_params.insert(name, tensor.clone());
        } else {
            return Err(SepError::Config(format!("unexpected parameter {name}")));
        }
    }
    Ok((Generator::from_params(gen_params)?, Discriminator::from_params(disc_params)?))
}

/// Binarizes the generator map for the fake crop. Shifting the logits by
/// 0.5 puts the probability-0.5 cut at the binarizer's threshold while the
/// straight-through gradient bypasses the sigmoid, so a saturated map
/// still learns.
fn binarized_mask<T: Real>(
    g: &mut Graph<T>,
    gen: &Generator<T>,
    bound: &BoundParams,
    img: Var,
) -> Result<Var, SepError> {
    let logits = gen.forward_logits(g, bound, img)?;
    let shifted = g.affine(logits, T::one(), T::half());
    Ok(g.st_binarize(shifted))
}

fn stack_batch<T: Real>(
    dataset: &[PairedSample<T>],
    order: &[usize],
) -> Result<(Tensor<T>, Tensor<T>), SepError> {
    let images: Vec<Tensor<T>> = order.iter().map(|&i| dataset[i].image().to_tensor()).collect();
    let masks: Vec<Tensor<T>> = order.iter().map(|&i| dataset[i].mask().to_tensor()).collect();
    Ok((Tensor::concat0(&images)?, Tensor::concat0(&masks)?))
}

/// Trains a fresh generator and discriminator on paired samples.
///
/// Each batch takes one discriminator step on real crops (image times
/// ground-truth mask) versus fake crops (image times the binarized
/// generator map, generator detached), then one generator step on the
/// non-saturating adversarial loss plus the weighted perceptual loss,
/// with binarization handled straight-through. The detector is only
/// checksummed; training never touches it.
pub fn train_sepgan<T: Real>(
    dataset: &[PairedSample<T>],
    detector: &Detector<T>,
    config: &SepGanConfig,
) -> Result<(Generator<T>, Discriminator<T>, Vec<EpochLoss>), SepError> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(SepError::Contract("training dataset is empty".into()));
    }
    let detector_sum = detector.params().checksum();
    let mut gen = Generator::init(&mut substream(config.seed, 1));
    let mut disc = Discriminator::init(&mut substream(config.seed, 2));
    let mut history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut shuffle_rng = substream(config.seed, 1000 + epoch as u64);
        for i in (1..order.len()).rev() {
            order.swap(i, index(&mut shuffle_rng, i + 1));
        }
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let (images, gt_masks) = stack_batch(dataset, chunk)?;

            let l_d = {
                let mut g = Graph::new();
                let bd = disc.params().bind(&mut g);
                let bg = gen.params().bind_frozen(&mut g);
                let img = g.input(images.clone());
                let gt = g.input(gt_masks.clone());
                let fake_mask = binarized_mask(&mut g, &gen, &bg, img)?;
                let fake_crop = g.mask_mul(img, fake_mask)?;
                let real_crop = g.mask_mul(img, gt)?;
                let real_out = disc.forward(&mut g, &bd, real_crop)?;
                let fake_out = disc.forward(&mut g, &bd, fake_crop)?;
                let loss = gan_loss_d_graph(&mut g, real_out.score, fake_out.score)?;
                let value = g.value(loss).item().as_f64();
                if !value.is_finite() {
                    return Err(SepError::NonFinite { epoch });
                }
                let grads = g.backward(loss)?;
                disc.params_mut().apply_sgd(&bd, &grads, T::of(config.lr_d))?;
                value
            };

            let (l_g, l_p) = {
                let mut g = Graph::new();
                let bg = gen.params().bind(&mut g);
                let bd = disc.params().bind_frozen(&mut g);
                let img = g.input(images);
                let gt = g.input(gt_masks);
                let fake_mask = binarized_mask(&mut g, &gen, &bg, img)?;
                let fake_crop = g.mask_mul(img, fake_mask)?;
                let real_crop = g.mask_mul(img, gt)?;
                let fake_out = disc.forward(&mut g, &bd, fake_crop)?;
                let real_out = disc.forward(&mut g, &bd, real_crop)?;
                let adv = gan_loss_g_graph(&mut g, fake_out.score)?;
                let perc = perceptual_loss_graph(&mut g, &fake_out.features, &real_out.features)?;
                let weighted = g.affine(perc, T::of(config.lambda_p), T::zero());
                let total = g.add(adv, weighted)?;
                let (adv_v, perc_v) = (g.value(adv).item().as_f64(), g.value(perc).item().as_f64());
                if !(adv_v.is_finite() && perc_v.is_finite()) {
                    return Err(SepError::NonFinite { epoch });
                }
                let grads = g.backward(total)?;
                gen.params_mut().apply_sgd(&bg, &grads, T::of(config.lr_g))?;
                (adv_v, perc_v)
            };

            sums[0] += l_d;
            sums[1] += l_g;
            sums[2] += l_p;
            batches += 1;
        }
        let n = batches as f64;
        history.push(EpochLoss {
            epoch,
            l_gan_d: sums[0] / n,
            l_gan_g: sums[1] / n,
            l_perceptual: sums[2] / n,
        });
    }

    assert_eq!(
        detector.params().checksum(),
        detector_sum,
        "detector parameters changed during separation training"
    );
    Ok((gen, disc, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detkit::DetectorConfig;
    use crate::imageio::{gen_synthetic_scene, SceneConfig};
    use crate::rng::seeded;

    fn tiny_dataset(count: usize, size: usize) -> Vec<PairedSample<f64>> {
        let config = SceneConfig { image_size: size, ..SceneConfig::default() };
        (0..count)
            .map(|i| gen_synthetic_scene::<f64>(100 + i as u64, &config).unwrap())
            .collect()
    }

    fn frozen_detector() -> Detector<f64> {
        Detector::init(DetectorConfig::new(16, 3), &mut seeded(42)).unwrap()
    }

    fn quick_config(epochs: usize) -> SepGanConfig {
        SepGanConfig { epochs, batch_size: 4, ..SepGanConfig::default() }
    }

    #[test]
    fn zero_epochs_leave_parameters_at_init() {
        let dataset = tiny_dataset(4, 16);
        let det = frozen_detector();
        let (gen, disc, history) = train_sepgan(&dataset, &det, &quick_config(0)).unwrap();
        assert!(history.is_empty());
        let fresh_gen = Generator::<f64>::init(&mut substream(0, 1));
        let fresh_disc = Discriminator::<f64>::init(&mut substream(0, 2));
        assert_eq!(gen.params().checksum(), fresh_gen.params().checksum());
        assert_eq!(disc.params().checksum(), fresh_disc.params().checksum());
    }

    #[test]
    fn detector_checksum_is_preserved() {
        let dataset = tiny_dataset(4, 16);
        let det = frozen_detector();
        let before = det.params().checksum();
        train_sepgan(&dataset, &det, &quick_config(1)).unwrap();
        assert_eq!(det.params().checksum(), before);
    }

    #[test]
    fn training_is_reproducible_per_seed() {
        let dataset = tiny_dataset(6, 16);
        let det = frozen_detector();
        let config = SepGanConfig { epochs: 2, batch_size: 3, seed: 9, ..SepGanConfig::default() };
        let (g1, d1, h1) = train_sepgan(&dataset, &det, &config).unwrap();
        let (g2, d2, h2) = train_sepgan(&dataset, &det, &config).unwrap();
        assert_eq!(g1.params().checksum(), g2.params().checksum());
        assert_eq!(d1.params().checksum(), d2.params().checksum());
        assert_eq!(h1, h2);
        let other = SepGanConfig { seed: 10, ..config };
        let (g3, _, _) = train_sepgan(&dataset, &det, &other).unwrap();
        assert_ne!(g1.params().checksum(), g3.params().checksum());
    }

    #[test]
    fn training_updates_both_networks_and_logs_losses() {
        let dataset = tiny_dataset(4, 16);
        let det = frozen_detector();
        let (gen, disc, history) = train_sepgan(&dataset, &det, &quick_config(2)).unwrap();
        let fresh_gen = Generator::<f64>::init(&mut substream(0, 1));
        let fresh_disc = Discriminator::<f64>::init(&mut substream(0, 2));
        assert_ne!(gen.params().checksum(), fresh_gen.params().checksum());
        assert_ne!(disc.params().checksum(), fresh_disc.params().checksum());
        assert_eq!(history.len(), 2);
        assert_eq!((history[0].epoch, history[1].epoch), (0, 1));
        for e in &history {
            assert!(e.l_gan_d.is_finite() && e.l_gan_g.is_finite());
            assert!(e.l_perceptual >= 0.0);
        }
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let det = frozen_detector();
        assert!(train_sepgan::<f64>(&[], &det, &quick_config(1)).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        assert!(SepGanConfig { batch_size: 0, ..SepGanConfig::default() }.validate().is_err());
        assert!(SepGanConfig { lr_d: 0.0, ..SepGanConfig::default() }.validate().is_err());
        assert!(SepGanConfig { lr_g: -1.0, ..SepGanConfig::default() }.validate().is_err());
        assert!(SepGanConfig { lambda_p: f64::NAN, ..SepGanConfig::default() }.validate().is_err());
        assert!(SepGanConfig::default().validate().is_ok());
    }

    #[test]
    fn loss_csv_has_header_and_rows() {
        let history = vec![
            EpochLoss { epoch: 0, l_gan_d: 1.5, l_gan_g: 0.25, l_perceptual: 0.125 },
            EpochLoss { epoch: 1, l_gan_d: 1.0, l_gan_g: 0.5, l_perceptual: 0.0625 },
        ];
        let dir = std::env::temp_dir().join("sepgan_csv_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("loss.csv");
        write_loss_csv(&history, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "epoch,l_gan_d,l_gan_g,l_perceptual");
        assert_eq!(lines[1], "0,1.5,0.25,0.125");
        assert_eq!(lines[2], "1,1,0.5,0.0625");
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn merge_and_split_roundtrip() {
        let gen = Generator::<f64>::init(&mut seeded(1));
        let disc = Discriminator::<f64>::init(&mut seeded(2));
        let merged = merge_params(&gen, &disc);
        assert_eq!(merged.len(), gen.params().len() + disc.params().len());
        let (g2, d2) = split_params(&merged).unwrap();
        assert_eq!(g2.params().checksum(), gen.params().checksum());
        assert_eq!(d2.params().checksum(), disc.params().checksum());
        let mut alien = merged.clone();
        alien.insert("X/stray", Tensor::zeros(&[1]));
        assert!(split_params(&alien).is_err());
    }

    #[test]
    fn discriminator_step_leaves_generator_gradient_free() {
        let dataset = tiny_dataset(2, 16);
        let gen = Generator::<f64>::init(&mut seeded(3));
        let disc = Discriminator::<f64>::init(&mut seeded(4));
        let (images, masks) = stack_batch(&dataset, &[0, 1]).unwrap();
        let mut g = Graph::new();
        let bd = disc.params().bind(&mut g);
        let bg = gen.params().bind_frozen(&mut g);
        let img = g.input(images);
        let gt = g.input(masks);
        let prob = gen.forward(&mut g, &bg, img).unwrap();
        let fake_mask = g.st_binarize(prob);
        let fake_crop = g.mask_mul(img, fake_mask).unwrap();
        let real_crop = g.mask_mul(img, gt).unwrap();
        let real_out = disc.forward(&mut g, &bd, real_crop).unwrap();
        let fake_out = disc.forward(&mut g, &bd, fake_crop).unwrap();
        let loss = gan_loss_d_graph(&mut g, real_out.score, fake_out.score).unwrap();
        let grads = g.backward(loss).unwrap();
        for &v in bg.vars() {
            assert!(grads.get(v).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
        }
        let touched = bd.vars().iter().any(|&v| {
            grads.get(v).is_some_and(|t| t.data().iter().any(|&x| x != 0.0))
        });
        assert!(touched);
    }

    #[test]
    fn generator_step_leaves_discriminator_gradient_free() {
        let dataset = tiny_dataset(2, 16);
        let gen = Generator::<f64>::init(&mut seeded(5));
        let disc = Discriminator::<f64>::init(&mut seeded(6));
        let (images, masks) = stack_batch(&dataset, &[0, 1]).unwrap();
        let mut g = Graph::new();
        let bg = gen.params().bind(&mut g);
        let bd = disc.params().bind_frozen(&mut g);
        let img = g.input(images);
        let gt = g.input(masks);
        let prob = gen.forward(&mut g, &bg, img).unwrap();
        let fake_mask = g.st_binarize(prob);
        let fake_crop = g.mask_mul(img, fake_mask).unwrap();
        let real_crop = g.mask_mul(img, gt).unwrap();
        let fake_out = disc.forward(&mut g, &bd, fake_crop).unwrap();
        let real_out = disc.forward(&mut g, &bd, real_crop).unwrap();
        let adv = gan_loss_g_graph(&mut g, fake_out.score).unwrap();
        let perc = perceptual_loss_graph(&mut g, &fake_out.features, &real_out.features).unwrap();
        let weighted = g.affine(perc, 10.0, 0.0);
        let total = g.add(adv, weighted).unwrap();
        let grads = g.backward(total).unwrap();
        for &v in bd.vars() {
            assert!(grads.get(v).is_none_or(|t| t.data().iter().all(|&x| x == 0.0)));
        }
        let touched = bg.vars().iter().any(|&v| {
            grads.get(v).is_some_and(|t| t.data().iter().any(|&x| x != 0.0))
        });
        assert!(touched);
    }

    #[test]
    fn fake_crop_background_is_exactly_zero() {
        let dataset = tiny_dataset(1, 16);
        let gen = Generator::<f64>::init(&mut seeded(7));
        let (images, _) = stack_batch(&dataset, &[0]).unwrap();
        let mut g = Graph::new();
        let bg = gen.params().bind(&mut g);
        let img = g.input(images);
        let prob = gen.forward(&mut g, &bg, img).unwrap();
        let fake_mask = g.st_binarize(prob);
        let fake_crop = g.mask_mul(img, fake_mask).unwrap();
        let mask_vals = g.value(fake_mask).data().to_vec();
        let crop = g.value(fake_crop);
        let (h, w) = (16, 16);
        for (i, &m) in mask_vals.iter().enumerate() {
            assert!(m == 0.0 || m == 1.0);
            if m == 0.0 {
                for c in 0..3 {
                    assert_eq!(crop.data()[c * h * w + i], 0.0);
                }
            }
        }
    }
}
