//! Run entry points: two-phase training, evaluation, dataset generation,
//! and standalone augmentation.
//!
//! Randomness discipline: each consumer gets its own substream derived from
//! the run seed and a fixed stream id, so adding draws to one consumer never
//! shifts another. Per-batch augmentation streams are derived per epoch and
//! chunk, which makes an augmentation arm with `batch_prob = 0` behave
//! identically to no augmentation at all.

use super::config::{AugmentSettings, DatasetSpec, PipelineConfig, Stage};
use super::report::{EvalBlock, RunReport};
use super::PipelineError;
use crate::detkit::{
    detect_image, detection_loss, gen_prior_boxes, match_anchors, BBox, DetOut, Detection,
    Detector, DetectorConfig, EvalBox, EvalResult, MatchResult, PriorBox, PriorLayout,
};
use crate::detkit::eval_map;
use crate::imageio::{
    list_dataset_stems, make_dataset, write_dataset, write_dataset_named, ClassTable, DatasetKind,
    SceneConfig,
};
use crate::maskaug::{baseline_augment, enhance_batch_logged, AugmentPolicy, BatchLog};
use crate::numkit::{load_checkpoint, save_checkpoint};
use crate::rng::{derive_seed, index, substream, Prng};
use crate::sepgan::{
    merge_params, predict_mask, split_params, train_sepgan, write_loss_csv, Generator,
    SepGanConfig,
};
use crate::{Graph, PairedSample, Scalar, Tensor};
use std::fmt::Write as _;
use std::path::Path;

pub const DETECTOR_PHASE1_CKPT: &str = "detector_phase1.ckpt";
pub const DETECTOR_PHASE2_CKPT: &str = "detector_phase2.ckpt";
pub const SEPGAN_CKPT: &str = "sepgan.ckpt";
pub const SEPGAN_LOSS_CSV: &str = "sepgan_loss.csv";
pub const PROVENANCE_CSV: &str = "provenance.csv";

/// Stream ids partitioning the run seed; see the module doc.
const STREAM_TRAIN_DATA: u64 = 1;
const STREAM_TEST_DATA: u64 = 2;
const STREAM_DET_INIT: u64 = 10;
const STREAM_GAN: u64 = 30;
const PHASE1_SHUFFLE: u64 = 20_000;
const PHASE1_AUG: u64 = 25_000;
const PHASE2_SHUFFLE: u64 = 40_000;
const PHASE2_AUG: u64 = 45_000;
const AUGMENT_CHUNKS: u64 = 70_000;

/// Which end of the dataset a command operates on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

fn scene_config(config: &PipelineConfig) -> Result<SceneConfig, PipelineError> {
    match &config.dataset {
        DatasetSpec::Synthetic { class_count, min_objects, max_objects, .. } => Ok(SceneConfig {
            image_size: config.input_size,
            min_objects: *min_objects,
            max_objects: *max_objects,
            class_count: *class_count,
            ..SceneConfig::default()
        }),
        DatasetSpec::Disk { .. } => Err(PipelineError::Validation(
            "this command needs a synthetic dataset".into(),
        )),
    }
}

/// Class table for the configured dataset. Synthetic classes are named by
/// the shape they render as when that is unambiguous.
pub fn load_classes(config: &PipelineConfig) -> Result<ClassTable, PipelineError> {
    match &config.dataset {
        DatasetSpec::Synthetic { class_count, .. } => {
            let shapes = SceneConfig::default().shapes;
            let names: Vec<String> = (0..*class_count)
                .map(|i| {
                    if *class_count <= shapes.len() {
                        shapes[i].name().to_string()
                    } else {
                        format!("class{i}")
                    }
                })
                .collect();
            Ok(ClassTable::new(names)?)
        }
        DatasetSpec::Disk { roots, test_root } => {
            let first = roots.first().ok_or_else(|| {
                PipelineError::Validation("disk datasets need at least one root".into())
            })?;
            let table = ClassTable::load(&first.join("classes.txt"))?;
            for root in roots.iter().skip(1).chain(std::iter::once(test_root)) {
                let other = ClassTable::load(&root.join("classes.txt"))?;
                if other.to_text() != table.to_text() {
                    return Err(PipelineError::Validation(format!(
                        "class table under {} disagrees with {}",
                        root.display(),
                        first.display()
                    )));
                }
            }
            Ok(table)
        }
    }
}

/// Loads one split of the configured dataset into memory.
pub fn load_split(config: &PipelineConfig, split: Split) -> Result<Vec<PairedSample>, PipelineError> {
    match &config.dataset {
        DatasetSpec::Synthetic { train_count, test_count, seed, .. } => {
            let scene = scene_config(config)?;
            let (count, stream) = match split {
                Split::Train => (*train_count, STREAM_TRAIN_DATA),
                Split::Test => (*test_count, STREAM_TEST_DATA),
            };
            let kind = DatasetKind::Synthetic {
                config: scene,
                count,
                seed: derive_seed(*seed, stream),
            };
            Ok(make_dataset(Path::new("."), &kind)?)
        }
        DatasetSpec::Disk { roots, test_root } => {
            let mut samples = Vec::new();
            let dirs: Vec<&Path> = match split {
                Split::Train => roots.iter().map(|p| p.as_path()).collect(),
                Split::Test => vec![test_root.as_path()],
            };
            for dir in dirs {
                samples.extend(make_dataset(dir, &DatasetKind::VocPairs)?);
            }
            Ok(samples)
        }
    }
}

fn detector_config(config: &PipelineConfig, class_count: usize) -> DetectorConfig {
    DetectorConfig {
        aspect_ratios: config.aspect_ratios.clone(),
        ..DetectorConfig::new(config.input_size, class_count)
    }
}

fn shuffled_indices(n: usize, rng: &mut Prng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, index(rng, i + 1));
    }
    order
}

/// Ground-truth boxes normalized to the unit square.
fn gt_pairs(sample: &PairedSample) -> Vec<(BBox, usize)> {
    let w = sample.image().width() as f64;
    let h = sample.image().height() as f64;
    sample
        .boxes()
        .iter()
        .map(|b| (BBox::new(b.xmin / w, b.ymin / h, b.xmax / w, b.ymax / h), b.class_id))
        .collect()
}

fn gt_eval_boxes(sample: &PairedSample) -> Vec<EvalBox> {
    let w = sample.image().width() as f64;
    let h = sample.image().height() as f64;
    sample
        .boxes()
        .iter()
        .map(|b| EvalBox {
            bbox: BBox::new(b.xmin / w, b.ymin / h, b.xmax / w, b.ymax / h),
            class_id: b.class_id,
            difficult: b.difficult,
        })
        .collect()
}

/// How a training batch is transformed before the forward pass.
enum BatchAug<'a> {
    /// Flip/crop/brightness baseline; phase 1.
    Baseline,
    /// No transformation at all; the plain-continuation control arm.
    Plain,
    /// Object perturbations under the mask-aware policy; phase 2.
    Enhanced(&'a AugmentSettings),
}

fn chunk_policy(settings: &AugmentSettings, chunk_len: usize) -> AugmentPolicy {
    AugmentPolicy {
        batch_prob: settings.batch_prob,
        batch_size: chunk_len,
        n_range: (settings.n_range.0.min(chunk_len), settings.n_range.1.min(chunk_len)),
        mode_weights: settings.mode_weights,
        salt_density: settings.salt_density,
        contrast_alpha_range: settings.contrast_alpha_range,
        rng_seed: 0,
    }
}

/// Trains `detector` in place over `schedule`, recording one mean loss per
/// epoch into `report` under `phase`.
fn train_detector(
    detector: &mut Detector<Scalar>,
    dataset: &[PairedSample],
    schedule: &[Stage],
    batch_size: usize,
    seed: u64,
    shuffle_stream: u64,
    aug_stream: u64,
    aug: &BatchAug,
    phase: &str,
    report: &mut RunReport,
) -> Result<(), PipelineError> {
    if dataset.is_empty() {
        return Err(PipelineError::Validation("training dataset is empty".into()));
    }
    let specs = detector.config().layer_specs()?;
    let priors = gen_prior_boxes(&specs)?;
    let layout = PriorLayout::new(&specs);
    let total = PipelineConfig::total_epochs(schedule);
    for epoch in 0..total {
        let lr = PipelineConfig::lr_at(schedule, epoch).ok_or_else(|| {
            PipelineError::Validation(format!("no learning rate covers epoch {epoch}"))
        })?;
        let order = shuffled_indices(dataset.len(), &mut substream(seed, shuffle_stream + epoch as u64));
        let aug_epoch_seed = derive_seed(seed, aug_stream + epoch as u64);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (chunk_idx, chunk) in order.chunks(batch_size).enumerate() {
            let mut rng = substream(aug_epoch_seed, chunk_idx as u64);
            let batch: Vec<PairedSample> = match aug {
                BatchAug::Baseline => {
                    chunk.iter().map(|&i| baseline_augment(&dataset[i], &mut rng)).collect()
                }
                BatchAug::Plain => chunk.iter().map(|&i| dataset[i].clone()).collect(),
                BatchAug::Enhanced(settings) => {
                    let plain: Vec<PairedSample> =
                        chunk.iter().map(|&i| dataset[i].clone()).collect();
                    let policy = chunk_policy(settings, plain.len());
                    let (enhanced, _log) = enhance_batch_logged(&plain, &policy, &mut rng)?;
                    enhanced
                }
            };
            let loss = detector_step(detector, &batch, &priors, &layout, lr)?;
            if !loss.is_finite() {
                return Err(PipelineError::Numeric(format!(
                    "non-finite detector loss in {phase} at epoch {epoch}"
                )));
            }
            loss_sum += loss;
            batches += 1;
        }
        report.record(phase, epoch, "det_loss", loss_sum / batches.max(1) as f64);
    }
    Ok(())
}

/// One SGD step on a batch; returns the loss value.
fn detector_step(
    detector: &mut Detector<Scalar>,
    batch: &[PairedSample],
    priors: &[PriorBox],
    layout: &PriorLayout,
    lr: f64,
) -> Result<f64, PipelineError> {
    let tensors: Vec<Tensor> = batch.iter().map(|s| s.image().to_tensor()).collect();
    let images = Tensor::concat0(&tensors)?;
    let gts: Vec<Vec<(BBox, usize)>> = batch.iter().map(gt_pairs).collect();
    let matches: Vec<MatchResult> = gts
        .iter()
        .map(|list| {
            let boxes: Vec<BBox> = list.iter().map(|(b, _)| *b).collect();
            match_anchors(&boxes, priors, 0.5)
        })
        .collect::<Result<_, _>>()?;
    let mut g = Graph::new();
    let bound = detector.params().bind(&mut g);
    let input = g.input(images);
    let out: DetOut = detector.forward(&mut g, &bound, input)?;
    let (loss, _stats) = detection_loss(&mut g, out.cls, out.loc, &gts, &matches, priors, layout, 3)?;
    let value = g.value(loss).to_f64_vec()[0];
    if value.is_finite() {
        let grads = g.backward(loss)?;
        detector.params_mut().apply_sgd(&bound, &grads, lr)?;
    }
    Ok(value)
}

fn ensure_out_dir(dir: &Path) -> Result<(), PipelineError> {
    std::fs::create_dir_all(dir).map_err(|e| PipelineError::Io(format!("{}: {e}", dir.display())))
}

fn save_params(params: &crate::ParamSet, path: &Path) -> Result<(), PipelineError> {
    save_checkpoint(params, path)?;
    Ok(())
}

/// Phase 1: detector pre-training under baseline augmentation, then
/// separation-model training against the frozen detector. Writes both
/// checkpoints, the separation loss history, and a report.
pub fn run_phase1(config: &PipelineConfig) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let classes = load_classes(config)?;
    let train = load_split(config, Split::Train)?;
    if train.is_empty() {
        return Err(PipelineError::Validation("training dataset is empty".into()));
    }
    let mut report = RunReport::new("train-phase1", config.seed, config.echo());
    let mut detector = Detector::init(
        detector_config(config, classes.len()),
        &mut substream(config.seed, STREAM_DET_INIT),
    )?;
    train_detector(
        &mut detector,
        &train,
        &config.phase1_schedule,
        config.batch_size,
        config.seed,
        PHASE1_SHUFFLE,
        PHASE1_AUG,
        &BatchAug::Baseline,
        "phase1",
        &mut report,
    )?;
    let gan_config = SepGanConfig {
        epochs: config.gan_epochs,
        batch_size: config.batch_size,
        lr_d: config.gan_lr,
        lr_g: config.gan_lr,
        lambda_p: config.lambda_p,
        seed: derive_seed(config.seed, STREAM_GAN),
    };
    let (generator, discriminator, history) = train_sepgan(&train, &detector, &gan_config)?;
    for e in &history {
        report.record("gan", e.epoch, "l_gan_d", e.l_gan_d);
        report.record("gan", e.epoch, "l_gan_g", e.l_gan_g);
        report.record("gan", e.epoch, "l_perceptual", e.l_perceptual);
    }
    ensure_out_dir(&config.out_dir)?;
    save_params(detector.params(), &config.out_dir.join(DETECTOR_PHASE1_CKPT))?;
    save_params(
        &merge_params(&generator, &discriminator),
        &config.out_dir.join(SEPGAN_CKPT),
    )?;
    write_loss_csv(&history, &config.out_dir.join(SEPGAN_LOSS_CSV))
        .map_err(|e| PipelineError::Io(e.to_string()))?;
    report.write(&config.out_dir, "report_phase1")?;
    Ok(report)
}

/// Swaps ground-truth masks for binarized generator predictions.
fn with_generated_masks(
    dataset: &[PairedSample],
    generator: &Generator<Scalar>,
) -> Result<Vec<PairedSample>, PipelineError> {
    dataset
        .iter()
        .map(|sample| {
            let mask = predict_mask(generator, sample.image())?;
            Ok(PairedSample::new_unchecked(
                sample.image().clone(),
                mask,
                sample.boxes().to_vec(),
            )?)
        })
        .collect()
}

/// Phase 2: continues detector training from the phase-1 checkpoint with
/// mask-aware batch enhancement; separation-model parameters stay frozen.
pub fn run_phase2(
    config: &PipelineConfig,
    detector_ckpt: &Path,
    sepgan_ckpt: &Path,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let classes = load_classes(config)?;
    let train = load_split(config, Split::Train)?;
    let mut detector = Detector::from_params(
        detector_config(config, classes.len()),
        load_checkpoint(detector_ckpt)?,
    )?;
    let gan_params = load_checkpoint::<Scalar>(sepgan_ckpt)?;
    let gan_checksum = gan_params.checksum();
    let (generator, discriminator) = split_params(&gan_params)?;
    let dataset = if config.augment.use_gt_masks {
        train
    } else {
        with_generated_masks(&train, &generator)?
    };
    let mut report = RunReport::new("train-phase2", config.seed, config.echo());
    train_detector(
        &mut detector,
        &dataset,
        &config.phase2_schedule,
        config.batch_size,
        config.seed,
        PHASE2_SHUFFLE,
        PHASE2_AUG,
        &BatchAug::Enhanced(&config.augment),
        "phase2",
        &mut report,
    )?;
    assert_eq!(
        merge_params(&generator, &discriminator).checksum(),
        gan_checksum,
        "separation-model parameters changed during phase 2"
    );
    ensure_out_dir(&config.out_dir)?;
    save_params(detector.params(), &config.out_dir.join(DETECTOR_PHASE2_CKPT))?;
    report.write(&config.out_dir, "report_phase2")?;
    Ok(report)
}

/// Phase-2 control arm: identical continuation without any augmentation.
/// Exists so the enhancement effect can be measured against a baseline that
/// shares every other byte of the procedure.
pub fn run_phase2_control(
    config: &PipelineConfig,
    detector_ckpt: &Path,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let classes = load_classes(config)?;
    let train = load_split(config, Split::Train)?;
    let mut detector = Detector::from_params(
        detector_config(config, classes.len()),
        load_checkpoint(detector_ckpt)?,
    )?;
    let mut report = RunReport::new("train-phase2-control", config.seed, config.echo());
    train_detector(
        &mut detector,
        &train,
        &config.phase2_schedule,
        config.batch_size,
        config.seed,
        PHASE2_SHUFFLE,
        PHASE2_AUG,
        &BatchAug::Plain,
        "phase2",
        &mut report,
    )?;
    ensure_out_dir(&config.out_dir)?;
    save_params(detector.params(), &config.out_dir.join(DETECTOR_PHASE2_CKPT))?;
    report.write(&config.out_dir, "report_phase2")?;
    Ok(report)
}

/// Scores detections that were produced elsewhere against a split's ground
/// truth. [`run_eval`] funnels through this; tests can inject oracle
/// detections to pin the metric.
pub fn eval_from_detections(
    dets_per_image: &[Vec<Detection>],
    samples: &[PairedSample],
    class_count: usize,
) -> Result<EvalResult, PipelineError> {
    let gts: Vec<Vec<EvalBox>> = samples.iter().map(gt_eval_boxes).collect();
    Ok(eval_map(dets_per_image, &gts, 0.5, class_count)?)
}

/// Confidence floor for candidate detections at evaluation time.
const EVAL_CONF_THRESHOLD: f64 = 0.01;
const EVAL_NMS_THRESHOLD: f64 = 0.45;
const EVAL_TOP_K: usize = 100;

/// Evaluates a detector checkpoint on one split and writes the AP table.
pub fn run_eval(
    config: &PipelineConfig,
    detector_ckpt: &Path,
    split: Split,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let classes = load_classes(config)?;
    let samples = load_split(config, split)?;
    if samples.is_empty() {
        return Err(PipelineError::Validation("evaluation split is empty".into()));
    }
    let detector = Detector::from_params(
        detector_config(config, classes.len()),
        load_checkpoint(detector_ckpt)?,
    )?;
    let priors = gen_prior_boxes(&detector.config().layer_specs()?)?;
    let dets: Vec<Vec<Detection>> = samples
        .iter()
        .map(|s| {
            detect_image(
                &detector,
                s.image(),
                &priors,
                EVAL_CONF_THRESHOLD,
                EVAL_NMS_THRESHOLD,
                EVAL_TOP_K,
            )
        })
        .collect::<Result<_, _>>()?;
    let result = eval_from_detections(&dets, &samples, classes.len())?;
    let mut report = RunReport::new("eval", config.seed, config.echo());
    let names: Vec<String> = (0..classes.len())
        .map(|i| classes.name_of(i).unwrap_or("?").to_string())
        .collect();
    report.eval = Some(EvalBlock { result, class_names: names });
    ensure_out_dir(&config.out_dir)?;
    report.write(&config.out_dir, "report_eval")?;
    Ok(report)
}

/// Writes `count` synthetic scenes (default: the configured training count)
/// to `out` in the on-disk dataset layout. The scenes are exactly the ones
/// a training run with this config would see.
pub fn run_generate(
    config: &PipelineConfig,
    count: Option<usize>,
    out: &Path,
) -> Result<usize, PipelineError> {
    config.validate()?;
    let scene = scene_config(config)?;
    let classes = load_classes(config)?;
    let DatasetSpec::Synthetic { train_count, seed, .. } = &config.dataset else {
        unreachable!("scene_config already rejected non-synthetic specs");
    };
    let n = count.unwrap_or(*train_count);
    let kind = DatasetKind::Synthetic {
        config: scene,
        count: n,
        seed: derive_seed(*seed, STREAM_TRAIN_DATA),
    };
    let samples: Vec<PairedSample> = make_dataset(Path::new("."), &kind)?;
    write_dataset(out, &samples, &classes)?;
    Ok(n)
}

/// Applies the batch-enhancement policy to a dataset on disk, writing the
/// perturbed copy plus a provenance sidecar. Stems are preserved; with
/// `batch_prob = 0` the output files are byte-identical to the input.
pub fn run_augment(
    config: &PipelineConfig,
    in_dir: &Path,
    out_dir: &Path,
) -> Result<RunReport, PipelineError> {
    config.validate()?;
    let samples: Vec<PairedSample> = make_dataset(in_dir, &DatasetKind::VocPairs)?;
    let stems = list_dataset_stems(in_dir)?;
    if samples.len() != stems.len() {
        return Err(PipelineError::Validation(format!(
            "{} samples but {} image stems under {}",
            samples.len(),
            stems.len(),
            in_dir.display()
        )));
    }
    let classes = ClassTable::load(&in_dir.join("classes.txt"))?;
    let chunk_seed = derive_seed(config.seed, AUGMENT_CHUNKS);
    let mut out_samples = Vec::with_capacity(samples.len());
    let mut logs: Vec<(usize, BatchLog)> = Vec::new();
    for (chunk_idx, chunk) in samples.chunks(config.batch_size).enumerate() {
        let mut rng = substream(chunk_seed, chunk_idx as u64);
        let policy = chunk_policy(&config.augment, chunk.len());
        let (enhanced, log) = enhance_batch_logged(chunk, &policy, &mut rng)?;
        out_samples.extend(enhanced);
        logs.push((chunk_idx, log));
    }
    write_dataset_named(out_dir, &out_samples, &classes, &stems)?;
    let mut provenance = String::from("stem,chunk,mode\n");
    for (chunk_idx, log) in &logs {
        let base = chunk_idx * config.batch_size;
        let chunk_len = samples[base..].len().min(config.batch_size);
        for offset in 0..chunk_len {
            let mode = log
                .modes
                .iter()
                .find(|(i, _)| *i == offset)
                .map_or("none", |(_, m)| m.name());
            let _ = writeln!(provenance, "{},{},{}", stems[base + offset], chunk_idx, mode);
        }
    }
    let sidecar = out_dir.join(PROVENANCE_CSV);
    std::fs::write(&sidecar, provenance)
        .map_err(|e| PipelineError::Io(format!("{}: {e}", sidecar.display())))?;
    let mut report = RunReport::new("augment", config.seed, config.echo());
    let applied = logs.iter().filter(|(_, l)| l.applied).count();
    report.record("augment", 0, "chunks_applied", applied as f64);
    report.record("augment", 0, "samples", samples.len() as f64);
    Ok(report)
}
