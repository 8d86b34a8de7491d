//! Toy multi-scale detector: a small conv pyramid whose top levels are
//! upsampled by deconvolution modules and fused into lower levels by
//! elementwise addition, with one prediction head per fused scale.

use super::boxes::{decode_offsets, LayerSpec, PriorBox};
use super::nms::{nms, Detection};
use super::DetError;
use crate::imageio::Image;
use crate::numkit::{conv_weight, deconv_weight, BoundParams, Graph, ParamSet, Tensor, Var};
use crate::rng::Prng;
use crate::scalar::Real;

const LEAKY_SLOPE: f64 = 0.1;
/// Fixed activation gains that keep signal variance near 1 across layers
/// under the fan-in-scaled uniform init: a 3x3 conv shrinks variance by 3
/// and the leaky unit by (1 + slope^2) / 2; a stride-2 4x4 deconvolution
/// shrinks it by 12, and the fusion add doubles it again.
const STAGE_GAIN: f64 = 2.4373; // sqrt(6 / 1.01)
const FUSE_GAIN: f64 = 3.4641; // sqrt(12)
/// Channel widths of the backbone stages.
const STEM_CH: usize = 8;
const PYRAMID_CH: usize = 16;

/// How a deconvolution module combines the upsampled high-level map with
/// the lower-level map. `Add` is the production choice; `Mul` exists to
/// demonstrate the fusion is wired through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionKind {
    Add,
    Mul,
}

/// Detector hyperparameters. The backbone halves resolution four times, so
/// `input_size` must be divisible by 16; heads sit at `input_size / 4`,
/// `/ 8`, and `/ 16` with scales spread linearly over (0.1, 0.9).
#[derive(Clone, Debug)]
pub struct DetectorConfig {
    pub input_size: usize,
    /// Object classes (logits get one extra background column).
    pub class_count: usize,
    pub fusion: FusionKind,
    /// Aspect ratios shared by every head scale.
    pub aspect_ratios: Vec<f64>,
}

impl DetectorConfig {
    pub fn new(input_size: usize, class_count: usize) -> Self {
        DetectorConfig {
            input_size,
            class_count,
            fusion: FusionKind::Add,
            aspect_ratios: vec![2.0],
        }
    }

    pub fn validate(&self) -> Result<(), DetError> {
        if self.input_size < 16 || self.input_size % 16 != 0 {
            return Err(DetError::Config(format!(
                "input size must be a positive multiple of 16, got {}",
                self.input_size
            )));
        }
        if self.class_count == 0 {
            return Err(DetError::Config("class count must be at least 1".into()));
        }
        Ok(())
    }

    /// Prior-box layers matching the three head resolutions.
    pub fn layer_specs(&self) -> Result<Vec<LayerSpec>, DetError> {
        self.validate()?;
        let resolutions = [self.input_size / 4, self.input_size / 8, self.input_size / 16];
        resolutions
            .iter()
            .enumerate()
            .map(|(i, &res)| {
                let scale = 0.1 + 0.8 * i as f64 / 2.0;
                LayerSpec::new(res, scale, self.aspect_ratios.clone())
            })
            .collect()
    }

    /// Anchors per head cell.
    pub fn anchors_per_cell(&self) -> usize {
        2 + 2 * self.aspect_ratios.len()
    }
}

/// Class and offset predictions for a batch, as graph nodes.
/// `cls` is `[batch * P, class_count + 1]`, `loc` is `[batch * P, 4]`.
#[derive(Clone, Copy, Debug)]
pub struct DetOut {
    pub cls: Var,
    pub loc: Var,
}

/// The detector: a config plus its parameter set.
#[derive(Clone, Debug)]
pub struct Detector<T> {
    config: DetectorConfig,
    params: ParamSet<T>,
}

impl<T: Real> Detector<T> {
    /// Initializes parameters with uniform fan-in scaling.
    pub fn init(config: DetectorConfig, rng: &mut Prng) -> Result<Self, DetError> {
        config.validate()?;
        let a = config.anchors_per_cell();
        let cls_ch = a * (config.class_count + 1);
        let loc_ch = a * 4;
        let mut params = ParamSet::new();
        let conv = |params: &mut ParamSet<T>, name: &str, k: usize, c: usize, size: usize, rng: &mut Prng| {
            params.insert(&format!("{name}.w"), conv_weight(k, c, size, size, rng));
            params.insert(&format!("{name}.b"), Tensor::zeros(&[k]));
        };
        conv(&mut params, "det/stem", STEM_CH, 3, 3, rng);
        conv(&mut params, "det/c1", PYRAMID_CH, STEM_CH, 3, rng);
        conv(&mut params, "det/c2", PYRAMID_CH, PYRAMID_CH, 3, rng);
        conv(&mut params, "det/c3", PYRAMID_CH, PYRAMID_CH, 3, rng);
        for dm in ["det/dm2", "det/dm1"] {
            params.insert(
                &format!("{dm}.w"),
                deconv_weight(PYRAMID_CH, PYRAMID_CH, 4, 4, rng),
            );
            params.insert(&format!("{dm}.b"), Tensor::zeros(&[PYRAMID_CH]));
        }
        for head in ["det/head1", "det/head2", "det/head3"] {
            conv(&mut params, &format!("{head}.cls"), cls_ch, PYRAMID_CH, 3, rng);
            conv(&mut params, &format!("{head}.loc"), loc_ch, PYRAMID_CH, 3, rng);
        }
        Ok(Detector { config, params })
    }

    /// Rebuilds a detector around previously trained parameters.
    pub fn from_params(config: DetectorConfig, params: ParamSet<T>) -> Result<Self, DetError> {
        config.validate()?;
        let expected = Detector::<T>::init(config.clone(), &mut crate::rng::seeded(0))?;
        for (name, tensor) in expected.params.iter() {
            let Some(loaded) = params.get(name) else {
                return Err(DetError::Config(format!("checkpoint misses parameter {name}")));
            };
            if loaded.shape() != tensor.shape() {
                return Err(DetError::Config(format!(
                    "parameter {name} has shape {:?}, expected {:?}",
                    loaded.shape(),
                    tensor.shape()
                )));
            }
        }
        if params.len() != expected.params.len() {
            return Err(DetError::Config(format!(
                "checkpoint has {} parameters, expected {}",
                params.len(),
                expected.params.len()
            )));
        }
        Ok(Detector { config, params })
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Runs the backbone, fusion modules, and prediction heads.
    ///
    /// `image` must be `[N, 3, S, S]` for the configured size `S`; `bound`
    /// must come from binding this detector's parameters into `g`.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        image: Var,
    ) -> Result<DetOut, DetError> {
        let s = self.config.input_size;
        let shape = g.value(image).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 || shape[2] != s || shape[3] != s {
            return Err(DetError::Contract(format!(
                "detector expects [N, 3, {s}, {s}] input, got {shape:?}"
            )));
        }
        let slope = T::of(LEAKY_SLOPE);
        let stage = |g: &mut Graph<T>, x: Var, name: &str| -> Result<Var, DetError> {
            let y = g.conv2d(x, bound.var(&format!("{name}.w")), 2, 1)?;
            let y = g.affine(y, T::of(STAGE_GAIN), T::zero());
            let y = g.bias_add(y, bound.var(&format!("{name}.b")))?;
            Ok(g.leaky_relu(y, slope))
        };
        let f0 = stage(g, image, "det/stem")?;
        let c1 = stage(g, f0, "det/c1")?;
        let c2 = stage(g, c1, "det/c2")?;
        let c3 = stage(g, c2, "det/c3")?;

        let fuse = |g: &mut Graph<T>, high: Var, low: Var, name: &str| -> Result<Var, DetError> {
            let up = g.deconv2d(high, bound.var(&format!("{name}.w")), 2, 1)?;
            let up = g.affine(up, T::of(FUSE_GAIN), T::zero());
            let up = g.bias_add(up, bound.var(&format!("{name}.b")))?;
            let merged = match self.config.fusion {
                FusionKind::Add => g.add(up, low)?,
                FusionKind::Mul => g.mul(up, low)?,
            };
            Ok(g.leaky_relu(merged, slope))
        };
        let p2 = fuse(g, c3, c2, "det/dm2")?;
        let p1 = fuse(g, p2, c1, "det/dm1")?;

        let cols_cls = self.config.class_count + 1;
        let head = |g: &mut Graph<T>, x: Var, name: &str, cols: usize| -> Result<Var, DetError> {
            let y = g.conv2d(x, bound.var(&format!("{name}.w")), 1, 1)?;
            let y = g.bias_add(y, bound.var(&format!("{name}.b")))?;
            Ok(g.anchor_matrix(y, cols)?)
        };
        let cls = [
            head(g, p1, "det/head1.cls", cols_cls)?,
            head(g, p2, "det/head2.cls", cols_cls)?,
            head(g, c3, "det/head3.cls", cols_cls)?,
        ];
        let loc = [
            head(g, p1, "det/head1.loc", 4)?,
            head(g, p2, "det/head2.loc", 4)?,
            head(g, c3, "det/head3.loc", 4)?,
        ];
        Ok(DetOut { cls: g.concat_rows(&cls)?, loc: g.concat_rows(&loc)? })
    }
}

/// Row-wise softmax of a `[P, K]` tensor, returned as plain values.
pub fn softmax_rows<T: Real>(t: &Tensor<T>) -> Vec<f64> {
    let shape = t.shape();
    assert_eq!(shape.len(), 2, "softmax_rows expects a rank-2 tensor");
    let (p, k) = (shape[0], shape[1]);
    let data = t.to_f64_vec();
    let mut out = Vec::with_capacity(p * k);
    for row in data.chunks(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|&x| (x - m).exp()).collect();
        let z: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|&e| e / z));
    }
    out
}

/// Full inference path for one image: forward, softmax, decode, filter by
/// confidence, then per-class NMS. Detections come back in normalized
/// coordinates clipped to the unit square, best first, at most `top_k`.
pub fn detect_image<T: Real>(
    detector: &Detector<T>,
    image: &Image<T>,
    priors: &[PriorBox],
    conf_threshold: f64,
    nms_threshold: f64,
    top_k: usize,
) -> Result<Vec<Detection>, DetError> {
    let mut g = Graph::new();
    let bound = detector.params().bind_frozen(&mut g);
    let input = g.input(image.to_tensor());
    let out = detector.forward(&mut g, &bound, input)?;
    let probs = softmax_rows(g.value(out.cls));
    let loc = g.value(out.loc).to_f64_vec();
    let cols = detector.config().class_count + 1;
    if priors.len() * cols != probs.len() {
        return Err(DetError::Contract(format!(
            "{} priors do not match {} score rows",
            priors.len(),
            probs.len() / cols
        )));
    }
    let mut candidates = Vec::new();
    for (p, prior) in priors.iter().enumerate() {
        let row = &probs[p * cols..(p + 1) * cols];
        let offs = [loc[p * 4], loc[p * 4 + 1], loc[p * 4 + 2], loc[p * 4 + 3]];
        for (c, &conf) in row.iter().enumerate().skip(1) {
            if conf >= conf_threshold {
                candidates.push(Detection {
                    bbox: decode_offsets(&offs, prior).clip_unit(),
                    class_id: c - 1,
                    confidence: conf,
                });
            }
        }
    }
    let mut kept = nms(&candidates, nms_threshold, true);
    kept.truncate(top_k);
    Ok(kept)
}
