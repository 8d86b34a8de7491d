//! Generator and discriminator networks for the separation model.

use super::SepError;
use crate::imageio::{BinaryMask, Image};
use crate::numkit::{conv_weight, deconv_weight, BoundParams, Graph, ParamSet, Tensor, Var};
use crate::rng::Prng;
use crate::scalar::Real;

const LEAKY_SLOPE: f64 = 0.1;
/// Fixed activation gains that keep signal variance near 1 across layers
/// under the fan-in-scaled uniform init: a 3x3 conv shrinks variance by 3
/// and the leaky unit by (1 + slope^2) / 2; a stride-2 4x4 deconvolution
/// shrinks it by 12, and a skip add doubles it again.
const STAGE_GAIN: f64 = 2.4373; // sqrt(6 / 1.01)
const SKIP_UP_GAIN: f64 = 3.4641; // sqrt(12)
const UP_GAIN: f64 = 4.8746; // sqrt(24 / 1.01)
/// Head bias initialization encoding the prior that foreground is rare.
/// The map starts mostly off, so training only has to turn on the sparse
/// shape regions instead of first suppressing the whole background.
const FOREGROUND_PRIOR: f64 = -1.0;
/// Encoder channel widths; the decoder mirrors them.
const GEN_CH: [usize; 3] = [8, 16, 32];
/// Down/up stages in the generator.
const GEN_DEPTH: usize = 3;
/// Discriminator stage widths; every stage exposes its post-activation
/// output as a feature map.
const DISC_CH: [usize; 3] = [8, 16, 32];
/// Number of exposed discriminator feature maps.
pub(crate) const FEATURE_LAYERS: usize = 3;

/// Encoder-decoder network producing a one-channel foreground probability
/// map at input resolution, values strictly inside (0,1).
#[derive(Clone, Debug)]
pub struct Generator<T> {
    params: ParamSet<T>,
}

impl<T: Real> Generator<T> {
    pub fn init(rng: &mut Prng) -> Self {
        let mut params = ParamSet::new();
        let conv = |params: &mut ParamSet<T>, name: &str, k: usize, c: usize, rng: &mut Prng| {
            params.insert(&format!("{name}.w"), conv_weight(k, c, 3, 3, rng));
            params.insert(&format!("{name}.b"), Tensor::zeros(&[k]));
        };
        conv(&mut params, "G/enc1", GEN_CH[0], 3, rng);
        conv(&mut params, "G/enc2", GEN_CH[1], GEN_CH[0], rng);
        conv(&mut params, "G/enc3", GEN_CH[2], GEN_CH[1], rng);
        conv(&mut params, "G/mid", GEN_CH[2], GEN_CH[2], rng);
        for (name, (c, k)) in [
            ("G/dec3", (GEN_CH[2], GEN_CH[1])),
            ("G/dec2", (GEN_CH[1], GEN_CH[0])),
            ("G/dec1", (GEN_CH[0], GEN_CH[0])),
        ] {
            params.insert(&format!("{name}.w"), deconv_weight(c, k, 4, 4, rng));
            params.insert(&format!("{name}.b"), Tensor::zeros(&[k]));
        }
        params.insert("G/head.w", conv_weight(1, GEN_CH[0], 3, 3, rng));
        params.insert("G/head_img.w", conv_weight(1, 3, 3, 3, rng));
        params.insert("G/head.b", Tensor::full(&[1], T::of(FOREGROUND_PRIOR)));
        Generator { params }
    }

    pub fn from_params(params: ParamSet<T>) -> Result<Self, SepError> {
        check_against_init(&params, &Generator::<T>::init(&mut crate::rng::seeded(0)).params)?;
        Ok(Generator { params })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Runs the encoder-decoder on `[N, 3, H, W]` input with `H` and `W`
    /// divisible by 8, returning a `[N, 1, H, W]` probability map.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        image: Var,
    ) -> Result<Var, SepError> {
        let logits = self.forward_logits(g, bound, image)?;
        Ok(g.sigmoid(logits))
    }

    /// Like [`Generator::forward`] but stops before the sigmoid. Training
    /// binarizes these logits at 0 (the same cut as probability 0.5), which
    /// keeps the straight-through gradient alive when the map saturates.
    pub fn forward_logits(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        image: Var,
    ) -> Result<Var, SepError> {
        let shape = g.value(image).shape().to_vec();
        let multiple = 1 << GEN_DEPTH;
        let divisible = shape.len() == 4
            && shape[1] == 3
            && shape[2] % multiple == 0
            && shape[2] > 0
            && shape[3] % multiple == 0
            && shape[3] > 0;
        if !divisible {
            return Err(SepError::Contract(format!(
                "generator input must be [N, 3, H, W] with H and W multiples of {multiple}, got {shape:?}"
            )));
        }
        let slope = T::of(LEAKY_SLOPE);
        let down = |g: &mut Graph<T>, x: Var, name: &str| -> Result<Var, SepError> {
            let y = g.conv2d(x, bound.var(&format!("{name}.w")), 2, 1)?;
            let y = g.affine(y, T::of(STAGE_GAIN), T::zero());
            let y = g.bias_add(y, bound.var(&format!("{name}.b")))?;
            Ok(g.leaky_relu(y, slope))
        };
        let up = |g: &mut Graph<T>, x: Var, skip: Option<Var>, name: &str| -> Result<Var, SepError> {
            let gain = if skip.is_some() { SKIP_UP_GAIN } else { UP_GAIN };
            let y = g.deconv2d(x, bound.var(&format!("{name}.w")), 2, 1)?;
            let y = g.affine(y, T::of(gain), T::zero());
            let y = g.bias_add(y, bound.var(&format!("{name}.b")))?;
            let y = match skip {
                Some(s) => g.add(y, s)?,
                None => y,
            };
            Ok(g.leaky_relu(y, slope))
        };
        let e1 = down(g, image, "G/enc1")?;
        let e2 = down(g, e1, "G/enc2")?;
        let e3 = down(g, e2, "G/enc3")?;
        let mid = {
            let y = g.conv2d(e3, bound.var("G/mid.w"), 1, 1)?;
            let y = g.affine(y, T::of(STAGE_GAIN), T::zero());
            let y = g.bias_add(y, bound.var("G/mid.b"))?;
            g.leaky_relu(y, slope)
        };
        let d3 = up(g, mid, Some(e2), "G/dec3")?;
        let d2 = up(g, d3, Some(e1), "G/dec2")?;
        let d1 = up(g, d2, None, "G/dec1")?;
        // The head reads the decoder features plus the raw image, so
        // pixel-level evidence reaches the mask without traversing the
        // full encoder-decoder path.
        let feat_logits = g.conv2d(d1, bound.var("G/head.w"), 1, 1)?;
        let img_logits = g.conv2d(image, bound.var("G/head_img.w"), 1, 1)?;
        let logits = g.add(feat_logits, img_logits)?;
        Ok(g.bias_add(logits, bound.var("G/head.b"))?)
    }
}

/// Discriminator output: one realness score per sample plus the exposed
/// intermediate feature maps in stage order.
#[derive(Clone, Debug)]
pub struct DiscOut {
    /// `[N]` scores in (0,1), one per sample.
    pub score: Var,
    /// Post-activation outputs of the first `FEATURE_LAYERS` stages.
    pub features: Vec<Var>,
}

/// Conv stack scoring mask-multiplied crops, exposing its early feature
/// maps for the perceptual loss. The head scores each spatial cell and
/// pools the cell logits before the sigmoid, so local fake evidence
/// (leaked background texture) and global evidence (no foreground at
/// all) both reach the verdict.
#[derive(Clone, Debug)]
pub struct Discriminator<T> {
    params: ParamSet<T>,
}

impl<T: Real> Discriminator<T> {
    pub fn init(rng: &mut Prng) -> Self {
        let mut params = ParamSet::new();
        let mut prev = 3;
        for (i, &ch) in DISC_CH.iter().enumerate() {
            params.insert(&format!("D/s{}.w", i + 1), conv_weight(ch, prev, 3, 3, rng));
            params.insert(&format!("D/s{}.b", i + 1), Tensor::zeros(&[ch]));
            prev = ch;
        }
        params.insert("D/head.w", conv_weight(1, prev, 3, 3, rng));
        params.insert("D/head.b", Tensor::zeros(&[1]));
        Discriminator { params }
    }

    pub fn from_params(params: ParamSet<T>) -> Result<Self, SepError> {
        check_against_init(&params, &Discriminator::<T>::init(&mut crate::rng::seeded(0)).params)?;
        Ok(Discriminator { params })
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<T> {
        &mut self.params
    }

    /// Scores a `[N, 3, H, W]` crop batch, returning per-sample scores.
    pub fn forward(
        &self,
        g: &mut Graph<T>,
        bound: &BoundParams,
        crop: Var,
    ) -> Result<DiscOut, SepError> {
        let shape = g.value(crop).shape().to_vec();
        if shape.len() != 4 || shape[1] != 3 {
            return Err(SepError::Contract(format!(
                "discriminator input must be [N, 3, H, W], got {shape:?}"
            )));
        }
        let slope = T::of(LEAKY_SLOPE);
        let mut x = crop;
        let mut features = Vec::with_capacity(FEATURE_LAYERS);
        for i in 1..=DISC_CH.len() {
            let y = g.conv2d(x, bound.var(&format!("D/s{i}.w")), 2, 1)?;
            let y = g.affine(y, T::of(STAGE_GAIN), T::zero());
            let y = g.bias_add(y, bound.var(&format!("D/s{i}.b")))?;
            x = g.leaky_relu(y, slope);
            if i <= FEATURE_LAYERS {
                features.push(x);
            }
        }
        let y = g.conv2d(x, bound.var("D/head.w"), 1, 1)?;
        let y = g.bias_add(y, bound.var("D/head.b"))?;
        let pooled = g.mean_spatial(y)?;
        let score = g.sigmoid(pooled);
        Ok(DiscOut { score, features })
    }
}

fn check_against_init<T: Real>(
    params: &ParamSet<T>,
    expected: &ParamSet<T>,
) -> Result<(), SepError> {
    for (name, tensor) in expected.iter() {
        let Some(loaded) = params.get(name) else {
            return Err(SepError::Config(format!("checkpoint misses parameter {name}")));
        };
        if loaded.shape() != tensor.shape() {
            return Err(SepError::Config(format!(
                "parameter {name} has shape {:?}, expected {:?}",
                loaded.shape(),
                tensor.shape()
            )));
        }
    }
    if params.len() != expected.len() {
        return Err(SepError::Config(format!(
            "checkpoint has {} parameters, expected {}",
            params.len(),
            expected.len()
        )));
    }
    Ok(())
}

/// Runs the generator on one image and thresholds the probability map at
/// 0.5 into a binary mask.
pub fn predict_mask<T: Real>(
    generator: &Generator<T>,
    image: &Image<T>,
) -> Result<BinaryMask, SepError> {
    let mut g = Graph::new();
    let bound = generator.params().bind_frozen(&mut g);
    let input = g.input(image.to_tensor());
    let prob = generator.forward(&mut g, &bound, input)?;
    let values = g
        .value(prob)
        .data()
        .iter()
        .map(|&v| u8::from(v >= T::half()))
        .collect();
    BinaryMask::new(image.width(), image.height(), values)
        .map_err(|e| SepError::Contract(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn flat_image(n: usize, size: usize, value: f64) -> Tensor<f64> {
        Tensor::full(&[n, 3, size, size], value)
    }

    #[test]
    fn generator_output_matches_input_resolution() {
        let gen = Generator::<f64>::init(&mut seeded(1));
        let mut g = Graph::new();
        let bound = gen.params().bind(&mut g);
        let input = g.input(flat_image(2, 16, 0.3));
        let out = gen.forward(&mut g, &bound, input).unwrap();
        assert_eq!(g.value(out).shape(), &[2, 1, 16, 16]);
        for &v in g.value(out).data() {
            assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn generator_rejects_indivisible_dimensions() {
        let gen = Generator::<f64>::init(&mut seeded(1));
        let mut g = Graph::new();
        let bound = gen.params().bind(&mut g);
        let input = g.input(Tensor::full(&[1, 3, 12, 16], 0.5));
        let err = gen.forward(&mut g, &bound, input).unwrap_err();
        assert!(err.to_string().contains("multiples of 8"), "{err}");
    }

    #[test]
    fn zero_generator_outputs_half_everywhere() {
        let mut gen = Generator::<f64>::init(&mut seeded(2));
        let names: Vec<String> = gen.params().iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let zeroed = Tensor::zeros(gen.params().get(&name).unwrap().shape());
            *gen.params_mut().get_mut(&name).unwrap() = zeroed;
        }
        let mut g = Graph::new();
        let bound = gen.params().bind(&mut g);
        let input = g.input(flat_image(1, 8, 0.7));
        let out = gen.forward(&mut g, &bound, input).unwrap();
        for &v in g.value(out).data() {
            assert_eq!(v, 0.5);
        }
    }

    #[test]
    fn generator_forward_is_deterministic() {
        let gen = Generator::<f64>::init(&mut seeded(3));
        let run = || {
            let mut g = Graph::new();
            let bound = gen.params().bind(&mut g);
            let input = g.input(flat_image(1, 16, 0.4));
            let out = gen.forward(&mut g, &bound, input).unwrap();
            g.value(out).to_f64_vec()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn discriminator_exposes_three_features_and_a_score() {
        let d = Discriminator::<f64>::init(&mut seeded(4));
        let mut g = Graph::new();
        let bound = d.params().bind(&mut g);
        let input = g.input(flat_image(2, 16, 0.6));
        let out = d.forward(&mut g, &bound, input).unwrap();
        assert_eq!(out.features.len(), 3);
        assert_eq!(g.value(out.score).shape(), &[2]);
        for &s in g.value(out.score).data() {
            assert!(s > 0.0 && s < 1.0);
        }
        assert_eq!(g.value(out.features[0]).shape(), &[2, 8, 8, 8]);
        assert_eq!(g.value(out.features[1]).shape(), &[2, 16, 4, 4]);
        assert_eq!(g.value(out.features[2]).shape(), &[2, 32, 2, 2]);
    }

    #[test]
    fn zero_discriminator_scores_half() {
        let mut d = Discriminator::<f64>::init(&mut seeded(5));
        let names: Vec<String> = d.params().iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let zeroed = Tensor::zeros(d.params().get(&name).unwrap().shape());
            *d.params_mut().get_mut(&name).unwrap() = zeroed;
        }
        let mut g = Graph::new();
        let bound = d.params().bind(&mut g);
        let input = g.input(flat_image(1, 16, 0.9));
        let out = d.forward(&mut g, &bound, input).unwrap();
        assert_eq!(g.value(out.score).data(), &[0.5]);
    }

    #[test]
    fn discriminator_separates_identical_from_different_crops() {
        let d = Discriminator::<f64>::init(&mut seeded(6));
        let score = |value: f64| {
            let mut g = Graph::new();
            let bound = d.params().bind(&mut g);
            let input = g.input(flat_image(1, 16, value));
            let out = d.forward(&mut g, &bound, input).unwrap();
            g.value(out.score).data()[0]
        };
        assert_eq!(score(0.25), score(0.25));
        assert_ne!(score(0.25), score(0.75));
    }

    #[test]
    fn discriminator_rejects_wrong_channel_count() {
        let d = Discriminator::<f64>::init(&mut seeded(7));
        let mut g = Graph::new();
        let bound = d.params().bind(&mut g);
        let input = g.input(Tensor::<f64>::full(&[1, 1, 16, 16], 0.5));
        assert!(d.forward(&mut g, &bound, input).is_err());
    }

    #[test]
    fn from_params_validates_names_and_shapes() {
        let gen = Generator::<f64>::init(&mut seeded(8));
        assert!(Generator::from_params(gen.params().clone()).is_ok());
        let mut broken = gen.params().clone();
        *broken.get_mut("G/head.b").unwrap() = Tensor::zeros(&[2]);
        assert!(Generator::from_params(broken).is_err());
        let d = Discriminator::<f64>::init(&mut seeded(9));
        assert!(Discriminator::from_params(d.params().clone()).is_ok());
        assert!(Discriminator::<f64>::from_params(ParamSet::new()).is_err());
    }

    #[test]
    fn predict_mask_is_binary_and_sized() {
        let gen = Generator::<f64>::init(&mut seeded(10));
        let image = Image::<f64>::fill(16, 16, 3, 0.5);
        let mask = predict_mask(&gen, &image).unwrap();
        assert_eq!((mask.width(), mask.height()), (16, 16));
        for &v in mask.values() {
            assert!(v <= 1);
        }
    }
}
