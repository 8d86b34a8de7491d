use crate::scalar::Real;

use super::ops::{
    self, conv2d_grad_input, conv2d_grad_kernel, deconv2d_grad_input, deconv2d_grad_kernel,
};
use super::{NumError, Tensor};

/// Handle to a node in a [`Graph`]. Only meaningful for the graph that
/// created it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<T: Real> {
    Leaf { trainable: bool },
    Conv2d { input: Var, kernel: Var, stride: usize, pad: usize },
    Deconv2d { input: Var, kernel: Var, stride: usize, pad: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    BiasAdd { input: Var, bias: Var },
    Relu(Var),
    LeakyRelu { input: Var, slope: T },
    Sigmoid(Var),
    Affine { input: Var, scale: T },
    Log(Var),
    Sqrt(Var),
    Clamp { input: Var, lo: T, hi: T },
    Sum(Var),
    Mean(Var),
    MeanSpatial(Var),
    StBinarize(Var),
    MaskMul { image: Var, mask: Var },
    AnchorMatrix { input: Var, cols: usize },
    ConcatRows(Vec<Var>),
    SoftmaxCe { logits: Var, targets: Vec<usize>, weights: Vec<T> },
    SmoothL1 { pred: Var, target: Tensor<T>, weights: Vec<T> },
}

struct Node<T: Real> {
    op: Op<T>,
    value: Tensor<T>,
    needs_grad: bool,
}

/// Wengert-list compute graph: ops are evaluated eagerly as they are
/// recorded, and [`Graph::backward`] replays the list once in reverse
/// creation order.
pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
}

/// Gradient store handed back by [`Graph::backward`], keyed by [`Var`].
pub struct Gradients<T: Real> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of the loss with respect to `v`, if `v` participated or is a
    /// trainable leaf (non-participating trainable leaves hold zeros).
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }
}

fn accumulate<T: Real>(slot: &mut Option<Tensor<T>>, delta: Tensor<T>) {
    match slot {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(delta.data()) {
                *a += *b;
            }
        }
        None => *slot = Some(delta),
    }
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Graph::new()
    }
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Forward value of a node.
    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node { op, value, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    /// Constant leaf: takes no gradient and blocks propagation into it.
    pub fn input(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf { trainable: false }, value, false)
    }

    /// Trainable leaf: receives d(loss)/d(leaf) from [`Graph::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf { trainable: true }, value, true)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NumError> {
        let value = ops::conv2d(self.value(input), self.value(kernel), stride, pad)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(Op::Conv2d { input, kernel, stride, pad }, value, needs))
    }

    pub fn deconv2d(
        &mut self,
        input: Var,
        kernel: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, NumError> {
        let value = ops::deconv2d(self.value(input), self.value(kernel), stride, pad)?;
        let needs = self.needs(input) || self.needs(kernel);
        Ok(self.push(Op::Deconv2d { input, kernel, stride, pad }, value, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = ops::add(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Add(a, b), value, needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Sub(a, b), value, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        let value = ops::mul(self.value(a), self.value(b))?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(Op::Mul(a, b), value, needs))
    }

    /// Adds a per-channel bias `[C]` to a `[N,C,H,W]` activation.
    pub fn bias_add(&mut self, input: Var, bias: Var) -> Result<Var, NumError> {
        let ishape = self.value(input).shape().to_vec();
        let bshape = self.value(bias).shape();
        if ishape.len() != 4 || bshape != [ishape[1]] {
            return Err(NumError::shape(
                "bias_add",
                format!("bias [C] matching input {ishape:?}"),
                bshape,
            ));
        }
        let (spatial, c) = (ishape[2] * ishape[3], ishape[1]);
        let bdata = self.value(bias).data().to_vec();
        let mut value = self.value(input).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += bdata[(i / spatial) % c];
        }
        let needs = self.needs(input) || self.needs(bias);
        Ok(self.push(Op::BiasAdd { input, bias }, value, needs))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let value = ops::relu(self.value(input));
        let needs = self.needs(input);
        self.push(Op::Relu(input), value, needs)
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let value = ops::leaky_relu(self.value(input), slope);
        let needs = self.needs(input);
        self.push(Op::LeakyRelu { input, slope }, value, needs)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let value = ops::sigmoid(self.value(input));
        let needs = self.needs(input);
        self.push(Op::Sigmoid(input), value, needs)
    }

    /// `scale·x + shift`, pointwise.
    pub fn affine(&mut self, input: Var, scale: T, shift: T) -> Var {
        let value = self.value(input).map(|v| scale * v + shift);
        let needs = self.needs(input);
        self.push(Op::Affine { input, scale }, value, needs)
    }

    /// Natural log; callers are responsible for keeping inputs positive
    /// (clamp first).
    pub fn log(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.ln());
        let needs = self.needs(input);
        self.push(Op::Log(input), value, needs)
    }

    pub fn sqrt(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v.sqrt());
        let needs = self.needs(input);
        self.push(Op::Sqrt(input), value, needs)
    }

    pub fn clamp(&mut self, input: Var, lo: T, hi: T) -> Var {
        let value = self.value(input).map(|v| if v < lo { lo } else if v > hi { hi } else { v });
        let needs = self.needs(input);
        self.push(Op::Clamp { input, lo, hi }, value, needs)
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let value = Tensor::scalar(self.value(input).sum());
        let needs = self.needs(input);
        self.push(Op::Sum(input), value, needs)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let t = self.value(input);
        let value = Tensor::scalar(t.sum() / T::of(t.len() as f64));
        let needs = self.needs(input);
        self.push(Op::Mean(input), value, needs)
    }

    /// Mean over channel and spatial dims: `[N,C,H,W]` to `[N]`.
    pub fn mean_spatial(&mut self, input: Var) -> Result<Var, NumError> {
        let t = self.value(input);
        if t.rank() != 4 {
            return Err(NumError::shape("mean_spatial", "a rank-4 tensor", t.shape()));
        }
        let (n, per) = (t.shape()[0], t.len() / t.shape()[0]);
        let inv = T::one() / T::of(per as f64);
        let mut data = vec![T::zero(); n];
        for (i, v) in t.data().iter().enumerate() {
            data[i / per] += *v * inv;
        }
        let value = Tensor::new(vec![n], data)?;
        let needs = self.needs(input);
        Ok(self.push(Op::MeanSpatial(input), value, needs))
    }

    /// Hard threshold (`x ≥ 0.5` to 1, else 0) with a straight-through
    /// gradient: backward treats it as identity so updates reach the
    /// pre-threshold activations.
    pub fn st_binarize(&mut self, input: Var) -> Var {
        let value = self
            .value(input)
            .map(|v| if v >= T::half() { T::one() } else { T::zero() });
        let needs = self.needs(input);
        self.push(Op::StBinarize(input), value, needs)
    }

    /// Multiplies an image `[N,C,H,W]` by a one-channel mask `[N,1,H,W]`,
    /// broadcasting the mask across channels.
    pub fn mask_mul(&mut self, image: Var, mask: Var) -> Result<Var, NumError> {
        let ishape = self.value(image).shape().to_vec();
        let mshape = self.value(mask).shape().to_vec();
        let compatible = ishape.len() == 4
            && mshape.len() == 4
            && mshape[0] == ishape[0]
            && mshape[1] == 1
            && mshape[2] == ishape[2]
            && mshape[3] == ishape[3];
        if !compatible {
            return Err(NumError::shape(
                "mask_mul",
                format!("mask [N,1,H,W] matching image {ishape:?}"),
                &mshape,
            ));
        }
        let (c, spatial) = (ishape[1], ishape[2] * ishape[3]);
        let mdata = self.value(mask).data().to_vec();
        let mut value = self.value(image).clone();
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            let n = i / (c * spatial);
            *v = *v * mdata[n * spatial + i % spatial];
        }
        let needs = self.needs(image) || self.needs(mask);
        Ok(self.push(Op::MaskMul { image, mask }, value, needs))
    }

    /// Reshapes a head output `[N, A·K, H, W]` into a row matrix
    /// `[N·H·W·A, K]`, rows ordered image-major, then `y`, `x`, anchor.
    pub fn anchor_matrix(&mut self, input: Var, cols: usize) -> Result<Var, NumError> {
        let shape = self.value(input).shape().to_vec();
        if shape.len() != 4 || cols == 0 || shape[1] % cols != 0 {
            return Err(NumError::dim(
                "anchor_matrix",
                format!("cannot split {shape:?} into rows of {cols} columns"),
            ));
        }
        let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let a = ch / cols;
        let src = self.value(input).data();
        let mut data = vec![T::zero(); src.len()];
        let mut r = 0;
        for bi in 0..n {
            for y in 0..h {
                for x in 0..w {
                    for ai in 0..a {
                        for k in 0..cols {
                            let ch_idx = ai * cols + k;
                            data[r * cols + k] = src[((bi * ch + ch_idx) * h + y) * w + x];
                        }
                        r += 1;
                    }
                }
            }
        }
        let value = Tensor::new(vec![n * h * w * a, cols], data)?;
        let needs = self.needs(input);
        Ok(self.push(Op::AnchorMatrix { input, cols }, value, needs))
    }

    /// Stacks rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, inputs: &[Var]) -> Result<Var, NumError> {
        if inputs.is_empty() {
            return Err(NumError::contract("concat_rows", "needs at least one input"));
        }
        let cols = self.value(inputs[0]).shape().get(1).copied().unwrap_or(0);
        let mut rows = 0;
        for &v in inputs {
            let s = self.value(v).shape();
            if s.len() != 2 || s[1] != cols {
                return Err(NumError::shape("concat_rows", format!("[_, {cols}]"), s));
            }
            rows += s[0];
        }
        let mut data = Vec::with_capacity(rows * cols);
        for &v in inputs {
            data.extend_from_slice(self.value(v).data());
        }
        let value = Tensor::new(vec![rows, cols], data)?;
        let needs = inputs.iter().any(|&v| self.needs(v));
        Ok(self.push(Op::ConcatRows(inputs.to_vec()), value, needs))
    }

    /// Weighted softmax cross-entropy over the rows of `[P,K]` logits,
    /// reduced to a scalar: `Σ_i w_i · (logsumexp(l_i) − l_i[t_i])`.
    /// Rows with zero weight are skipped entirely.
    pub fn softmax_ce(
        &mut self,
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<T>,
    ) -> Result<Var, NumError> {
        let shape = self.value(logits).shape().to_vec();
        if shape.len() != 2 {
            return Err(NumError::shape("softmax_ce", "a rank-2 [P,K] tensor", &shape));
        }
        let (p, k) = (shape[0], shape[1]);
        if targets.len() != p || weights.len() != p {
            return Err(NumError::contract(
                "softmax_ce",
                format!("{p} rows need {p} targets and weights, got {} and {}", targets.len(), weights.len()),
            ));
        }
        if targets.iter().any(|&t| t >= k) {
            return Err(NumError::contract("softmax_ce", format!("target class out of range 0..{k}")));
        }
        let data = self.value(logits).data();
        let mut total = T::zero();
        for i in 0..p {
            if weights[i] == T::zero() {
                continue;
            }
            let row = &data[i * k..(i + 1) * k];
            total += weights[i] * (log_sum_exp(row) - row[targets[i]]);
        }
        let needs = self.needs(logits);
        Ok(self.push(Op::SoftmaxCe { logits, targets, weights }, Tensor::scalar(total), needs))
    }

    /// Weighted smooth-L1 over rows of `[P,D]` predictions against constant
    /// targets, reduced to a scalar.
    pub fn smooth_l1(
        &mut self,
        pred: Var,
        target: Tensor<T>,
        weights: Vec<T>,
    ) -> Result<Var, NumError> {
        let shape = self.value(pred).shape().to_vec();
        if shape.len() != 2 || target.shape() != shape.as_slice() {
            return Err(NumError::shape(
                "smooth_l1",
                format!("target matching prediction {shape:?}"),
                target.shape(),
            ));
        }
        if weights.len() != shape[0] {
            return Err(NumError::contract(
                "smooth_l1",
                format!("{} rows need {} weights, got {}", shape[0], shape[0], weights.len()),
            ));
        }
        let (p, d) = (shape[0], shape[1]);
        let pd = self.value(pred).data();
        let td = target.data();
        let mut total = T::zero();
        for i in 0..p {
            if weights[i] == T::zero() {
                continue;
            }
            let mut row = T::zero();
            for j in 0..d {
                row += smooth_l1_val(pd[i * d + j] - td[i * d + j]);
            }
            total += weights[i] * row;
        }
        let needs = self.needs(pred);
        Ok(self.push(Op::SmoothL1 { pred, target, weights }, Tensor::scalar(total), needs))
    }

    /// Reverse pass from a scalar loss. Every trainable leaf receives a
    /// gradient; leaves the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>, NumError> {
        if !self.value(loss).is_scalar() {
            return Err(NumError::contract(
                "backward",
                format!("loss must be scalar, got shape {:?}", self.value(loss).shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::ones(self.value(loss).shape()));

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                if matches!(self.nodes[i].op, Op::Leaf { trainable: true }) {
                    grads[i] = Some(g);
                }
                continue;
            }
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }

        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf { trainable: true }) && grads[i].is_none() {
                grads[i] = Some(Tensor::zeros(node.value.shape()));
            }
        }
        // Keep gradients only for leaves; interior nodes are implementation
        // detail and dropping them bounds the store's footprint.
        for (i, node) in self.nodes.iter().enumerate() {
            if !matches!(node.op, Op::Leaf { .. }) {
                grads[i] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) {
        let value = &self.nodes[i].value;
        match &self.nodes[i].op {
            Op::Leaf { .. } => {}
            Op::Conv2d { input, kernel, stride, pad } => {
                if self.needs(*input) {
                    let d = conv2d_grad_input(g, self.value(*kernel), *stride, *pad, self.value(*input).shape());
                    accumulate(&mut grads[input.0], d);
                }
                if self.needs(*kernel) {
                    let d = conv2d_grad_kernel(g, self.value(*input), *stride, *pad, self.value(*kernel).shape());
                    accumulate(&mut grads[kernel.0], d);
                }
            }
            Op::Deconv2d { input, kernel, stride, pad } => {
                if self.needs(*input) {
                    let d = deconv2d_grad_input(g, self.value(*kernel), *stride, *pad);
                    accumulate(&mut grads[input.0], d);
                }
                if self.needs(*kernel) {
                    let d = deconv2d_grad_kernel(g, self.value(*input), *stride, *pad, self.value(*kernel).shape());
                    accumulate(&mut grads[kernel.0], d);
                }
            }
            Op::Add(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.needs(*a) {
                    accumulate(&mut grads[a.0], g.clone());
                }
                if self.needs(*b) {
                    accumulate(&mut grads[b.0], g.map(|v| -v));
                }
            }
            Op::Mul(a, b) => {
                if self.needs(*a) {
                    let d = g.zip_map(self.value(*b), |x, y| x * y).expect("shapes matched at forward");
                    accumulate(&mut grads[a.0], d);
                }
                if self.needs(*b) {
                    let d = g.zip_map(self.value(*a), |x, y| x * y).expect("shapes matched at forward");
                    accumulate(&mut grads[b.0], d);
                }
            }
            Op::BiasAdd { input, bias } => {
                if self.needs(*input) {
                    accumulate(&mut grads[input.0], g.clone());
                }
                if self.needs(*bias) {
                    let shape = self.value(*input).shape();
                    let (c, spatial) = (shape[1], shape[2] * shape[3]);
                    let mut d = vec![T::zero(); c];
                    for (idx, v) in g.data().iter().enumerate() {
                        d[(idx / spatial) % c] += *v;
                    }
                    accumulate(&mut grads[bias.0], Tensor::new(vec![c], d).expect("bias shape"));
                }
            }
            Op::Relu(input) => {
                if self.needs(*input) {
                    let d = g
                        .zip_map(self.value(*input), |gv, x| if x > T::zero() { gv } else { T::zero() })
                        .expect("shapes matched at forward");
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::LeakyRelu { input, slope } => {
                if self.needs(*input) {
                    let s = *slope;
                    let d = g
                        .zip_map(self.value(*input), |gv, x| if x > T::zero() { gv } else { s * gv })
                        .expect("shapes matched at forward");
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::Sigmoid(input) => {
                if self.needs(*input) {
                    let d = g
                        .zip_map(value, |gv, y| gv * y * (T::one() - y))
                        .expect("shapes matched at forward");
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::Affine { input, scale } => {
                if self.needs(*input) {
                    let s = *scale;
                    accumulate(&mut grads[input.0], g.map(|v| v * s));
                }
            }
            Op::Log(input) => {
                if self.needs(*input) {
                    let d = g
                        .zip_map(self.value(*input), |gv, x| gv / x)
                        .expect("shapes matched at forward");
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::Sqrt(input) => {
                if self.needs(*input) {
                    let d = g
                        .zip_map(value, |gv, y| {
                            if y > T::zero() {
                                gv * T::half() / y
                            } else {
                                T::zero()
                            }
                        })
                        .expect("shapes matched at forward");
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::Clamp { input, lo, hi } => {
                if self.needs(*input) {
                    let (lo, hi) = (*lo, *hi);
                    let d = g
                        .zip_map(self.value(*input), |gv, x| {
                            if x >= lo && x <= hi {
                                gv
                            } else {
                                T::zero()
                            }
                        })
                        .expect("shapes matched at forward");
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::Sum(input) => {
                if self.needs(*input) {
                    let shape = self.value(*input).shape();
                    accumulate(&mut grads[input.0], Tensor::full(shape, g.item()));
                }
            }
            Op::Mean(input) => {
                if self.needs(*input) {
                    let t = self.value(*input);
                    let v = g.item() / T::of(t.len() as f64);
                    accumulate(&mut grads[input.0], Tensor::full(t.shape(), v));
                }
            }
            Op::MeanSpatial(input) => {
                if self.needs(*input) {
                    let t = self.value(*input);
                    let per = t.len() / t.shape()[0];
                    let inv = T::one() / T::of(per as f64);
                    let mut d = Tensor::zeros(t.shape());
                    for (idx, v) in d.data_mut().iter_mut().enumerate() {
                        *v = g.data()[idx / per] * inv;
                    }
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::StBinarize(input) => {
                if self.needs(*input) {
                    accumulate(&mut grads[input.0], g.clone());
                }
            }
            Op::MaskMul { image, mask } => {
                let ishape = self.value(*image).shape();
                let (c, spatial) = (ishape[1], ishape[2] * ishape[3]);
                if self.needs(*image) {
                    let mdata = self.value(*mask).data();
                    let mut d = g.clone();
                    for (idx, v) in d.data_mut().iter_mut().enumerate() {
                        let n = idx / (c * spatial);
                        *v = *v * mdata[n * spatial + idx % spatial];
                    }
                    accumulate(&mut grads[image.0], d);
                }
                if self.needs(*mask) {
                    let idata = self.value(*image).data();
                    let mut d = Tensor::zeros(self.value(*mask).shape());
                    let dd = d.data_mut();
                    for (idx, gv) in g.data().iter().enumerate() {
                        let n = idx / (c * spatial);
                        dd[n * spatial + idx % spatial] += *gv * idata[idx];
                    }
                    accumulate(&mut grads[mask.0], d);
                }
            }
            Op::AnchorMatrix { input, cols } => {
                if self.needs(*input) {
                    let shape = self.value(*input).shape();
                    let (n, ch, h, w) = (shape[0], shape[1], shape[2], shape[3]);
                    let a = ch / cols;
                    let mut d = Tensor::zeros(shape);
                    let dd = d.data_mut();
                    let gd = g.data();
                    let mut r = 0;
                    for bi in 0..n {
                        for y in 0..h {
                            for x in 0..w {
                                for ai in 0..a {
                                    for k in 0..*cols {
                                        let ch_idx = ai * cols + k;
                                        dd[((bi * ch + ch_idx) * h + y) * w + x] = gd[r * cols + k];
                                    }
                                    r += 1;
                                }
                            }
                        }
                    }
                    accumulate(&mut grads[input.0], d);
                }
            }
            Op::ConcatRows(inputs) => {
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    let len = t.len();
                    if self.needs(v) {
                        let slice = g.data()[offset..offset + len].to_vec();
                        let d = Tensor::new(t.shape().to_vec(), slice).expect("slice length matches");
                        accumulate(&mut grads[v.0], d);
                    }
                    offset += len;
                }
            }
            Op::SoftmaxCe { logits, targets, weights } => {
                if self.needs(*logits) {
                    let t = self.value(*logits);
                    let (p, k) = (t.shape()[0], t.shape()[1]);
                    let gv = g.item();
                    let mut d = Tensor::zeros(t.shape());
                    let dd = d.data_mut();
                    let ld = t.data();
                    for i in 0..p {
                        if weights[i] == T::zero() {
                            continue;
                        }
                        let row = &ld[i * k..(i + 1) * k];
                        let lse = log_sum_exp(row);
                        for j in 0..k {
                            let soft = (row[j] - lse).exp();
                            let hit = if j == targets[i] { T::one() } else { T::zero() };
                            dd[i * k + j] = gv * weights[i] * (soft - hit);
                        }
                    }
                    accumulate(&mut grads[logits.0], d);
                }
            }
            Op::SmoothL1 { pred, target, weights } => {
                if self.needs(*pred) {
                    let t = self.value(*pred);
                    let (p, dim) = (t.shape()[0], t.shape()[1]);
                    let gv = g.item();
                    let mut d = Tensor::zeros(t.shape());
                    let dd = d.data_mut();
                    let pd = t.data();
                    let td = target.data();
                    for i in 0..p {
                        if weights[i] == T::zero() {
                            continue;
                        }
                        for j in 0..dim {
                            let x = pd[i * dim + j] - td[i * dim + j];
                            let slope = if x > T::one() {
                                T::one()
                            } else if x < -T::one() {
                                -T::one()
                            } else {
                                x
                            };
                            dd[i * dim + j] = gv * weights[i] * slope;
                        }
                    }
                    accumulate(&mut grads[pred.0], d);
                }
            }
        }
    }
}

fn log_sum_exp<T: Real>(row: &[T]) -> T {
    let m = row.iter().copied().fold(T::neg_infinity(), T::max);
    let s: T = row.iter().map(|&v| (v - m).exp()).sum();
    m + s.ln()
}

fn smooth_l1_val<T: Real>(x: T) -> T {
    if x.abs() < T::one() {
        T::half() * x * x
    } else {
        x.abs() - T::half()
    }
}
