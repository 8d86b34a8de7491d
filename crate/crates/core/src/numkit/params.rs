use crate::rng::{self, Prng};
use crate::scalar::Real;

use super::{Gradients, Graph, NumError, Tensor, Var};

/// Ordered, name-keyed parameter collection for one network.
///
/// Insertion order is the canonical order: binding into a graph, SGD
/// updates, checkpoints, and checksums all walk it identically, which keeps
/// every downstream artifact deterministic.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        ParamSet::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        ParamSet { entries: Vec::new() }
    }

    /// Registers a parameter. Names must be unique within the set.
    pub fn insert(&mut self, name: &str, tensor: Tensor<T>) {
        assert!(
            self.get(name).is_none(),
            "duplicate parameter name {name:?}"
        );
        self.entries.push((name.to_string(), tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.entries
            .iter_mut()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Total number of scalar values across all parameters.
    pub fn value_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Inserts every parameter into `graph` as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph<T>) -> BoundParams {
        self.bind_with(graph, true)
    }

    /// Inserts every parameter as a constant: values are used by the forward
    /// pass but receive no gradient and take no updates.
    pub fn bind_frozen(&self, graph: &mut Graph<T>) -> BoundParams {
        self.bind_with(graph, false)
    }

    fn bind_with(&self, graph: &mut Graph<T>, trainable: bool) -> BoundParams {
        let mut names = Vec::with_capacity(self.entries.len());
        let mut vars = Vec::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            names.push(name.clone());
            vars.push(if trainable {
                graph.param(tensor.clone())
            } else {
                graph.input(tensor.clone())
            });
        }
        BoundParams { names, vars, trainable }
    }

    /// One SGD step, `p ← p − lr·g`, over a trainable binding of this set.
    pub fn apply_sgd(
        &mut self,
        bound: &BoundParams,
        grads: &Gradients<T>,
        lr: T,
    ) -> Result<(), NumError> {
        if !bound.trainable {
            return Err(NumError::contract(
                "apply_sgd",
                "binding is frozen; it took no gradients",
            ));
        }
        if bound.vars.len() != self.entries.len() {
            return Err(NumError::contract(
                "apply_sgd",
                "binding does not match this parameter set",
            ));
        }
        for ((_, tensor), &var) in self.entries.iter_mut().zip(&bound.vars) {
            let grad = grads.get(var).ok_or_else(|| {
                NumError::contract("apply_sgd", "gradient store lacks a bound parameter")
            })?;
            sgd_step(tensor, grad, lr)?;
        }
        Ok(())
    }

    /// FNV-1a hash of the canonical byte serialization; two sets with equal
    /// names, shapes, and values (as `f64`) collide exactly.
    pub fn checksum(&self) -> u64 {
        const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
        const PRIME: u64 = 0x0000_0100_0000_01b3;
        let mut h = OFFSET;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h ^= b as u64;
                h = h.wrapping_mul(PRIME);
            }
        };
        for (name, tensor) in &self.entries {
            eat(name.as_bytes());
            eat(&[0]);
            eat(&(tensor.rank() as u32).to_le_bytes());
            for &d in tensor.shape() {
                eat(&(d as u32).to_le_bytes());
            }
            for v in tensor.data() {
                eat(&v.as_f64().to_le_bytes());
            }
        }
        h
    }
}

/// Graph leaves for one [`ParamSet`], in set order.
pub struct BoundParams {
    names: Vec<String>,
    vars: Vec<Var>,
    trainable: bool,
}

impl BoundParams {
    /// The leaf for a named parameter. Panics on unknown names: forward
    /// builders and their parameter sets are authored together, so a miss is
    /// a bug, not an input condition.
    pub fn var(&self, name: &str) -> Var {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.vars[i],
            None => panic!("parameter {name:?} is not in this binding"),
        }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}

/// In-place SGD update on one tensor: `p ← p − lr·g`.
pub fn sgd_step<T: Real>(param: &mut Tensor<T>, grad: &Tensor<T>, lr: T) -> Result<(), NumError> {
    if param.shape() != grad.shape() {
        return Err(NumError::shape(
            "sgd_step",
            format!("{:?}", param.shape()),
            grad.shape(),
        ));
    }
    for (p, g) in param.data_mut().iter_mut().zip(grad.data()) {
        *p = *p - lr * *g;
    }
    Ok(())
}

/// Uniform init in `[−1/√fan_in, +1/√fan_in]`.
pub fn init_uniform<T: Real>(shape: &[usize], fan_in: usize, rng: &mut Prng) -> Tensor<T> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len)
        .map(|_| T::of(rng::uniform(rng, -bound, bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("init shape is positive")
}

/// Convolution weight `[K,C,kh,kw]`; fan-in is `C·kh·kw`.
pub fn conv_weight<T: Real>(k: usize, c: usize, kh: usize, kw: usize, rng: &mut Prng) -> Tensor<T> {
    init_uniform(&[k, c, kh, kw], c * kh * kw, rng)
}

/// Transposed-convolution weight `[K,C,kh,kw]`; the input side has `K`
/// channels, so fan-in is `K·kh·kw`.
pub fn deconv_weight<T: Real>(
    k: usize,
    c: usize,
    kh: usize,
    kw: usize,
    rng: &mut Prng,
) -> Tensor<T> {
    init_uniform(&[k, c, kh, kw], k * kh * kw, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn sgd_basic_updates() {
        let mut p = Tensor::scalar(1.0);
        sgd_step(&mut p, &Tensor::scalar(2.0), 0.1).unwrap();
        assert_eq!(p.item(), 0.8);
        sgd_step(&mut p, &Tensor::scalar(5.0), 0.0).unwrap();
        assert_eq!(p.item(), 0.8);
    }

    #[test]
    fn sgd_shape_mismatch_errors() {
        let mut p = Tensor::<f64>::zeros(&[2]);
        assert!(sgd_step(&mut p, &Tensor::zeros(&[3]), 0.1).is_err());
    }

    #[test]
    fn one_step_on_quadratic() {
        // loss = (p - 3)^2 from p = 0: grad = -6, so p moves to 0.6.
        let mut set = ParamSet::new();
        set.insert("p", Tensor::scalar(0.0f64));
        let mut g = Graph::new();
        let bound = set.bind(&mut g);
        let p = bound.var("p");
        let c = g.input(Tensor::scalar(3.0));
        let d = g.sub(p, c).unwrap();
        let sq = g.mul(d, d).unwrap();
        let loss = g.sum(sq);
        let grads = g.backward(loss).unwrap();
        set.apply_sgd(&bound, &grads, 0.1).unwrap();
        assert!((set.get("p").unwrap().item() - 0.6).abs() < 1e-12);
    }

    #[test]
    fn frozen_binding_rejects_sgd() {
        let mut set = ParamSet::new();
        set.insert("p", Tensor::scalar(1.0f64));
        let mut g = Graph::new();
        let bound = set.bind_frozen(&mut g);
        let loss = g.sum(bound.var("p"));
        let grads = g.backward(loss).unwrap();
        assert!(set.apply_sgd(&bound, &grads, 0.1).is_err());
        assert_eq!(set.get("p").unwrap().item(), 1.0);
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = seeded(11);
        let w: Tensor<f64> = conv_weight(4, 3, 3, 3, &mut rng);
        let bound = 1.0 / (27.0f64).sqrt();
        assert_eq!(w.shape(), &[4, 3, 3, 3]);
        assert!(w.data().iter().all(|v| v.abs() <= bound));
        assert!(w.data().iter().any(|v| v.abs() > bound * 0.5));
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a: Tensor<f64> = conv_weight(2, 2, 3, 3, &mut seeded(5));
        let b: Tensor<f64> = conv_weight(2, 2, 3, 3, &mut seeded(5));
        assert_eq!(a, b);
    }

    #[test]
    fn checksum_tracks_values_and_names() {
        let mut a = ParamSet::new();
        a.insert("w", Tensor::scalar(1.0f64));
        let mut b = ParamSet::new();
        b.insert("w", Tensor::scalar(1.0f64));
        assert_eq!(a.checksum(), b.checksum());
        let mut c = ParamSet::new();
        c.insert("w", Tensor::scalar(1.0 + 1e-12f64));
        assert_ne!(a.checksum(), c.checksum());
        let mut d = ParamSet::new();
        d.insert("v", Tensor::scalar(1.0f64));
        assert_ne!(a.checksum(), d.checksum());
    }
}
