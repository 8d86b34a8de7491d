use crate::scalar::Real;

use super::NumError;

/// Dense row-major tensor.
///
/// Shapes are made of positive dimension sizes; the data length always equals
/// the shape product. A rank-0 shape is not used; scalars are `[1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self, NumError> {
        if shape.is_empty() || shape.iter().any(|&d| d == 0) {
            return Err(NumError::dim(
                "tensor",
                format!("dimensions must be positive, got {shape:?}"),
            ));
        }
        let want: usize = shape.iter().product();
        if want != data.len() {
            return Err(NumError::dim(
                "tensor",
                format!("shape {shape:?} needs {want} values, got {}", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        assert!(len > 0, "tensor shape must have positive dimensions");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        assert!(self.is_scalar(), "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Reinterprets the same data under a new shape of equal length.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, NumError> {
        let want: usize = shape.iter().product();
        if shape.is_empty() || want != self.data.len() {
            return Err(NumError::dim(
                "reshape",
                format!("cannot view {:?} as {shape:?}", self.shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self, NumError> {
        if self.shape != other.shape {
            return Err(NumError::shape(
                "elementwise",
                format!("{:?}", self.shape),
                &other.shape,
            ));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Values converted to `f64`, the checkpoint wire type.
    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn from_f64(shape: Vec<usize>, values: &[f64]) -> Result<Self, NumError> {
        Tensor::new(shape, values.iter().map(|&v| T::of(v)).collect())
    }

    /// Concatenates tensors along dimension 0; trailing dimensions must
    /// agree.
    pub fn concat0(tensors: &[Tensor<T>]) -> Result<Self, NumError> {
        let Some(first) = tensors.first() else {
            return Err(NumError::contract("concat0", "needs at least one tensor"));
        };
        let mut shape = first.shape.clone();
        let mut data = Vec::new();
        for t in tensors {
            if t.shape[1..] != first.shape[1..] || t.rank() != first.rank() {
                return Err(NumError::shape(
                    "concat0",
                    format!("trailing dims of {:?}", first.shape),
                    &t.shape,
                ));
            }
            data.extend_from_slice(&t.data);
        }
        shape[0] = tensors.iter().map(|t| t.shape[0]).sum();
        Tensor::new(shape, data)
    }
}

/// Flat index into an `[N, C, H, W]` tensor.
#[inline]
pub(crate) fn at4(shape: &[usize], n: usize, c: usize, y: usize, x: usize) -> usize {
    ((n * shape[1] + c) * shape[2] + y) * shape[3] + x
}
