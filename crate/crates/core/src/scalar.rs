//! Scalar abstraction for the numeric subsystems.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::float::Float;
use num_traits::NumAssignOps;

/// Floating-point scalar the tensor kernel and model math are generic over.
///
/// `of`/`as_f64` give infallible conversions to and from `f64`, which is the
/// wire type for checkpoints and the reference type for oracles. (`as_f64`
/// rather than `to_f64` so it cannot be shadowed by `ToPrimitive`, a
/// supertrait of `Float`.)
pub trait Real:
    Float + NumAssignOps + Sum<Self> + Default + Debug + Display + Send + Sync + 'static
{
    fn of(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn half() -> Self {
        Self::of(0.5)
    }
}

impl Real for f32 {
    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}
