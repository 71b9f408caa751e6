//! Floating point abstraction shared by every numeric module.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Storage scalar for vectors, matrices and parameters.
///
/// Reductions (dot products, norms, losses) are accumulated in `f64`
/// regardless of the storage type, so `f32` storage keeps gradient checks
/// tight and `f64` storage is exact to working precision.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Debug + Display + Default + Sum + Send + Sync + 'static
{
    /// Widen to the accumulation type.
    fn widen(self) -> f64;
    /// Round an accumulated value back to storage precision.
    fn narrow(value: f64) -> Self;
    /// Value as stored in `.f32` interchange files.
    fn to_f32_bits(self) -> f32;
    fn from_f32_bits(value: f32) -> Self;
}

impl Scalar for f32 {
    #[inline]
    fn widen(self) -> f64 {
        self as f64
    }
    #[inline]
    fn narrow(value: f64) -> Self {
        value as f32
    }
    #[inline]
    fn to_f32_bits(self) -> f32 {
        self
    }
    #[inline]
    fn from_f32_bits(value: f32) -> Self {
        value
    }
}

impl Scalar for f64 {
    #[inline]
    fn widen(self) -> f64 {
        self
    }
    #[inline]
    fn narrow(value: f64) -> Self {
        value
    }
    #[inline]
    fn to_f32_bits(self) -> f32 {
        self as f32
    }
    #[inline]
    fn from_f32_bits(value: f32) -> Self {
        value as f64
    }
}

/// Constant conversion that cannot fail for the supported scalar types.
#[inline]
pub(crate) fn lit<T: Scalar>(value: f64) -> T {
    T::narrow(value)
}
