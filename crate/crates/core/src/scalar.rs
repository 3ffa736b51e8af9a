//! Floating-point abstraction shared by every numerical module.
//!
//! All field, noise and integrator code is written against [`Scalar`] so the
//! same kernels run in `f32` (memory-bounded sweeps) and `f64` (the default,
//! and the only precision the acceptance tolerances are stated for).

use std::fmt::{Debug, Display, LowerExp};

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};
use rustfft::FftNum;

/// f32 or f64
pub trait Scalar:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + FftNum
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
{
    /// Lossless-for-f64 widening used by diagnostics and I/O.
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    #[inline]
    fn of(value: f64) -> Self {
        Self::from_f64(value).unwrap_or_else(Self::nan)
    }

    #[inline]
    fn of_usize(value: usize) -> Self {
        Self::from_usize(value).unwrap_or_else(Self::nan)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Pointwise 3-vector helpers on plain arrays.
pub(crate) mod vec3 {
    use super::Scalar;

    #[inline]
    pub fn cross<T: Scalar>(a: [T; 3], b: [T; 3]) -> [T; 3] {
        [
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        ]
    }

    #[inline]
    pub fn dot<T: Scalar>(a: [T; 3], b: [T; 3]) -> T {
        a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
    }

    #[inline]
    pub fn norm_sq<T: Scalar>(a: [T; 3]) -> T {
        dot(a, a)
    }
}
