//! Scalar abstraction shared by the geometry, alignment and discrete matching code.
//!
//! Everything that is pure numerics (rigid transforms, Kabsch, Sinkhorn kernels,
//! Hungarian, metrics) is written against [`Real`], so it runs on `f32` and `f64`.
//! The learned path (the autodiff tape) is fixed to `f64`.

use std::fmt::{Debug, Display};

use nalgebra::RealField;
use num_traits::{FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    RealField + Copy + FromPrimitive + ToPrimitive + Display + Debug + Send + Sync + 'static
{
    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 literal representable")
    }

    #[inline]
    fn from_usize_lossy(v: usize) -> Self {
        <Self as FromPrimitive>::from_usize(v).expect("usize representable")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        ToPrimitive::to_f64(&self).unwrap_or(f64::NAN)
    }

    #[inline]
    fn to_radians_r(self) -> Self {
        self * Self::pi() / Self::lit(180.0)
    }

    #[inline]
    fn to_degrees_r(self) -> Self {
        self * Self::lit(180.0) / Self::pi()
    }

    /// Machine epsilon of the concrete type.
    fn machine_eps() -> Self;

    fn infinity() -> Self;
}

impl Real for f32 {
    #[inline]
    fn machine_eps() -> Self {
        f32::EPSILON
    }
    #[inline]
    fn infinity() -> Self {
        f32::INFINITY
    }
}

impl Real for f64 {
    #[inline]
    fn machine_eps() -> Self {
        f64::EPSILON
    }
    #[inline]
    fn infinity() -> Self {
        f64::INFINITY
    }
}
