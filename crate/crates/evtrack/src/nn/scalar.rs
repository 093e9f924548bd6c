//! Scalar abstraction for the numeric kernels.
//!
//! Everything compute-shaped (tensors, layer kernels, loss, gradients, the
//! QDQ simulation) is generic over `Scalar` so the same code runs the f32
//! production path and the f64 verification path.

use num_traits::Float;

pub trait Scalar:
    Float + num_traits::FromPrimitive + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64v(v: f64) -> Self;
    fn to_f64v(self) -> f64;
    fn from_f32v(v: f32) -> Self;
    fn to_f32v(self) -> f32;
}

impl Scalar for f32 {
    #[inline(always)]
    fn from_f64v(v: f64) -> Self {
        v as f32
    }
    #[inline(always)]
    fn to_f64v(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from_f32v(v: f32) -> Self {
        v
    }
    #[inline(always)]
    fn to_f32v(self) -> f32 {
        self
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn from_f64v(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn to_f64v(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from_f32v(v: f32) -> Self {
        v as f64
    }
    #[inline(always)]
    fn to_f32v(self) -> f32 {
        self as f32
    }
}
