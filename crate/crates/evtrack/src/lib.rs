//! Event-camera eye tracking pipeline.
//!
//! The crate slices DVS event streams by event count, accumulates 2-channel
//! 64×64 polarity frames, and regresses a normalized pupil bounding box with
//! a compact CNN. Both a float and a fully integer INT8 inference path are
//! provided, together with training (analytic backprop + Adam), static
//! post-training quantization, a framed byte-stream relay protocol, a
//! synthetic event-camera generator, and an evaluation/benchmark harness.
//!
//! Numeric kernels are generic over the scalar type ([`Scalar`], implemented
//! for `f32`/`f64`); the production pipeline runs in `f32` while `f64`
//! instantiations back the verification oracles.

pub mod error;
pub mod event;
pub mod eval;
pub mod frame;
pub mod nn;
pub mod quant;
pub mod rng;
pub mod slice;
pub mod synth;
pub mod train;
pub mod wire;

pub use error::{Error, Result};
pub use nn::scalar::Scalar;

/// Dense tensor over the production scalar type.
pub type Tensor32 = nn::Tensor<f32>;
/// Dense tensor over the oracle scalar type.
pub type Tensor64 = nn::Tensor<f64>;
/// Model over the production scalar type (what containers store).
pub type Model32 = nn::ModelSpec<f32>;
/// Model over the oracle scalar type (finite differences, exact sums).
pub type Model64 = nn::ModelSpec<f64>;
