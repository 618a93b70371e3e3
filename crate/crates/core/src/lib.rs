//! De-mixing of multi-dimensional sequences with KL-minimizing conditional
//! flows (SICA). The crate provides:
//!
//! - `ndgrad` — a small dense-tensor kernel with reverse-mode AD and
//!   first-order optimizers, enough to train convolutional vector fields;
//! - `signals` — source generators (AR(7), parametric heart, image loading),
//!   iterative mixing, and the masked-channel dataset construction;
//! - `dre` — classifier-based density-ratio estimation and the
//!   Wasserstein-gradient-flow velocity it induces;
//! - `rectflow` — the conditional rectified flow and its ODE sampler;
//! - `sica` — the outer iterative KL-minimization loop and de-mixer replay;
//! - `eval` — MCC with optimal assignment, cross-correlation diagnostics,
//!   and a self-contained FastICA baseline.
//!
//! All numerics are generic over [`scalar::Scalar`] (`f32` or `f64`); the
//! `*64` aliases below are the recommended instantiations.

pub mod dre;
pub mod eval;
mod linalg;
pub mod ndgrad;
pub mod rectflow;
pub mod rng;
pub mod scalar;
pub mod sica;
pub mod signals;

pub use scalar::Scalar;

/// Recommended concrete instantiations (64-bit floats throughout).
pub type Tensor64 = ndgrad::Tensor<f64>;
pub type SignalMatrix64 = signals::SignalMatrix<f64>;
pub type VectorFieldNet64 = ndgrad::VectorFieldNet<f64>;
pub type RatioModel64 = dre::RatioModel<f64>;
pub type RfModel64 = rectflow::RfModel<f64>;
pub type Demixer64 = sica::Demixer<f64>;
