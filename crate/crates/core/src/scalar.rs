//! Scalar abstraction: everything numeric in this crate is generic over a
//! float type. `f64` is the recommended default (the experiments are small,
//! precision beats speed); `f32` is available for memory-bound runs.

use num_traits::{Float, NumAssign};
use std::fmt::{Debug, Display};

/// Floating-point element type for signals, tensors and flows.
pub trait Scalar: Float + NumAssign + Send + Sync + Debug + Display + 'static {
    /// Lossy conversion from `f64` (named to dodge `FromPrimitive`).
    fn cast(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    #[inline(always)]
    fn cast(x: f64) -> Self {
        x as f32
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    #[inline(always)]
    fn cast(x: f64) -> Self {
        x
    }
    #[inline(always)]
    fn as_f64(self) -> f64 {
        self
    }
}

/// GELU, tanh approximation: `0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715 x^3)))`.
#[inline]
pub fn gelu<F: Scalar>(x: F) -> F {
    let c = F::cast(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = F::cast(0.044715);
    let half = F::cast(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (F::one() + inner.tanh())
}

/// Derivative of the tanh-approximate GELU.
#[inline]
pub fn gelu_grad<F: Scalar>(x: F) -> F {
    let c = F::cast(0.797_884_560_802_865_4);
    let a = F::cast(0.044715);
    let half = F::cast(0.5);
    let three = F::cast(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_fixed_points() {
        assert_eq!(gelu(0.0f64), 0.0);
        // Evaluate the approximation formula independently at x = 1.
        let x = 1.0f64;
        let inner = (2.0 / std::f64::consts::PI).sqrt() * (x + 0.044715 * x * x * x);
        let expected = 0.5 * x * (1.0 + inner.tanh());
        assert!((gelu(1.0f64) - expected).abs() < 1e-15);
        assert!((gelu(1.0f64) - 0.8412).abs() < 5e-5);
    }

    #[test]
    fn gelu_grad_matches_central_difference() {
        let eps = 1e-6;
        for &x in &[-2.0f64, -0.5, 0.0, 0.3, 1.7] {
            let fd = (gelu(x + eps) - gelu(x - eps)) / (2.0 * eps);
            assert!(
                (gelu_grad(x) - fd).abs() < 1e-8,
                "x={x}: grad {} vs fd {fd}",
                gelu_grad(x)
            );
        }
    }

    #[test]
    fn gelu_generic_over_f32() {
        let y32 = gelu(1.0f32);
        let y64 = gelu(1.0f64);
        assert!((y32 as f64 - y64).abs() < 1e-6);
    }
}
