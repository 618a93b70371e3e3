//! Iterative mixing: `x <- x + h(W x)` applied columnwise. With the identity
//! activation this composes to `(I + W)^J s`; with GELU it is the nonlinear
//! entanglement used by the image and hard-sequence settings.

use super::{matrix::SignalMatrix, SignalError, OVERFLOW_LIMIT};
use crate::scalar::{gelu, Scalar};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixActivation {
    Identity,
    Gelu,
}

#[derive(Debug, Clone)]
pub struct MixConfig {
    /// Row-major d x d coupling matrix.
    pub coupling: Vec<f64>,
    pub d: usize,
    pub steps: usize,
    pub activation: MixActivation,
    /// Reserved for randomized couplings; the standard experiments fix W.
    pub seed: u64,
}

impl MixConfig {
    /// The standard coupling: `diag` on the diagonal, `off_diag` elsewhere.
    pub fn uniform_coupling(d: usize, diag: f64, off_diag: f64, steps: usize, activation: MixActivation) -> Self {
        let mut coupling = vec![off_diag; d * d];
        for i in 0..d {
            coupling[i * d + i] = diag;
        }
        MixConfig {
            coupling,
            d,
            steps,
            activation,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<(), SignalError> {
        if self.coupling.len() != self.d * self.d {
            return Err(SignalError::DimMismatch {
                what: "coupling matrix",
                expected: self.d * self.d,
                found: self.coupling.len(),
            });
        }
        Ok(())
    }
}

/// Apply `steps` mixing updates to every column of `source`.
pub fn mix<F: Scalar>(source: &SignalMatrix<F>, cfg: &MixConfig) -> Result<SignalMatrix<F>, SignalError> {
    cfg.validate()?;
    if source.d() != cfg.d {
        return Err(SignalError::DimMismatch {
            what: "signal count",
            expected: cfg.d,
            found: source.d(),
        });
    }
    let d = cfg.d;
    let t_len = source.t_len();
    let w: Vec<F> = cfg.coupling.iter().map(|&v| F::cast(v)).collect();
    let limit = F::cast(OVERFLOW_LIMIT);
    let mut x = source.clone();
    let mut wx = vec![F::zero(); d];
    for _ in 0..cfg.steps {
        for t in 0..t_len {
            for (i, acc) in wx.iter_mut().enumerate() {
                let mut s = F::zero();
                for j in 0..d {
                    s += w[i * d + j] * x.get(j, t);
                }
                *acc = s;
            }
            for i in 0..d {
                let h = match cfg.activation {
                    MixActivation::Identity => wx[i],
                    MixActivation::Gelu => gelu(wx[i]),
                };
                let v = x.get(i, t) + h;
                if v.abs() > limit {
                    return Err(SignalError::Unstable {
                        t,
                        limit: OVERFLOW_LIMIT,
                    });
                }
                x.set(i, t, v);
            }
        }
    }
    Ok(x)
}
