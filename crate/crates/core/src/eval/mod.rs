//! Metrics and baselines: mean correlation coefficient under the optimal
//! component assignment, cross-correlation diagnostics, and a
//! self-contained symmetric FastICA.

mod fastica;
mod mcc;

pub use fastica::fastica;
pub use mcc::{cross_corr, mcc, MccResult};



use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("row {row} of {which} is constant; correlation undefined")]
    ConstantRow { row: usize, which: &'static str },
    #[error("dimension mismatch: {what} expected {expected}, found {found}")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("covariance is rank-deficient (eigenvalue {value:e} below tolerance)")]
    RankDeficient { value: f64 },
    #[error("need d <= T for whitening, found d={d}, T={t_len}")]
    TooFewSamples { d: usize, t_len: usize },
}
