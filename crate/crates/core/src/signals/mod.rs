//! Signal generation, mixing, image ingestion, and the masked/permuted
//! dataset construction the de-mixing loop consumes.

mod generate;
mod masked;
mod matrix;
mod mix;
mod mnist;

pub use generate::{generate_ar7, generate_heart, ArConfig};
pub use masked::{
    encode_product, encode_rows, encode_rows_into, encoded_channels, MaskedContext,
    PermutedProduct, ProductSample,
};
pub use matrix::{whiten_rows, RowAffine, SignalMatrix, WhitenMap};
pub use mix::{mix, MixActivation, MixConfig};
pub use mnist::{
    images_to_signals, load_idx_images, load_idx_labels, row_to_image, write_pgm, GrayImage,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("signal io: {0}")]
    Io(#[from] std::io::Error),
    #[error("{path}:{line}: {msg}")]
    Csv {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("generator overflow at index {t}: |value| exceeded {limit:e}")]
    Unstable { t: usize, limit: f64 },
    #[error("masked column {t} out of range for T={t_len}")]
    MaskOutOfRange { t: usize, t_len: usize },
    #[error("dimension mismatch: expected {expected}, found {found} ({what})")]
    DimMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: truncated payload, needed {needed} bytes, found {found}")]
    Truncated {
        path: String,
        needed: usize,
        found: usize,
    },
    #[error("{path}: extent mismatch: header promises {promised} items, payload holds {actual}")]
    ExtentMismatch {
        path: String,
        promised: usize,
        actual: usize,
    },
    #[error("whitening failed: covariance eigenvalue {value:e} is not positive enough")]
    RankDeficient { value: f64 },
}

/// Values past this magnitude abort generation/mixing as numerically unstable.
pub const OVERFLOW_LIMIT: f64 = 1e12;
