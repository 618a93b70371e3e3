//! Masked-channel encoding and the permuted product construction.
//!
//! A network input for "column t is missing" is a 3d-channel stack:
//! a mask block (ones in the masked column), a value block (the candidate
//! column vector repeated across the sequence), and the signal matrix with
//! the masked column zeroed. Missing values are always (zero + mask), never
//! a NaN sentinel, so downstream arithmetic stays NaN-free.
//!
//! Product-side samples allow a different masked column per row: they are
//! assembled by permuting each row's time indices independently, which
//! preserves every per-row marginal while destroying cross-row coupling.

use super::{matrix::SignalMatrix, SignalError};
use crate::ndgrad::Tensor;
use crate::rng::permutation;
use crate::scalar::Scalar;
use rand::Rng;

/// Channels of the encoded network input for a d-row signal matrix.
pub fn encoded_channels(d: usize) -> usize {
    3 * d
}

/// A signal matrix with one column marked missing.
#[derive(Debug, Clone, Copy)]
pub struct MaskedContext<'a, F> {
    pub base: &'a SignalMatrix<F>,
    pub masked_t: usize,
}

impl<'a, F: Scalar> MaskedContext<'a, F> {
    pub fn new(base: &'a SignalMatrix<F>, masked_t: usize) -> Result<Self, SignalError> {
        if masked_t >= base.t_len() {
            return Err(SignalError::MaskOutOfRange {
                t: masked_t,
                t_len: base.t_len(),
            });
        }
        Ok(MaskedContext { base, masked_t })
    }

    /// Encode with the base's own column as the value block.
    pub fn encode(&self) -> Tensor<F> {
        let values = self.base.column(self.masked_t);
        encode_rows(self.base, &vec![self.masked_t; self.base.d()], &values)
    }

    /// Encode with an arbitrary candidate value in the masked column.
    pub fn encode_with_values(&self, values: &[F]) -> Tensor<F> {
        encode_rows(self.base, &vec![self.masked_t; self.base.d()], values)
    }
}

/// Write the 3d x T encoding into `dst` (length `3 * d * T`). `masked_cols`
/// holds one masked column index per row; `values` the candidate vector fed
/// through the repeated-value block.
pub fn encode_rows_into<F: Scalar>(
    dst: &mut [F],
    base: &SignalMatrix<F>,
    masked_cols: &[usize],
    values: &[F],
) {
    let d = base.d();
    let t_len = base.t_len();
    assert_eq!(masked_cols.len(), d, "one masked column per row");
    assert_eq!(values.len(), d, "one value per row");
    assert_eq!(dst.len(), 3 * d * t_len);
    let (mask_block, rest) = dst.split_at_mut(d * t_len);
    let (value_block, ctx_block) = rest.split_at_mut(d * t_len);
    mask_block.fill(F::zero());
    for i in 0..d {
        let col = masked_cols[i];
        debug_assert!(col < t_len);
        mask_block[i * t_len + col] = F::one();
        value_block[i * t_len..(i + 1) * t_len].fill(values[i]);
        let ctx_row = &mut ctx_block[i * t_len..(i + 1) * t_len];
        ctx_row.copy_from_slice(base.row(i));
        ctx_row[col] = F::zero();
    }
}

/// Allocating wrapper around [`encode_rows_into`], shaped `[3d, T]`.
pub fn encode_rows<F: Scalar>(
    base: &SignalMatrix<F>,
    masked_cols: &[usize],
    values: &[F],
) -> Tensor<F> {
    let d = base.d();
    let t_len = base.t_len();
    let mut buf = vec![F::zero(); 3 * d * t_len];
    encode_rows_into(&mut buf, base, masked_cols, values);
    Tensor::new(vec![3 * d, t_len], buf).unwrap()
}

/// One pseudo-sample from the per-row factorized law.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductSample<F> {
    /// d-vector assembled component-wise from independently permuted rows.
    pub values: Vec<F>,
    /// Per-row masked column indices (the permuted positions).
    pub masked_cols: Vec<usize>,
}

/// d independent uniform permutations of the time axis.
#[derive(Debug, Clone)]
pub struct PermutedProduct {
    perms: Vec<Vec<usize>>,
}

impl PermutedProduct {
    pub fn draw<R: Rng>(d: usize, t_len: usize, rng: &mut R) -> Self {
        let perms = (0..d).map(|_| permutation(rng, t_len)).collect();
        PermutedProduct { perms }
    }

    pub fn identity(d: usize, t_len: usize) -> Self {
        PermutedProduct {
            perms: (0..d).map(|_| (0..t_len).collect()).collect(),
        }
    }

    pub fn perms(&self) -> &[Vec<usize>] {
        &self.perms
    }

    /// The product sample at position `t`: row `i` contributes its value and
    /// context at `perm_i(t)`.
    pub fn sample<F: Scalar>(&self, z: &SignalMatrix<F>, t: usize) -> ProductSample<F> {
        let d = z.d();
        let mut values = Vec::with_capacity(d);
        let mut masked_cols = Vec::with_capacity(d);
        for i in 0..d {
            let tt = self.perms[i][t];
            values.push(z.get(i, tt));
            masked_cols.push(tt);
        }
        ProductSample {
            values,
            masked_cols,
        }
    }

    /// All T product samples in order.
    pub fn samples<F: Scalar>(&self, z: &SignalMatrix<F>) -> Vec<ProductSample<F>> {
        (0..z.t_len()).map(|t| self.sample(z, t)).collect()
    }
}

/// Encode a product sample against its base matrix; shaped `[3d, T]`.
pub fn encode_product<F: Scalar>(base: &SignalMatrix<F>, sample: &ProductSample<F>) -> Tensor<F> {
    encode_rows(base, &sample.masked_cols, &sample.values)
}
