//! Small dense d x d helpers shared by whitening and FastICA: symmetric
//! eigendecomposition via cyclic Jacobi rotations and a matrix product.
//! Everything here targets d <= 8-ish, so robustness wins over speed.

use crate::scalar::Scalar;

/// Eigendecomposition of a symmetric matrix (row-major `n x n`).
///
/// Returns `(values, vectors)` with `vectors` row-major and column `k`
/// holding the unit eigenvector of `values[k]`. Values are unsorted.
pub(crate) fn jacobi_eigh<F: Scalar>(a: &[F], n: usize) -> (Vec<F>, Vec<F>) {
    assert_eq!(a.len(), n * n);
    let mut m = a.to_vec();
    let mut v = vec![F::zero(); n * n];
    for i in 0..n {
        v[i * n + i] = F::one();
    }
    let eps = F::cast(1e-30);
    for _sweep in 0..100 {
        let mut off = F::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[p * n + q] * m[p * n + q];
            }
        }
        if off <= eps {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == F::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (F::cast(2.0) * apq);
                // tan of the rotation angle, the root smaller in magnitude
                let t = {
                    let sign = if theta >= F::zero() { F::one() } else { -F::one() };
                    sign / (theta.abs() + (F::one() + theta * theta).sqrt())
                };
                let c = F::one() / (F::one() + t * t).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let values = (0..n).map(|i| m[i * n + i]).collect();
    (values, v)
}

/// `a (d x d) * b (d x n)`, row-major.
pub(crate) fn matmul<F: Scalar>(a: &[F], b: &[F], d: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); d * n];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            let brow = &b[k * n..(k + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reconstruct(vals: &[f64], vecs: &[f64], n: usize) -> Vec<f64> {
        // A = V diag(vals) V^T
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += vecs[i * n + k] * vals[k] * vecs[j * n + k];
                }
                out[i * n + j] = acc;
            }
        }
        out
    }

    #[test]
    fn decomposes_known_2x2() {
        // eigenvalues of [[2,1],[1,2]] are 1 and 3
        let a = [2.0f64, 1.0, 1.0, 2.0];
        let (vals, vecs) = jacobi_eigh(&a, 2);
        let mut sorted = vals.clone();
        sorted.sort_by(|x, y| x.partial_cmp(y).unwrap());
        assert!((sorted[0] - 1.0).abs() < 1e-12);
        assert!((sorted[1] - 3.0).abs() < 1e-12);
        let r = reconstruct(&vals, &vecs, 2);
        for (x, y) in r.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn eigenvectors_are_orthonormal() {
        let a = [
            4.0f64, 1.0, 0.5, //
            1.0, 3.0, -0.25, //
            0.5, -0.25, 2.0,
        ];
        let (_, v) = jacobi_eigh(&a, 3);
        for c1 in 0..3 {
            for c2 in 0..3 {
                let dot: f64 = (0..3).map(|r| v[r * 3 + c1] * v[r * 3 + c2]).sum();
                let expected = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "cols {c1},{c2}: {dot}");
            }
        }
    }
}
