//! Symmetric fixed-point FastICA with the logcosh contrast.
//!
//! Rows are centered, whitened through an eigendecomposition of the
//! covariance, then all components are updated in parallel with
//! `w <- E[x g(w'x)] - E[g'(w'x)] w`, `g = tanh`, followed by symmetric
//! orthogonalization. Initialization is an internally seeded random
//! orthonormal matrix, so the whole routine is a pure function of its input.

use crate::linalg::{jacobi_eigh, matmul};
use super::EvalError;
use crate::rng::{normal_f64, SeedSplitter};
use crate::scalar::Scalar;
use crate::signals::SignalMatrix;

const INIT_SEED: u64 = 0x51CA_F457;
const RANK_TOL: f64 = 1e-13;

/// `(M M^T)^{-1/2} M` for a d x d matrix: symmetric orthogonalization.
fn sym_orthogonalize<F: Scalar>(m: &[F], d: usize) -> Result<Vec<F>, EvalError> {
    let mut mmt = vec![F::zero(); d * d];
    for i in 0..d {
        for j in 0..d {
            let mut acc = F::zero();
            for k in 0..d {
                acc += m[i * d + k] * m[j * d + k];
            }
            mmt[i * d + j] = acc;
        }
    }
    let (vals, vecs) = jacobi_eigh(&mmt, d);
    let max_val = vals.iter().fold(F::zero(), |a, &b| a.max(b));
    let mut inv_sqrt = vec![F::zero(); d * d];
    for k in 0..d {
        let v = vals[k];
        if v.as_f64() <= RANK_TOL * max_val.as_f64() {
            return Err(EvalError::RankDeficient { value: v.as_f64() });
        }
        let s = F::one() / v.sqrt();
        for i in 0..d {
            for j in 0..d {
                inv_sqrt[i * d + j] += vecs[i * d + k] * s * vecs[j * d + k];
            }
        }
    }
    Ok(matmul(&inv_sqrt, m, d, d))
}

/// Recover independent rows from a linear mixture.
pub fn fastica<F: Scalar>(
    x: &SignalMatrix<F>,
    max_iter: usize,
    tol: f64,
) -> Result<SignalMatrix<F>, EvalError> {
    let d = x.d();
    let t_len = x.t_len();
    if d > t_len {
        return Err(EvalError::TooFewSamples { d, t_len });
    }
    let n = F::cast(t_len as f64);

    // center rows and bring them to unit scale; deep mixing can spread row
    // magnitudes over many orders, which wrecks the covariance conditioning
    let mut centered = x.clone();
    for i in 0..d {
        let row = centered.row_mut(i);
        let mut mean = F::zero();
        for &v in row.iter() {
            mean += v;
        }
        mean /= n;
        let mut var = F::zero();
        for v in row.iter_mut() {
            *v -= mean;
            var += *v * *v;
        }
        var /= n;
        if var.as_f64() > 0.0 {
            let inv_std = F::one() / var.sqrt();
            for v in row.iter_mut() {
                *v *= inv_std;
            }
        }
    }

    // whiten via the covariance eigendecomposition
    let mut cov = vec![F::zero(); d * d];
    for i in 0..d {
        for j in i..d {
            let mut acc = F::zero();
            for (a, b) in centered.row(i).iter().zip(centered.row(j)) {
                acc += *a * *b;
            }
            cov[i * d + j] = acc / n;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let (vals, vecs) = jacobi_eigh(&cov, d);
    let max_val = vals.iter().fold(F::zero(), |a, &b| a.max(b));
    if max_val.as_f64() <= 0.0 {
        return Err(EvalError::RankDeficient { value: 0.0 });
    }
    let mut whitener = vec![F::zero(); d * d]; // D^{-1/2} V^T
    for k in 0..d {
        let v = vals[k];
        if v.as_f64() <= RANK_TOL * max_val.as_f64() {
            return Err(EvalError::RankDeficient { value: v.as_f64() });
        }
        let s = F::one() / v.sqrt();
        for j in 0..d {
            whitener[k * d + j] = s * vecs[j * d + k];
        }
    }
    let white = matmul(&whitener, centered.values(), d, t_len);
    if d == 1 {
        return SignalMatrix::from_flat(d, t_len, white).map_err(|_| EvalError::DimMismatch {
            what: "whitened buffer",
            expected: t_len,
            found: 0,
        });
    }

    // deterministic random orthonormal start
    let sp = SeedSplitter::new(INIT_SEED);
    let mut rng = sp.stream(d as u64);
    let init: Vec<F> = (0..d * d)
        .map(|_| F::cast(normal_f64(&mut rng)))
        .collect();
    let w = fixed_point(&white, init, d, t_len, max_iter, tol)?;

    let sources = matmul(&w, &white, d, t_len);
    SignalMatrix::from_flat(d, t_len, sources).map_err(|_| EvalError::DimMismatch {
        what: "recovered buffer",
        expected: d * t_len,
        found: 0,
    })
}

fn fixed_point<F: Scalar>(
    white: &[F],
    init: Vec<F>,
    d: usize,
    t_len: usize,
    max_iter: usize,
    tol: f64,
) -> Result<Vec<F>, EvalError> {
    let n = F::cast(t_len as f64);
    let mut w = sym_orthogonalize(&init, d)?;
    for _iter in 0..max_iter {
        let proj = matmul(&w, white, d, t_len); // y_i = w_i^T x
        let mut w_new = vec![F::zero(); d * d];
        for i in 0..d {
            let y = &proj[i * t_len..(i + 1) * t_len];
            let mut mean_gprime = F::zero();
            let mut ex_g = vec![F::zero(); d];
            for (t, &yt) in y.iter().enumerate() {
                let g = yt.tanh();
                mean_gprime += F::one() - g * g;
                for (j, e) in ex_g.iter_mut().enumerate() {
                    *e += white[j * t_len + t] * g;
                }
            }
            mean_gprime /= n;
            for j in 0..d {
                w_new[i * d + j] = ex_g[j] / n - mean_gprime * w[i * d + j];
            }
        }
        let w_next = sym_orthogonalize(&w_new, d)?;
        let mut delta = F::zero();
        for i in 0..d {
            let mut dot = F::zero();
            for j in 0..d {
                dot += w_next[i * d + j] * w[i * d + j];
            }
            delta = delta.max((F::one() - dot.abs()).abs());
        }
        w = w_next;
        if delta.as_f64() < tol {
            break;
        }
    }
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::mcc::{cross_corr, mcc};
    use crate::rng::uniform_f64;
    use crate::signals::{mix, MixActivation, MixConfig};

    fn uniform_sources(d: usize, t_len: usize, seed: u64) -> SignalMatrix<f64> {
        let sp = SeedSplitter::new(seed);
        let rows = (0..d)
            .map(|i| {
                let mut rng = sp.stream(i as u64);
                (0..t_len)
                    .map(|_| uniform_f64(&mut rng, -1.7320508, 1.7320508))
                    .collect()
            })
            .collect();
        SignalMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn separates_linearly_mixed_uniforms() {
        let mut total = 0.0;
        for seed in 0..5 {
            let s = uniform_sources(2, 2048, 100 + seed);
            let cfg = MixConfig::uniform_coupling(2, 1.0, 0.7, 1, MixActivation::Identity);
            let x = mix(&s, &cfg).unwrap();
            let z = fastica(&x, 20_000, 1e-6).unwrap();
            total += mcc(&z, &s).unwrap().mcc;
        }
        let mean = total / 5.0;
        assert!(mean > 0.95, "mean mcc = {mean}");
    }

    #[test]
    fn white_independent_input_passes_through() {
        let s = uniform_sources(2, 4096, 9);
        let z = fastica(&s, 20_000, 1e-6).unwrap();
        let r = mcc(&z, &s).unwrap();
        assert!(r.mcc > 0.98, "mcc = {}", r.mcc);
    }

    #[test]
    fn output_rows_are_uncorrelated() {
        let s = uniform_sources(3, 2048, 11);
        let cfg = MixConfig::uniform_coupling(3, 1.0, 0.5, 1, MixActivation::Identity);
        let x = mix(&s, &cfg).unwrap();
        let z = fastica(&x, 20_000, 1e-6).unwrap();
        assert!(cross_corr(&z).unwrap() < 1e-3);
    }

    #[test]
    fn single_row_is_identity_up_to_scale() {
        let s = uniform_sources(1, 512, 13);
        let z = fastica(&s, 100, 1e-6).unwrap();
        let r = mcc(&z, &s).unwrap();
        assert!((r.mcc - 1.0).abs() < 1e-9);
    }

    #[test]
    fn duplicated_rows_are_rank_deficient() {
        let s = uniform_sources(1, 256, 15);
        let dup = SignalMatrix::from_rows(vec![s.row(0).to_vec(), s.row(0).to_vec()]).unwrap();
        assert!(matches!(
            fastica(&dup, 100, 1e-6),
            Err(EvalError::RankDeficient { .. })
        ));
    }

    #[test]
    fn deterministic_given_input() {
        let s = uniform_sources(2, 512, 21);
        let cfg = MixConfig::uniform_coupling(2, 1.0, 0.7, 1, MixActivation::Identity);
        let x = mix(&s, &cfg).unwrap();
        let a = fastica(&x, 500, 1e-6).unwrap();
        let b = fastica(&x, 500, 1e-6).unwrap();
        assert_eq!(a, b);
    }
}
