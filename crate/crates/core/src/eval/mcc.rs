//! Mean correlation coefficient with optimal component assignment.
//!
//! ICA recovers components only up to permutation, sign and per-row scale,
//! so the score uses absolute Pearson correlations and searches over the
//! assignment that maximizes the mean: exhaustively for d <= 8, via the
//! Hungarian algorithm beyond that.

use super::EvalError;
use crate::scalar::Scalar;
use crate::signals::SignalMatrix;
use serde::Serialize;

#[derive(Debug, Clone, Serialize)]
pub struct MccResult {
    pub mcc: f64,
    /// `assignment[i]` is the recovered row matched to source row `i`.
    pub assignment: Vec<usize>,
    /// `abs_corr[r][s]` = |corr(recovered row r, source row s)|.
    pub abs_corr: Vec<Vec<f64>>,
}

fn row_stats<F: Scalar>(row: &[F]) -> (f64, f64) {
    let n = row.len() as f64;
    let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / n;
    let var = row
        .iter()
        .map(|v| (v.as_f64() - mean).powi(2))
        .sum::<f64>()
        / n;
    (mean, var)
}

fn pearson<F: Scalar>(a: &[F], b: &[F], stats_a: (f64, f64), stats_b: (f64, f64)) -> f64 {
    let n = a.len() as f64;
    let mut cov = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x.as_f64() - stats_a.0) * (y.as_f64() - stats_b.0);
    }
    cov / n / (stats_a.1 * stats_b.1).sqrt()
}

/// Exhaustive search over assignments (Heap's algorithm), d <= 8.
fn best_assignment_exhaustive(matrix: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let d = matrix.len();
    let mut perm: Vec<usize> = (0..d).collect();
    let mut best_perm = perm.clone();
    let score = |p: &[usize]| -> f64 { p.iter().enumerate().map(|(s, &r)| matrix[r][s]).sum() };
    let mut best = score(&perm);
    let mut c = vec![0usize; d];
    let mut i = 0;
    while i < d {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let s = score(&perm);
            if s > best {
                best = s;
                best_perm = perm.clone();
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    (best / d as f64, best_perm)
}

/// Hungarian algorithm (potentials formulation) on a square min-cost matrix.
/// Returns, for each column, the row assigned to it.
pub(crate) fn hungarian_min(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
    let mut p = vec![0usize; n + 1]; // p[j]: row matched to column j (1-based)
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_of_col = vec![0usize; n];
    for j in 1..=n {
        row_of_col[j - 1] = p[j] - 1;
    }
    row_of_col
}

fn best_assignment_hungarian(matrix: &[Vec<f64>]) -> (f64, Vec<usize>) {
    let d = matrix.len();
    // maximize sum(matrix) == minimize sum(1 - matrix); |corr| <= 1
    let mut cost = vec![0.0f64; d * d];
    for r in 0..d {
        for s in 0..d {
            cost[r * d + s] = 1.0 - matrix[r][s];
        }
    }
    let row_of_col = hungarian_min(&cost, d);
    let mean = row_of_col
        .iter()
        .enumerate()
        .map(|(s, &r)| matrix[r][s])
        .sum::<f64>()
        / d as f64;
    (mean, row_of_col)
}

/// Absolute-correlation matrix between rows of `z` (recovered) and `s`
/// (sources): entry `[r][c]` = |corr(z_r, s_c)|.
pub(crate) fn abs_corr_matrix<F: Scalar>(
    z: &SignalMatrix<F>,
    s: &SignalMatrix<F>,
) -> Result<Vec<Vec<f64>>, EvalError> {
    if z.d() != s.d() {
        return Err(EvalError::DimMismatch {
            what: "signal count",
            expected: s.d(),
            found: z.d(),
        });
    }
    if z.t_len() != s.t_len() {
        return Err(EvalError::DimMismatch {
            what: "sequence length",
            expected: s.t_len(),
            found: z.t_len(),
        });
    }
    let d = z.d();
    let z_stats: Vec<(f64, f64)> = (0..d).map(|i| row_stats(z.row(i))).collect();
    let s_stats: Vec<(f64, f64)> = (0..d).map(|i| row_stats(s.row(i))).collect();
    for (i, st) in z_stats.iter().enumerate() {
        if st.1 <= 0.0 {
            return Err(EvalError::ConstantRow {
                row: i,
                which: "recovered",
            });
        }
    }
    for (i, st) in s_stats.iter().enumerate() {
        if st.1 <= 0.0 {
            return Err(EvalError::ConstantRow {
                row: i,
                which: "sources",
            });
        }
    }
    let mut matrix = vec![vec![0.0f64; d]; d];
    for r in 0..d {
        for c in 0..d {
            matrix[r][c] = pearson(z.row(r), s.row(c), z_stats[r], s_stats[c]).abs();
        }
    }
    Ok(matrix)
}

/// MCC between recovered signals and ground truth under the best assignment.
pub fn mcc<F: Scalar>(z: &SignalMatrix<F>, s: &SignalMatrix<F>) -> Result<MccResult, EvalError> {
    let matrix = abs_corr_matrix(z, s)?;
    let d = matrix.len();
    let (mcc, assignment) = if d <= 8 {
        best_assignment_exhaustive(&matrix)
    } else {
        best_assignment_hungarian(&matrix)
    };
    Ok(MccResult {
        mcc,
        assignment,
        abs_corr: matrix,
    })
}

/// Largest absolute pairwise correlation between distinct rows; 0 for d < 2.
pub fn cross_corr<F: Scalar>(z: &SignalMatrix<F>) -> Result<f64, EvalError> {
    let d = z.d();
    if d < 2 {
        return Ok(0.0);
    }
    let stats: Vec<(f64, f64)> = (0..d).map(|i| row_stats(z.row(i))).collect();
    for (i, st) in stats.iter().enumerate() {
        if st.1 <= 0.0 {
            return Err(EvalError::ConstantRow {
                row: i,
                which: "signals",
            });
        }
    }
    let mut worst: f64 = 0.0;
    for i in 0..d {
        for j in (i + 1)..d {
            worst = worst.max(pearson(z.row(i), z.row(j), stats[i], stats[j]).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_f64, SeedSplitter};

    fn noise_matrix(d: usize, t_len: usize, seed: u64) -> SignalMatrix<f64> {
        let sp = SeedSplitter::new(seed);
        let rows = (0..d)
            .map(|i| {
                let mut rng = sp.stream(i as u64);
                (0..t_len).map(|_| normal_f64(&mut rng)).collect()
            })
            .collect();
        SignalMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn identical_signals_score_one() {
        let s = noise_matrix(3, 200, 1);
        let r = mcc(&s, &s).unwrap();
        assert!((r.mcc - 1.0).abs() < 1e-12);
        assert_eq!(r.assignment, vec![0, 1, 2]);
    }

    #[test]
    fn permutation_and_sign_are_invisible() {
        let s = noise_matrix(3, 200, 2);
        let z = SignalMatrix::from_rows(vec![
            s.row(2).iter().map(|v| -v).collect(),
            s.row(0).to_vec(),
            s.row(1).iter().map(|v| 3.5 * v + 2.0).collect(),
        ])
        .unwrap();
        let r = mcc(&z, &s).unwrap();
        assert!((r.mcc - 1.0).abs() < 1e-12);
        // source 0 -> recovered 1, source 1 -> recovered 2, source 2 -> recovered 0
        assert_eq!(r.assignment, vec![1, 2, 0]);
    }

    #[test]
    fn independent_noise_scores_low() {
        let s = noise_matrix(2, 1024, 3);
        let z = noise_matrix(2, 1024, 999);
        let r = mcc(&z, &s).unwrap();
        assert!(r.mcc < 0.12, "mcc = {}", r.mcc);
    }

    #[test]
    fn constant_row_is_an_error() {
        let s = noise_matrix(2, 50, 4);
        let z =
            SignalMatrix::from_rows(vec![vec![1.0; 50], s.row(1).to_vec()]).unwrap();
        assert!(matches!(
            mcc(&z, &s),
            Err(EvalError::ConstantRow { row: 0, which: "recovered" })
        ));
    }

    #[test]
    fn exhaustive_and_hungarian_agree() {
        let sp = SeedSplitter::new(7);
        for trial in 0..100 {
            let mut rng = sp.stream(trial);
            let d = 2 + (trial % 7) as usize; // 2..=8
            let matrix: Vec<Vec<f64>> = (0..d)
                .map(|_| {
                    (0..d)
                        .map(|_| crate::rng::uniform_f64(&mut rng, 0.0, 1.0))
                        .collect()
                })
                .collect();
            let (me, _) = best_assignment_exhaustive(&matrix);
            let (mh, _) = best_assignment_hungarian(&matrix);
            assert!(
                (me - mh).abs() < 1e-12,
                "trial {trial} d={d}: exhaustive {me} vs hungarian {mh}"
            );
        }
    }

    #[test]
    fn cross_corr_detects_duplicates_and_scaling() {
        let s = noise_matrix(1, 300, 5);
        let dup = SignalMatrix::from_rows(vec![s.row(0).to_vec(), s.row(0).to_vec()]).unwrap();
        assert!((cross_corr(&dup).unwrap() - 1.0).abs() < 1e-12);
        let scaled = SignalMatrix::from_rows(vec![
            s.row(0).to_vec(),
            s.row(0).iter().map(|v| -2.0 * v).collect(),
        ])
        .unwrap();
        assert!((cross_corr(&scaled).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cross_corr_near_zero_for_independent_rows() {
        let z = noise_matrix(2, 4096, 6);
        assert!(cross_corr(&z).unwrap() < 0.06);
    }
}
