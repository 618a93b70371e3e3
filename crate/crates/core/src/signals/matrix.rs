//! The d x T signal matrix: rows are signals, columns are time points (or
//! flattened pixel indices). One type carries sources, observations and
//! recovered signals alike.

use super::SignalError;
use crate::scalar::Scalar;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SignalMatrix<F> {
    d: usize,
    t_len: usize,
    values: Vec<F>,
}

impl<F: Scalar> SignalMatrix<F> {
    pub fn zeros(d: usize, t_len: usize) -> Self {
        assert!(d >= 1 && t_len >= 1, "signal matrix must be at least 1x1");
        SignalMatrix {
            d,
            t_len,
            values: vec![F::zero(); d * t_len],
        }
    }

    pub fn from_rows(rows: Vec<Vec<F>>) -> Result<Self, SignalError> {
        if rows.is_empty() {
            return Err(SignalError::InvalidConfig("no signal rows".into()));
        }
        let t_len = rows[0].len();
        if t_len == 0 {
            return Err(SignalError::InvalidConfig("empty signal row".into()));
        }
        let d = rows.len();
        let mut values = Vec::with_capacity(d * t_len);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != t_len {
                return Err(SignalError::DimMismatch {
                    what: "row length",
                    expected: t_len,
                    found: row.len(),
                });
            }
            let _ = i;
            values.extend(row);
        }
        Ok(SignalMatrix { d, t_len, values })
    }

    pub fn from_flat(d: usize, t_len: usize, values: Vec<F>) -> Result<Self, SignalError> {
        if values.len() != d * t_len {
            return Err(SignalError::DimMismatch {
                what: "flat buffer",
                expected: d * t_len,
                found: values.len(),
            });
        }
        Ok(SignalMatrix { d, t_len, values })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn values(&self) -> &[F] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [F] {
        &mut self.values
    }

    pub fn row(&self, i: usize) -> &[F] {
        &self.values[i * self.t_len..(i + 1) * self.t_len]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [F] {
        &mut self.values[i * self.t_len..(i + 1) * self.t_len]
    }

    pub fn get(&self, i: usize, t: usize) -> F {
        self.values[i * self.t_len + t]
    }

    pub fn set(&mut self, i: usize, t: usize, v: F) {
        self.values[i * self.t_len + t] = v;
    }

    pub fn column(&self, t: usize) -> Vec<F> {
        (0..self.d).map(|i| self.get(i, t)).collect()
    }

    pub fn set_column(&mut self, t: usize, col: &[F]) {
        debug_assert_eq!(col.len(), self.d);
        for (i, &v) in col.iter().enumerate() {
            self.set(i, t, v);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Per-row mean/std standardization. Returns the standardized matrix and
    /// the affine map needed to report results back in input scale.
    pub fn standardize_rows(&self) -> (Self, RowAffine<F>) {
        let mut out = self.clone();
        let mut means = Vec::with_capacity(self.d);
        let mut stds = Vec::with_capacity(self.d);
        let n = F::cast(self.t_len as f64);
        for i in 0..self.d {
            let row = out.row_mut(i);
            let mut mean = F::zero();
            for &v in row.iter() {
                mean += v;
            }
            mean /= n;
            let mut var = F::zero();
            for &v in row.iter() {
                let c = v - mean;
                var += c * c;
            }
            var /= n;
            let std = var.sqrt();
            let denom = if std > F::zero() { std } else { F::one() };
            for v in row.iter_mut() {
                *v = (*v - mean) / denom;
            }
            means.push(mean);
            stds.push(denom);
        }
        (out, RowAffine { means, stds })
    }

    // ── CSV interface ──────────────────────────────────────────────
    // Header line `# d=<d> T=<T>`; extra `#`-lines carry provenance and are
    // skipped on read; then one comma-separated line per signal row.

    pub fn to_csv_string(&self, extra_comments: &[String]) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# d={} T={}", self.d, self.t_len);
        for c in extra_comments {
            let _ = writeln!(s, "# {c}");
        }
        for i in 0..self.d {
            let row = self.row(i);
            for (t, v) in row.iter().enumerate() {
                if t > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{}", v.as_f64());
            }
            s.push('\n');
        }
        s
    }

    pub fn write_csv<P: AsRef<Path>>(
        &self,
        path: P,
        extra_comments: &[String],
    ) -> Result<(), SignalError> {
        fs::write(path, self.to_csv_string(extra_comments))?;
        Ok(())
    }

    pub fn read_csv<P: AsRef<Path>>(path: P) -> Result<Self, SignalError> {
        let path_str = path.as_ref().display().to_string();
        let text = fs::read_to_string(&path)?;
        Self::from_csv_str(&text, &path_str)
    }

    pub fn from_csv_str(text: &str, path: &str) -> Result<Self, SignalError> {
        let csv_err = |line: usize, msg: String| SignalError::Csv {
            path: path.to_string(),
            line,
            msg,
        };
        let mut lines = text.lines().enumerate();
        let (first_no, first) = lines
            .next()
            .ok_or_else(|| csv_err(1, "empty file".into()))?;
        let header = first.trim();
        let rest = header
            .strip_prefix('#')
            .ok_or_else(|| csv_err(first_no + 1, format!("expected `# d=<d> T=<T>` header, found `{header}`")))?
            .trim();
        let mut d: Option<usize> = None;
        let mut t_len: Option<usize> = None;
        for tok in rest.split_whitespace() {
            if let Some(v) = tok.strip_prefix("d=") {
                d = v.parse().ok();
            } else if let Some(v) = tok.strip_prefix("T=") {
                t_len = v.parse().ok();
            }
        }
        let (d, t_len) = match (d, t_len) {
            (Some(d), Some(t)) if d >= 1 && t >= 1 => (d, t),
            _ => {
                return Err(csv_err(
                    first_no + 1,
                    format!("expected `# d=<d> T=<T>` header, found `{header}`"),
                ))
            }
        };
        let mut rows: Vec<Vec<F>> = Vec::with_capacity(d);
        for (no, line) in lines {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut row = Vec::with_capacity(t_len);
            for cell in line.split(',') {
                let v: f64 = cell.trim().parse().map_err(|_| {
                    csv_err(no + 1, format!("bad number `{}`", cell.trim()))
                })?;
                row.push(F::cast(v));
            }
            if row.len() != t_len {
                return Err(csv_err(
                    no + 1,
                    format!("expected {t_len} values, found {}", row.len()),
                ));
            }
            rows.push(row);
        }
        if rows.len() != d {
            return Err(csv_err(
                0,
                format!("expected {d} rows, found {}", rows.len()),
            ));
        }
        Self::from_rows(rows)
    }
}

/// Joint PCA whitening `z = M (x - mean)` with the stored inverse map.
/// Rows are centered and scale-normalized before the covariance
/// eigendecomposition so deeply mixed (near-collinear) inputs stay well
/// conditioned.
#[derive(Debug, Clone, PartialEq)]
pub struct WhitenMap<F> {
    pub means: Vec<F>,
    /// Row-major d x d forward map.
    pub matrix: Vec<F>,
    /// Row-major d x d inverse map.
    pub inverse: Vec<F>,
}

impl<F: Scalar> WhitenMap<F> {
    fn apply(&self, m: &SignalMatrix<F>, matrix: &[F], center: bool) -> SignalMatrix<F> {
        let d = m.d();
        let t_len = m.t_len();
        let mut out = SignalMatrix::zeros(d, t_len);
        for t in 0..t_len {
            for i in 0..d {
                let mut acc = F::zero();
                for j in 0..d {
                    let x = if center {
                        m.get(j, t) - self.means[j]
                    } else {
                        m.get(j, t)
                    };
                    acc += matrix[i * d + j] * x;
                }
                out.set(i, t, acc);
            }
        }
        out
    }

    pub fn forward(&self, m: &SignalMatrix<F>) -> SignalMatrix<F> {
        self.apply(m, &self.matrix, true)
    }

    pub fn backward(&self, z: &SignalMatrix<F>) -> SignalMatrix<F> {
        let mut out = self.apply(z, &self.inverse, false);
        for i in 0..z.d() {
            let mean = self.means[i];
            for v in out.row_mut(i) {
                *v += mean;
            }
        }
        out
    }
}

/// PCA-whiten the rows: output rows are centered, unit-variance and
/// mutually uncorrelated. Fails on (numerically) rank-deficient inputs.
pub fn whiten_rows<F: Scalar>(
    x: &SignalMatrix<F>,
) -> Result<(SignalMatrix<F>, WhitenMap<F>), SignalError> {
    let d = x.d();
    let t_len = x.t_len();
    let n = F::cast(t_len as f64);
    let mut centered = x.clone();
    let mut means = Vec::with_capacity(d);
    let mut stds = Vec::with_capacity(d);
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
        let std = var.sqrt();
        if !(std.as_f64() > 0.0) {
            return Err(SignalError::RankDeficient {
                value: std.as_f64(),
            });
        }
        for v in row.iter_mut() {
            *v /= std;
        }
        means.push(mean);
        stds.push(std);
    }
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
    let (vals, vecs) = crate::linalg::jacobi_eigh(&cov, d);
    let max_val = vals
        .iter()
        .fold(F::zero(), |a, &b| if b > a { b } else { a });
    let mut matrix = vec![F::zero(); d * d];
    let mut inverse = vec![F::zero(); d * d];
    for k in 0..d {
        let v = vals[k];
        if v.as_f64() <= 1e-14 * max_val.as_f64() {
            return Err(SignalError::RankDeficient { value: v.as_f64() });
        }
        let s = v.sqrt();
        for j in 0..d {
            // matrix = D^{-1/2} V^T S^{-1}; inverse = S V D^{1/2}
            matrix[k * d + j] = vecs[j * d + k] / s / stds[j];
            inverse[j * d + k] = stds[j] * vecs[j * d + k] * s;
        }
    }
    let map = WhitenMap {
        means,
        matrix,
        inverse,
    };
    let z = map.forward(x);
    Ok((z, map))
}

/// Stored inverse of a per-row standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct RowAffine<F> {
    pub means: Vec<F>,
    pub stds: Vec<F>,
}

impl<F: Scalar> RowAffine<F> {
    pub fn identity(d: usize) -> Self {
        RowAffine {
            means: vec![F::zero(); d],
            stds: vec![F::one(); d],
        }
    }

    /// Apply the standardization `(x - mean) / std` row-wise.
    pub fn forward(&self, m: &SignalMatrix<F>) -> SignalMatrix<F> {
        let mut out = m.clone();
        for i in 0..m.d() {
            let (mean, std) = (self.means[i], self.stds[i]);
            for v in out.row_mut(i) {
                *v = (*v - mean) / std;
            }
        }
        out
    }

    /// Map standardized values back to input scale.
    pub fn inverse(&self, m: &SignalMatrix<F>) -> SignalMatrix<F> {
        let mut out = m.clone();
        for i in 0..m.d() {
            let (mean, std) = (self.means[i], self.stds[i]);
            for v in out.row_mut(i) {
                *v = *v * std + mean;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip_is_exact() {
        let m = SignalMatrix::from_rows(vec![
            vec![1.0f64, -2.5e-7, std::f64::consts::PI],
            vec![0.0, 1e100, -3.25],
        ])
        .unwrap();
        let text = m.to_csv_string(&["config: seed=1".into()]);
        let back: SignalMatrix<f64> = SignalMatrix::from_csv_str(&text, "mem").unwrap();
        assert_eq!(m, back);
        // Re-serialization is byte-identical.
        assert_eq!(text, back.to_csv_string(&["config: seed=1".into()]));
    }

    #[test]
    fn csv_header_errors_name_line() {
        let err = SignalMatrix::<f64>::from_csv_str("1,2,3\n", "x.csv").unwrap_err();
        match err {
            SignalError::Csv { path, line, .. } => {
                assert_eq!(path, "x.csv");
                assert_eq!(line, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_bad_cell_reports_line() {
        let text = "# d=1 T=3\n1,zap,3\n";
        let err = SignalMatrix::<f64>::from_csv_str(text, "y.csv").unwrap_err();
        match err {
            SignalError::Csv { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("zap"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn standardize_then_inverse_recovers_input() {
        let m = SignalMatrix::from_rows(vec![vec![1.0f64, 2.0, 3.0, 4.0], vec![-5.0, 0.0, 5.0, 10.0]])
            .unwrap();
        let (z, affine) = m.standardize_rows();
        for i in 0..2 {
            let row = z.row(i);
            let mean: f64 = row.iter().sum::<f64>() / 4.0;
            let var: f64 = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 4.0;
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-12);
        }
        let back = affine.inverse(&z);
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-12);
        }
        // forward replays the same map exactly
        assert_eq!(affine.forward(&m), z);
    }

    #[test]
    fn constant_row_standardizes_to_zero() {
        let m = SignalMatrix::from_rows(vec![vec![3.0f64; 5]]).unwrap();
        let (z, _) = m.standardize_rows();
        assert!(z.row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn whitening_decorrelates_and_inverts() {
        let m = SignalMatrix::from_rows(vec![
            vec![1.0f64, 2.0, 4.0, 3.0, -1.0, 0.5, 2.5, -2.0],
            vec![1.1, 2.2, 3.7, 3.2, -0.9, 0.4, 2.8, -1.7],
        ])
        .unwrap();
        let (z, map) = whiten_rows(&m).unwrap();
        let n = z.t_len() as f64;
        for i in 0..2 {
            for j in i..2 {
                let dot: f64 = z.row(i).iter().zip(z.row(j)).map(|(a, b)| a * b).sum::<f64>() / n;
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expected).abs() < 1e-10, "cov[{i}][{j}] = {dot}");
            }
        }
        let back = map.backward(&z);
        for (a, b) in m.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn whitening_rejects_duplicated_rows() {
        let m = SignalMatrix::from_rows(vec![vec![1.0f64, 2.0, 3.0], vec![1.0, 2.0, 3.0]])
            .unwrap();
        assert!(matches!(
            whiten_rows(&m),
            Err(SignalError::RankDeficient { .. })
        ));
    }
}
