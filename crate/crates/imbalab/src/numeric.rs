//! Dense row-major matrices and numerically stable softmax machinery.
//!
//! Everything downstream shares one convention: matrices are N×C with rows
//! as samples and columns as classes, and all arithmetic is f64.

use crate::error::{Error, Result};

/// Dense row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    data: Vec<f64>,
    rows: usize,
    cols: usize,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            data: vec![0.0; rows * cols],
            rows,
            cols,
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::invalid_input(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Matrix { data, rows, cols })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Selects the given rows into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Matrix {
        let mut out = Matrix::zeros(indices.len(), self.cols);
        for (i, &r) in indices.iter().enumerate() {
            out.row_mut(i).copy_from_slice(self.row(r));
        }
        out
    }

    /// self (R×K) · other (K×C) -> R×C.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let out_row = out.row_mut(r);
                for c in 0..other.cols {
                    out_row[c] += a * orow[c];
                }
            }
        }
        out
    }

    /// selfᵀ (K×R) · other (R×C) -> K×C, without materializing the transpose.
    pub fn transpose_matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "transpose_matmul shape mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for r in 0..self.rows {
            let srow = self.row(r);
            let orow = other.row(r);
            for k in 0..self.cols {
                let a = srow[k];
                if a == 0.0 {
                    continue;
                }
                let out_row = out.row_mut(k);
                for c in 0..other.cols {
                    out_row[c] += a * orow[c];
                }
            }
        }
        out
    }

    /// self (R×C) · otherᵀ (C×K as K×C) -> R×K.
    pub fn matmul_transpose(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_transpose shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let srow = self.row(r);
            for k in 0..other.rows {
                let orow = other.row(k);
                let mut acc = 0.0;
                for c in 0..self.cols {
                    acc += srow[c] * orow[c];
                }
                out.set(r, k, acc);
            }
        }
        out
    }

    /// Adds a length-C vector to every row.
    pub fn add_row_vector(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.cols);
        for r in 0..self.rows {
            for (x, b) in self.row_mut(r).iter_mut().zip(v) {
                *x += b;
            }
        }
    }

    /// Per-column sums, a length-C vector.
    pub fn column_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (acc, x) in out.iter_mut().zip(self.row(r)) {
                *acc += x;
            }
        }
        out
    }
}

/// Pre-softmax scores, N×C. Guaranteed finite with N ≥ 1, C ≥ 2.
#[derive(Debug, Clone)]
pub struct LogitsBatch(Matrix);

impl LogitsBatch {
    pub fn new(values: Matrix) -> Result<Self> {
        if values.rows() < 1 || values.cols() < 2 {
            return Err(Error::invalid_input(format!(
                "logits must be N>=1 by C>=2, got {}x{}",
                values.rows(),
                values.cols()
            )));
        }
        if !values.is_finite() {
            return Err(Error::invalid_input("logits contain non-finite entries"));
        }
        Ok(LogitsBatch(values))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn samples(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }
}

/// Row-stochastic class probabilities, N×C.
#[derive(Debug, Clone)]
pub struct ProbBatch(Matrix);

impl ProbBatch {
    pub fn new(values: Matrix) -> Result<Self> {
        for r in 0..values.rows() {
            let mut sum = 0.0;
            for &p in values.row(r) {
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::invalid_input(format!(
                        "probability {p} outside [0,1] in row {r}"
                    )));
                }
                sum += p;
            }
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::invalid_input(format!(
                    "row {r} sums to {sum}, not 1"
                )));
            }
        }
        Ok(ProbBatch(values))
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn samples(&self) -> usize {
        self.0.rows()
    }

    pub fn classes(&self) -> usize {
        self.0.cols()
    }

    /// Argmax prediction per row; ties resolve to the lowest class index.
    pub fn argmax_predictions(&self) -> Vec<usize> {
        (0..self.0.rows())
            .map(|r| {
                let row = self.0.row(r);
                let mut best = 0;
                for (c, &p) in row.iter().enumerate().skip(1) {
                    if p > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect()
    }
}

/// Row-wise softmax with max subtraction, so any finite logits are safe.
pub fn softmax(logits: &LogitsBatch) -> ProbBatch {
    let m = logits.matrix();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let out_row = out.row_mut(r);
        let mut sum = 0.0;
        for (o, &z) in out_row.iter_mut().zip(row) {
            *o = (z - max).exp();
            sum += *o;
        }
        for o in out_row.iter_mut() {
            *o /= sum;
        }
    }
    ProbBatch(out)
}

/// Row-wise log(softmax) via log-sum-exp; equals `softmax(...).ln()` but
/// stays exact for dominant logits where the direct composition underflows.
pub fn log_softmax(logits: &LogitsBatch) -> Matrix {
    let m = logits.matrix();
    let mut out = Matrix::zeros(m.rows(), m.cols());
    for r in 0..m.rows() {
        let row = m.row(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
        for (o, &z) in out.row_mut(r).iter_mut().zip(row) {
            *o = z - lse;
        }
    }
    out
}

/// Default step for [`finite_difference_gradient`] on O(1)-scaled parameters.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Central-difference gradient estimate of a scalar function: component i is
/// (f(x + h·e_i) − f(x − h·e_i)) / 2h.
pub fn finite_difference_gradient<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid_input(format!("step h must be > 0, got {h}")));
    }
    let mut point = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        point[i] = x[i] + h;
        let plus = f(&point);
        point[i] = x[i] - h;
        let minus = f(&point);
        point[i] = x[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::OracleFailure(format!(
                "non-finite evaluation near coordinate {i}: f+={plus}, f-={minus}"
            )));
        }
        grad.push((plus - minus) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn logits_from(rows: usize, cols: usize, data: Vec<f64>) -> LogitsBatch {
        LogitsBatch::new(Matrix::from_vec(rows, cols, data).unwrap()).unwrap()
    }

    #[test]
    fn softmax_symmetric_logits() {
        let p = softmax(&logits_from(1, 2, vec![0.0, 0.0]));
        assert_eq!(p.matrix().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_closed_form() {
        let p = softmax(&logits_from(1, 2, vec![2.0_f64.ln(), 0.0]));
        assert!((p.matrix().get(0, 0) - 2.0 / 3.0).abs() < 1e-15);
        assert!((p.matrix().get(0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_no_overflow_for_large_logits() {
        let p = softmax(&logits_from(1, 2, vec![1000.0, 1000.0]));
        assert_eq!(p.matrix().row(0), &[0.5, 0.5]);
    }

    #[test]
    fn softmax_shift_invariance() {
        let mut rng = Rng::new(11);
        for _ in 0..50 {
            let z: Vec<f64> = (0..4).map(|_| rng.uniform(-5.0, 5.0)).collect();
            let shifted: Vec<f64> = z.iter().map(|v| v + 123.456).collect();
            let p = softmax(&logits_from(1, 4, z));
            let q = softmax(&logits_from(1, 4, shifted));
            for c in 0..4 {
                assert!((p.matrix().get(0, c) - q.matrix().get(0, c)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn log_softmax_uniform() {
        let ls = log_softmax(&logits_from(1, 2, vec![0.0, 0.0]));
        assert!((ls.get(0, 0) + 2.0_f64.ln()).abs() < 1e-15);
        assert!((ls.get(0, 1) + 2.0_f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn log_softmax_dominant_logit() {
        let ls = log_softmax(&logits_from(1, 2, vec![1000.0, 0.0]));
        assert!(ls.get(0, 0).abs() < 1e-12);
        assert!((ls.get(0, 1) + 1000.0).abs() < 1e-9);
    }

    #[test]
    fn log_softmax_matches_log_of_softmax() {
        let mut rng = Rng::new(23);
        let z: Vec<f64> = (0..3).map(|_| rng.uniform(-3.0, 3.0)).collect();
        let batch = logits_from(1, 3, z);
        let ls = log_softmax(&batch);
        let p = softmax(&batch);
        for c in 0..3 {
            assert!((ls.get(0, c) - p.matrix().get(0, c).ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn exp_log_softmax_rows_sum_to_one() {
        let mut rng = Rng::new(31);
        for _ in 0..20 {
            let z: Vec<f64> = (0..5).map(|_| rng.uniform(-8.0, 8.0)).collect();
            let ls = log_softmax(&logits_from(1, 5, z));
            let sum: f64 = ls.row(0).iter().map(|&v| v.exp()).sum();
            assert!((sum - 1.0).abs() < 1e-9, "sum = {sum}");
        }
    }

    #[test]
    fn non_finite_logits_rejected() {
        let m = Matrix::from_vec(1, 2, vec![f64::NAN, 0.0]).unwrap();
        assert!(LogitsBatch::new(m).is_err());
        let m = Matrix::from_vec(1, 2, vec![f64::INFINITY, 0.0]).unwrap();
        assert!(LogitsBatch::new(m).is_err());
    }

    #[test]
    fn prob_batch_validates_rows() {
        let bad = Matrix::from_vec(1, 2, vec![0.7, 0.7]).unwrap();
        assert!(ProbBatch::new(bad).is_err());
        let good = Matrix::from_vec(1, 2, vec![0.25, 0.75]).unwrap();
        assert!(ProbBatch::new(good).is_ok());
    }

    #[test]
    fn fd_quadratic() {
        let grad = finite_difference_gradient(|x| x[0] * x[0], &[3.0], 1e-4).unwrap();
        assert!((grad[0] - 6.0).abs() < 1e-6, "grad = {}", grad[0]);
    }

    #[test]
    fn fd_constant_is_zero() {
        let grad = finite_difference_gradient(|_| 42.0, &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert_eq!(grad, vec![0.0, 0.0, 0.0]);
    }

    #[test]
    fn fd_polynomial_second_order_accuracy() {
        // f(x) = x^3 has f'(2) = 12 with truncation error h^2 * f'''/6 = h^2.
        for &h in &[1e-2, 1e-3] {
            let grad = finite_difference_gradient(|x| x[0].powi(3), &[2.0], h).unwrap();
            let err = (grad[0] - 12.0).abs();
            assert!(err < 2.5 * h * h, "h={h} err={err}");
        }
    }

    #[test]
    fn fd_rejects_bad_step() {
        assert!(finite_difference_gradient(|x| x[0], &[1.0], 0.0).is_err());
        assert!(finite_difference_gradient(|x| x[0], &[1.0], -1e-5).is_err());
    }

    #[test]
    fn fd_reports_non_finite_evaluations() {
        let err = finite_difference_gradient(|x| x[0].ln(), &[0.0], 1e-5);
        assert!(matches!(err, Err(crate::error::Error::OracleFailure(_))));
    }

    #[test]
    fn matmul_and_transposes_agree_with_hand_counts() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
        let ab = a.matmul(&b);
        assert_eq!(ab.as_slice(), &[58.0, 64.0, 139.0, 154.0]);

        // aᵀ·ab respects shapes (3x2)·? -> use transpose_matmul(a, ab): 3x2.
        let at_ab = a.transpose_matmul(&ab);
        assert_eq!(at_ab.rows(), 3);
        assert_eq!(at_ab.cols(), 2);
        // First entry: column 0 of a dot column 0 of ab.
        assert_eq!(at_ab.get(0, 0), 1.0 * 58.0 + 4.0 * 139.0);

        // a·bᵀ where b is reinterpreted as 3 rows of length 2 -> needs cols match.
        let c = Matrix::from_vec(2, 3, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let act = a.matmul_transpose(&c);
        assert_eq!(act.rows(), 2);
        assert_eq!(act.cols(), 2);
        assert_eq!(act.get(0, 0), 1.0 + 3.0);
        assert_eq!(act.get(1, 1), 5.0);
    }

    #[test]
    fn argmax_ties_break_low() {
        let p = ProbBatch::new(Matrix::from_vec(1, 3, vec![0.4, 0.4, 0.2]).unwrap()).unwrap();
        assert_eq!(p.argmax_predictions(), vec![0]);
    }
}
