//! Small dense row-major matrices with compensated accumulation.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Neumaier-compensated sum.
pub fn compensated_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0_f64;
    let mut comp = 0.0_f64;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Formats a float with 17 significant digits.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(m: usize) -> Self {
        let mut out = Matrix::zeros(m, m);
        for i in 0..m {
            out.data[i * m + i] = 1.0;
        }
        out
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if r == 0 || c == 0 {
            return Err(Error::InvalidModel("empty matrix".into()));
        }
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::InvalidModel("ragged matrix rows".into()));
        }
        Ok(Matrix { rows: r, cols: c, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|i| compensated_sum(self.row(i).iter().copied())).collect()
    }

    /// True when entries are nonnegative and every row sums to one within `tol`.
    pub fn is_stochastic(&self, tol: f64) -> bool {
        self.data.iter().all(|&v| v >= 0.0 && v.is_finite())
            && self.row_sums().iter().all(|s| (s - 1.0).abs() <= tol)
    }

    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul dimension mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for j in 0..other.cols {
                let v = compensated_sum((0..self.cols).map(|l| self.get(i, l) * other.get(l, j)));
                out.set(i, j, v);
            }
        }
        out
    }

    /// Row vector times matrix: `(v^T A)_j`.
    pub fn left_mul(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.rows, "left_mul dimension mismatch");
        (0..self.cols)
            .map(|j| compensated_sum((0..self.rows).map(|i| v[i] * self.get(i, j))))
            .collect()
    }

    /// Matrix times column vector: `(A f)_i`.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.cols, "apply dimension mismatch");
        (0..self.rows)
            .map(|i| compensated_sum(self.row(i).iter().zip(f).map(|(a, b)| a * b)))
            .collect()
    }

    /// Multiplies row `i` by `scale[i]`.
    pub fn scale_rows(&self, scale: &[f64]) -> Matrix {
        assert_eq!(scale.len(), self.rows);
        let mut out = self.clone();
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i * self.cols + j] *= scale[i];
            }
        }
        out
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    /// Row-major CSV, 17 significant digits, one matrix row per line.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.rows {
            let line: Vec<String> = self.row(i).iter().map(|&v| fmt_f64(v)).collect();
            let _ = writeln!(out, "{}", line.join(","));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<f64>()
                            .map_err(|e| Error::InvalidModel(format!("bad matrix entry {c:?}: {e}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Matrix::from_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn compensated_sum_recovers_cancellation() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
    }

    #[test]
    fn matmul_small() {
        let a = Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![0.5, 0.0], vec![1.0, 1.0]]).unwrap();
        let c = a.matmul(&b);
        assert_eq!(c, Matrix::from_rows(vec![vec![2.5, 2.0], vec![5.5, 4.0]]).unwrap());
        assert_eq!(a.left_mul(&[1.0, 1.0]), vec![4.0, 6.0]);
        assert_eq!(a.apply(&[1.0, 1.0]), vec![3.0, 7.0]);
    }

    #[test]
    fn csv_is_bit_exact() {
        let a = Matrix::from_rows(vec![vec![0.1, 1.0 / 3.0], vec![std::f64::consts::PI, 1e-300]]).unwrap();
        let back = Matrix::from_csv(&a.to_csv()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn ragged_rejected() {
        assert!(Matrix::from_rows(vec![vec![1.0], vec![1.0, 2.0]]).is_err());
    }
}
