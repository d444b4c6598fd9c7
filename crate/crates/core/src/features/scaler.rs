use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-column standardization with population statistics. Columns without
/// spread are flagged constant and passed through unchanged.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Scaler {
    /// Fits on row-major `data` with `n_cols` columns.
    pub fn fit(data: &[f64], n_cols: usize) -> Result<Self> {
        if n_cols == 0 || data.is_empty() {
            return Err(Error::InsufficientData("scaler needs data".into()));
        }
        if !data.len().is_multiple_of(n_cols) {
            return Err(Error::DimensionMismatch { expected: n_cols, got: data.len() % n_cols });
        }
        let n = data.len() / n_cols;
        if n < 2 {
            return Err(Error::InsufficientData("scaler needs at least two rows".into()));
        }
        let mut mean = vec![0.0; n_cols];
        for row in data.chunks_exact(n_cols) {
            for (m, x) in mean.iter_mut().zip(row) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; n_cols];
        for row in data.chunks_exact(n_cols) {
            for ((v, x), m) in var.iter_mut().zip(row).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let mut std = Vec::with_capacity(n_cols);
        let mut constant = Vec::with_capacity(n_cols);
        for (v, m) in var.iter().zip(&mean) {
            let s = (v / n as f64).sqrt();
            let flat = !(s > 1e-12 * (1.0 + m.abs()));
            constant.push(flat);
            std.push(if flat { 1.0 } else { s });
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidParameter("non-finite values in scaler input".into()));
        }
        Ok(Self { mean, std, constant })
    }

    /// Fits on `(Δi_p, Δi_q)` target pairs.
    pub fn fit_targets(targets: &[[f64; 2]]) -> Result<Self> {
        let flat: Vec<f64> = targets.iter().flat_map(|t| t.iter().copied()).collect();
        Self::fit(&flat, 2)
    }

    pub fn n_cols(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_value(&self, j: usize, x: f64) -> f64 {
        if self.constant[j] {
            x
        } else {
            (x - self.mean[j]) / self.std[j]
        }
    }

    pub fn invert_value(&self, j: usize, z: f64) -> f64 {
        if self.constant[j] {
            z
        } else {
            z * self.std[j] + self.mean[j]
        }
    }

    pub fn apply(&self, row: &mut [f64]) {
        for (j, x) in row.iter_mut().enumerate() {
            *x = self.apply_value(j, *x);
        }
    }

    pub fn invert(&self, row: &mut [f64]) {
        for (j, z) in row.iter_mut().enumerate() {
            *z = self.invert_value(j, *z);
        }
    }

    /// Standardized copy of row-major data.
    pub fn transform(&self, data: &[f64]) -> Vec<f64> {
        let mut out = data.to_vec();
        for row in out.chunks_exact_mut(self.n_cols()) {
            self.apply(row);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn population_standardization() {
        let s = Scaler::fit(&[1.0, 2.0, 3.0], 1).unwrap();
        let z: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|&x| s.apply_value(0, x)).collect();
        let k = 1.5f64.sqrt();
        assert!((z[0] + k).abs() < 1e-12 && z[1].abs() < 1e-12 && (z[2] - k).abs() < 1e-12);
        assert!((k - 1.2247).abs() < 1e-4);
    }

    #[test]
    fn constant_column_passes_through() {
        let s = Scaler::fit(&[1.0, 4.0, 2.0, 4.0, 3.0, 4.0], 2).unwrap();
        assert_eq!(s.constant, vec![false, true]);
        assert_eq!(s.apply_value(1, 4.0), 4.0);
        assert_eq!(s.apply_value(1, 7.5), 7.5);
    }

    #[test]
    fn round_trip() {
        let data = [0.3, -1.0, 2.5, 8.0, -4.0, 1e-3, 7.0, 2.0, 0.0];
        let s = Scaler::fit(&data, 3).unwrap();
        let mut z = s.transform(&data);
        for row in z.chunks_exact_mut(3) {
            s.invert(row);
        }
        for (a, b) in z.iter().zip(&data) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn empty_or_single_row_refused() {
        assert!(Scaler::fit(&[], 1).is_err());
        assert!(Scaler::fit(&[1.0, 2.0], 2).is_err());
    }
}
