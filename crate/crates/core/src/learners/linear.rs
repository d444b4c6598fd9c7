use log::warn;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `y = intercept + coef · x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coef: Vec<f64>,
    pub intercept: f64,
}

impl LinearModel {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

fn check_data(x: &[f64], y: &[f64], n_features: usize) -> Result<usize> {
    if n_features == 0 || x.len() != y.len() * n_features {
        return Err(Error::DimensionMismatch { expected: y.len() * n_features, got: x.len() });
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("non-finite training data".into()));
    }
    Ok(y.len())
}

/// Ordinary least squares on row-major `x`, through Householder QR of the
/// design matrix. A rank-deficient design falls back to the minimum-norm
/// solution from an SVD of the triangular factor.
pub fn fit_least_squares(x: &[f64], y: &[f64], n_features: usize, fit_intercept: bool) -> Result<LinearModel> {
    let n = check_data(x, y, n_features)?;
    let p = n_features + usize::from(fit_intercept);
    if n < p {
        return Err(Error::InsufficientData(format!("{n} rows for {p} unknowns")));
    }
    let a = DMatrix::from_fn(n, p, |i, j| if j < n_features { x[i * n_features + j] } else { 1.0 });
    let qr = a.qr();
    let mut qty = DVector::from_column_slice(y);
    qr.q_tr_mul(&mut qty);
    let qty = qty.rows(0, p).into_owned();
    let r = qr.r();
    let diag_max = r.diagonal().iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let tol = diag_max * 1e-10 * p as f64;
    let full_rank = r.diagonal().iter().all(|d| d.abs() > tol);
    let beta = if full_rank {
        r.solve_upper_triangular(&qty)
            .ok_or_else(|| Error::InvalidParameter("singular triangular factor".into()))?
    } else {
        warn!("least squares: rank-deficient design, using the minimum-norm solution");
        let svd = r.svd(true, true);
        let tol = svd.singular_values.max() * 1e-10 * p as f64;
        svd.solve(&qty, tol).map_err(|e| Error::InvalidParameter(e.into()))?
    };
    Ok(LinearModel {
        coef: beta.iter().take(n_features).copied().collect(),
        intercept: if fit_intercept { beta[n_features] } else { 0.0 },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetReport {
    pub sweeps: usize,
    pub max_change: f64,
    pub converged: bool,
}

/// Settings of the coordinate-descent solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdOptions {
    pub tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for CdOptions {
    fn default() -> Self {
        Self { tolerance: 1e-8, max_sweeps: 100_000 }
    }
}

pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cyclic coordinate descent on
/// `(1/2n) |y - Xb - b0|^2 + alpha rho |b|_1 + alpha (1 - rho)/2 |b|^2`,
/// run on the Gram matrix of the centered data. Returns the model and the
/// objective after every sweep.
pub fn fit_elastic_net(
    x: &[f64],
    y: &[f64],
    n_features: usize,
    alpha: f64,
    rho: f64,
    fit_intercept: bool,
    options: CdOptions,
) -> Result<(LinearModel, Vec<f64>, ElasticNetReport)> {
    let n = check_data(x, y, n_features)?;
    if !(alpha >= 0.0) || !(0.0..=1.0).contains(&rho) {
        return Err(Error::InvalidParameter(format!("elastic net needs alpha >= 0 and rho in [0, 1], got {alpha}, {rho}")));
    }
    if n == 0 {
        return Err(Error::InsufficientData("no rows".into()));
    }
    let p = n_features;
    let nf = n as f64;
    let (x_mean, y_mean) = if fit_intercept {
        let mut m = vec![0.0; p];
        for row in x.chunks_exact(p) {
            for (a, b) in m.iter_mut().zip(row) {
                *a += b;
            }
        }
        m.iter_mut().for_each(|a| *a /= nf);
        (m, y.iter().sum::<f64>() / nf)
    } else {
        (vec![0.0; p], 0.0)
    };
    // Gram matrix and correlations of the centered data, scaled by 1/n.
    let mut gram = vec![0.0; p * p];
    let mut xty = vec![0.0; p];
    let mut yy = 0.0;
    let mut xc = vec![0.0; p];
    for (row, &t) in x.chunks_exact(p).zip(y) {
        for j in 0..p {
            xc[j] = row[j] - x_mean[j];
        }
        let tc = t - y_mean;
        yy += tc * tc;
        for j in 0..p {
            xty[j] += xc[j] * tc;
            let xj = xc[j];
            let g = &mut gram[j * p..j * p + p];
            for k in j..p {
                g[k] += xj * xc[k];
            }
        }
    }
    for j in 0..p {
        for k in j..p {
            gram[j * p + k] /= nf;
            gram[k * p + j] = gram[j * p + k];
        }
        xty[j] /= nf;
    }
    yy /= nf;

    let l1 = alpha * rho;
    let l2 = alpha * (1.0 - rho);
    let objective = |b: &[f64], gb: &[f64]| {
        let quad: f64 = b.iter().zip(gb).map(|(u, v)| u * v).sum();
        let lin: f64 = b.iter().zip(&xty).map(|(u, v)| u * v).sum();
        0.5 * (yy - 2.0 * lin + quad)
            + l1 * b.iter().map(|v| v.abs()).sum::<f64>()
            + 0.5 * l2 * b.iter().map(|v| v * v).sum::<f64>()
    };
    let mut beta = vec![0.0; p];
    // G b, kept current as coefficients change.
    let mut gb = vec![0.0; p];
    let mut trace = Vec::new();
    let mut report = ElasticNetReport { sweeps: 0, max_change: f64::INFINITY, converged: false };
    while report.sweeps < options.max_sweeps {
        report.sweeps += 1;
        let mut max_change = 0.0f64;
        for j in 0..p {
            let gjj = gram[j * p + j];
            let old = beta[j];
            let new = if gjj > 0.0 {
                let z = xty[j] - gb[j] + gjj * old;
                soft_threshold(z, l1) / (gjj + l2)
            } else {
                0.0
            };
            if new != old {
                let d = new - old;
                for k in 0..p {
                    gb[k] += gram[k * p + j] * d;
                }
                beta[j] = new;
                max_change = max_change.max(d.abs());
            }
        }
        trace.push(objective(&beta, &gb));
        report.max_change = max_change;
        if max_change < options.tolerance {
            report.converged = true;
            break;
        }
    }
    if !report.converged {
        warn!(
            "elastic net stopped after {} sweeps with coefficient change {:.3e}",
            report.sweeps, report.max_change
        );
    }
    let intercept = if fit_intercept {
        y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>()
    } else {
        0.0
    };
    Ok((LinearModel { coef: beta, intercept }, trace, report))
}
