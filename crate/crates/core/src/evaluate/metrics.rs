use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Guard on `|y|` in the percentage error.
pub const MAPE_EPSILON: f64 = 1e-6;

fn check(y: &[f64], yhat: &[f64], min: usize) -> Result<()> {
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: yhat.len() });
    }
    if y.len() < min {
        return Err(Error::InsufficientData(format!("metric needs at least {min} samples, got {}", y.len())));
    }
    Ok(())
}

/// Coefficient of determination `1 - SS_res / SS_tot`.
pub fn r2(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 2)?;
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("R2 of a constant target".into()));
    }
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(1.0 - ss_res / ss_tot)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 1)?;
    let mse = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / y.len() as f64;
    Ok(mse.sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mape {
    pub value: f64,
    /// Samples whose target magnitude fell below [`MAPE_EPSILON`].
    pub guarded: usize,
}

/// Mean absolute percentage error as a ratio, `|y|` floored at [`MAPE_EPSILON`].
pub fn mape(y: &[f64], yhat: &[f64]) -> Result<Mape> {
    check(y, yhat, 1)?;
    let mut guarded = 0;
    let sum: f64 = y
        .iter()
        .zip(yhat)
        .map(|(a, b)| {
            if a.abs() < MAPE_EPSILON {
                guarded += 1;
            }
            (a - b).abs() / a.abs().max(MAPE_EPSILON)
        })
        .sum();
    Ok(Mape { value: sum / y.len() as f64, guarded })
}

pub fn first_difference(x: &[f64]) -> Vec<f64> {
    x.windows(2).map(|w| w[1] - w[0]).collect()
}

/// R2 between the step-to-step changes of target and prediction.
pub fn time_diff_score(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat, 3)?;
    r2(&first_difference(y), &first_difference(yhat))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuantileScores {
    pub confidence: f64,
    /// Fraction of targets inside the band.
    pub rel: f64,
    /// `100 (REL - Q)`, percentage points; positive means over-coverage.
    pub ace: f64,
    /// Mean band width, p.u.
    pub ais: f64,
    /// Fraction of steps where the lower bound exceeded the upper one.
    pub crossing_rate: f64,
}

/// Reliability, coverage error and sharpness of a prediction interval with
/// nominal confidence `confidence`. Crossed steps are scored on `[min, max]`.
pub fn quantile_scores(y: &[f64], lower: &[f64], upper: &[f64], confidence: f64) -> Result<QuantileScores> {
    check(y, lower, 1)?;
    check(y, upper, 1)?;
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence {confidence} outside (0, 1)")));
    }
    let mut inside = 0usize;
    let mut crossed = 0usize;
    let mut width = 0.0;
    for ((&t, &l), &u) in y.iter().zip(lower).zip(upper) {
        if l > u {
            crossed += 1;
        }
        let (lo, hi) = (l.min(u), l.max(u));
        if lo <= t && t <= hi {
            inside += 1;
        }
        width += hi - lo;
    }
    let n = y.len() as f64;
    let rel = inside as f64 / n;
    Ok(QuantileScores {
        confidence,
        rel,
        ace: 100.0 * inside as f64 / n - 100.0 * confidence,
        ais: width / n,
        crossing_rate: crossed as f64 / n,
    })
}
