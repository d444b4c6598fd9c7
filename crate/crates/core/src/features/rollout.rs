use serde::{Deserialize, Serialize};

use super::matrix::FeatureSpec;
use super::series::{Channel, UniformSeries};
use crate::error::{Error, Result};

/// A one-step predictor of `(Δi_p, Δi_q)` from an unscaled delta feature row.
pub trait Forecaster {
    fn feature_spec(&self) -> &FeatureSpec;
    fn predict_row(&self, row: &[f64]) -> Result<[f64; 2]>;
}

impl<F: Forecaster + ?Sized> Forecaster for &F {
    fn feature_spec(&self) -> &FeatureSpec {
        (**self).feature_spec()
    }
    fn predict_row(&self, row: &[f64]) -> Result<[f64; 2]> {
        (**self).predict_row(row)
    }
}

/// Closed-loop predictions in p.u. for grid steps `start..start + len`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub start: usize,
    pub time: Vec<f64>,
    pub ip: Vec<f64>,
    pub iq: Vec<f64>,
}

impl Rollout {
    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    pub fn target(&self, t: usize) -> &[f64] {
        if t == 0 {
            &self.ip
        } else {
            &self.iq
        }
    }
}

/// Runs the model over the series from the event on, feeding its own current
/// predictions back as lagged features. Steps before the first prediction
/// carry the true (pre-event) currents.
pub fn closed_loop_rollout<M: Forecaster + ?Sized>(model: &M, series: &UniformSeries) -> Result<Rollout> {
    rollout_impl(model, series, None)
}

/// As [`closed_loop_rollout`], but the fed-back currents are taken from
/// `guide`, an earlier rollout over the same steps, instead of the model's
/// own output.
pub fn guided_rollout<M: Forecaster + ?Sized>(model: &M, series: &UniformSeries, guide: &Rollout) -> Result<Rollout> {
    rollout_impl(model, series, Some(guide))
}

fn rollout_impl<M: Forecaster + ?Sized>(model: &M, series: &UniformSeries, guide: Option<&Rollout>) -> Result<Rollout> {
    let spec = model.feature_spec();
    spec.validate()?;
    let max_lag = spec.max_lag();
    if series.len() < max_lag + 1 {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than max lag {max_lag} + 1",
            series.len()
        )));
    }
    let dv = series.delta(Channel::V);
    let dw = series.delta(Channel::Omega);
    let mut dip = series.delta(Channel::Ip);
    let mut diq = series.delta(Channel::Iq);
    let first = max_lag.max(series.event_index());
    let n = series.len() - first;
    let (ip0, iq0) = (series.reference_of(Channel::Ip), series.reference_of(Channel::Iq));
    if let Some(g) = guide {
        if g.start != first || g.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: g.len() });
        }
        for j in 0..n {
            dip[first + j] = g.ip[j] - ip0;
            diq[first + j] = g.iq[j] - iq0;
        }
    }
    let mut row = vec![0.0; spec.n_features()];
    let mut out = Rollout { start: first, time: Vec::with_capacity(n), ip: Vec::with_capacity(n), iq: Vec::with_capacity(n) };
    for k in first..series.len() {
        spec.fill_row(&dv, &dw, &dip, &diq, k, &mut row);
        let [p, q] = model.predict_row(&row)?;
        if !p.is_finite() || !q.is_finite() {
            return Err(Error::RolloutDiverged { step: k });
        }
        if guide.is_none() {
            dip[k] = p;
            diq[k] = q;
        }
        out.time.push(series.time(k));
        out.ip.push(ip0 + p);
        out.iq.push(iq0 + q);
    }
    Ok(out)
}
