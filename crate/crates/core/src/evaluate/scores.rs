use serde::{Deserialize, Serialize};

use super::metrics::{mape, quantile_scores, r2, rmse, QuantileScores};
use crate::error::{Error, Result};
use crate::features::{closed_loop_rollout, guided_rollout, Channel, Rollout, UniformSeries};
use crate::learners::QuantileSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Window {
    /// From the event to the end of the run.
    Full,
    /// The first two seconds after the event.
    Dyn,
}

impl Window {
    /// Absolute bounds, s, for an event at `event_time` and a run ending at `t_end`.
    pub fn bounds(self, event_time: f64, t_end: f64) -> (f64, f64) {
        match self {
            Window::Full => (event_time, t_end),
            Window::Dyn => (event_time, (event_time + 2.0).min(t_end)),
        }
    }

    /// Rollout positions falling inside the window.
    fn positions(self, series: &UniformSeries, rollout: &Rollout) -> std::ops::Range<usize> {
        let t_end = series.time(series.len().saturating_sub(1));
        let (t0, t1) = self.bounds(series.event_time, t_end);
        let w = series.window(t0, t1);
        let lo = w.start.max(rollout.start) - rollout.start;
        let hi = w.end.min(rollout.start + rollout.len()).saturating_sub(rollout.start);
        lo.min(hi)..hi
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetScores {
    /// On absolute currents; absent when the target is constant.
    pub r2: Option<f64>,
    /// On deviations from the pre-event current of each series.
    pub delta_r2: Option<f64>,
    pub rmse: f64,
    pub mape: f64,
    pub mape_guarded: usize,
    /// R2 of step-to-step changes.
    pub time_diff: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointScores {
    pub window: Window,
    pub n_samples: usize,
    pub ip: TargetScores,
    pub iq: TargetScores,
}

impl PointScores {
    pub fn target(&self, t: usize) -> &TargetScores {
        if t == 0 {
            &self.ip
        } else {
            &self.iq
        }
    }
}

fn defined(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::UndefinedMetric(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn check_aligned(series: &[UniformSeries], n: usize) -> Result<()> {
    if series.len() != n {
        return Err(Error::DimensionMismatch { expected: series.len(), got: n });
    }
    if series.is_empty() {
        return Err(Error::InsufficientData("no series to score".into()));
    }
    Ok(())
}

/// Scores closed-loop rollouts against the series they were run on, pooling
/// all samples of the window across series.
pub fn point_scores(series: &[UniformSeries], rollouts: &[Rollout], window: Window) -> Result<PointScores> {
    check_aligned(series, rollouts.len())?;
    let mut out = Vec::with_capacity(2);
    let mut n_samples = 0;
    for (t, channel) in [(0, Channel::Ip), (1, Channel::Iq)] {
        let (mut y, mut yhat, mut dy, mut dyhat, mut diff_y, mut diff_yhat) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (s, r) in series.iter().zip(rollouts) {
            let pos = window.positions(s, r);
            let truth = &s.channel(channel)[r.start + pos.start..r.start + pos.end];
            let pred = &r.target(t)[pos.clone()];
            let y0 = s.reference_of(channel);
            y.extend_from_slice(truth);
            yhat.extend_from_slice(pred);
            dy.extend(truth.iter().map(|v| v - y0));
            dyhat.extend(pred.iter().map(|v| v - y0));
            diff_y.extend(truth.windows(2).map(|w| w[1] - w[0]));
            diff_yhat.extend(pred.windows(2).map(|w| w[1] - w[0]));
        }
        n_samples = y.len();
        let m = mape(&y, &yhat)?;
        out.push(TargetScores {
            r2: defined(r2(&y, &yhat))?,
            delta_r2: defined(r2(&dy, &dyhat))?,
            rmse: rmse(&y, &yhat)?,
            mape: m.value,
            mape_guarded: m.guarded,
            time_diff: if diff_y.len() >= 2 { defined(r2(&diff_y, &diff_yhat))? } else { None },
        });
    }
    Ok(PointScores { window, n_samples, ip: out[0], iq: out[1] })
}

/// Time-difference scatter `(Δy, Δŷ)` of one target, pooled over series.
pub fn time_diff_pairs(series: &[UniformSeries], rollouts: &[Rollout], target: usize, window: Window) -> Result<Vec<(f64, f64)>> {
    check_aligned(series, rollouts.len())?;
    let channel = if target == 0 { Channel::Ip } else { Channel::Iq };
    let mut pairs = Vec::new();
    for (s, r) in series.iter().zip(rollouts) {
        let pos = window.positions(s, r);
        let truth = &s.channel(channel)[r.start + pos.start..r.start + pos.end];
        let pred = &r.target(target)[pos];
        pairs.extend(truth.windows(2).zip(pred.windows(2)).map(|(a, b)| (a[1] - a[0], b[1] - b[0])));
    }
    Ok(pairs)
}

/// How the bound models of a quantile set receive their current feedback
/// during rollout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandFeedback {
    /// Each model feeds back its own predictions.
    #[default]
    Own,
    /// Every bound model is fed the median model's predictions.
    Median,
}

/// Closed-loop predictions of every model of a quantile set on one series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileRollout {
    pub median: Rollout,
    /// `(confidence, lower, upper)`, by increasing confidence.
    pub bands: Vec<(f64, Rollout, Rollout)>,
}

impl QuantileRollout {
    pub fn run(set: &QuantileSet, series: &UniformSeries, feedback: BandFeedback) -> Result<Self> {
        let median = closed_loop_rollout(&set.median, series)?;
        let bound = |m| match feedback {
            BandFeedback::Own => closed_loop_rollout(m, series),
            BandFeedback::Median => guided_rollout(m, series, &median),
        };
        let bands = set
            .bands
            .iter()
            .map(|(c, lo, hi)| Ok((*c, bound(lo)?, bound(hi)?)))
            .collect::<Result<_>>()?;
        Ok(Self { median, bands })
    }

    /// Fraction of steps at which some lower bound exceeds its upper bound.
    pub fn crossing_rate(&self) -> f64 {
        let n = self.median.len();
        if n == 0 {
            return 0.0;
        }
        let crossed = (0..n)
            .filter(|&k| self.bands.iter().any(|(_, lo, hi)| lo.ip[k] > hi.ip[k] || lo.iq[k] > hi.iq[k]))
            .count();
        crossed as f64 / n as f64
    }

    /// Sorts the predictions of all quantile levels at every step so that they
    /// are non-decreasing in the quantile level, which makes the bands nested
    /// and uncrossed.
    pub fn rearrange(&mut self) {
        let m = self.bands.len();
        let mut buf = vec![0.0; 2 * m + 1];
        for target in 0..2 {
            for k in 0..self.median.len() {
                for (j, (_, lo, _)) in self.bands.iter().rev().enumerate() {
                    buf[j] = lo.target(target)[k];
                }
                buf[m] = self.median.target(target)[k];
                for (j, (_, _, hi)) in self.bands.iter().enumerate() {
                    buf[m + 1 + j] = hi.target(target)[k];
                }
                buf.sort_by(f64::total_cmp);
                for (j, (_, lo, _)) in self.bands.iter_mut().rev().enumerate() {
                    target_mut(lo, target)[k] = buf[j];
                }
                target_mut(&mut self.median, target)[k] = buf[m];
                for (j, (_, _, hi)) in self.bands.iter_mut().enumerate() {
                    target_mut(hi, target)[k] = buf[m + 1 + j];
                }
            }
        }
    }
}

fn target_mut(r: &mut Rollout, t: usize) -> &mut Vec<f64> {
    if t == 0 {
        &mut r.ip
    } else {
        &mut r.iq
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BandScores {
    pub confidence: f64,
    pub window: Window,
    pub ip: QuantileScores,
    pub iq: QuantileScores,
}

/// REL, ACE and AIS of the band at `confidence`, pooled over series.
pub fn band_scores(series: &[UniformSeries], rollouts: &[QuantileRollout], confidence: f64, window: Window) -> Result<BandScores> {
    check_aligned(series, rollouts.len())?;
    let mut out = Vec::with_capacity(2);
    for (t, channel) in [(0, Channel::Ip), (1, Channel::Iq)] {
        let (mut y, mut lower, mut upper) = (Vec::new(), Vec::new(), Vec::new());
        for (s, q) in series.iter().zip(rollouts) {
            let (_, lo, hi) = q
                .bands
                .iter()
                .find(|b| (b.0 - confidence).abs() < 1e-9)
                .ok_or_else(|| Error::InvalidParameter(format!("no band at confidence {confidence}")))?;
            let pos = window.positions(s, lo);
            y.extend_from_slice(&s.channel(channel)[lo.start + pos.start..lo.start + pos.end]);
            lower.extend_from_slice(&lo.target(t)[pos.clone()]);
            upper.extend_from_slice(&hi.target(t)[pos]);
        }
        out.push(quantile_scores(&y, &lower, &upper, confidence)?);
    }
    Ok(BandScores { confidence, window, ip: out[0], iq: out[1] })
}

/// Fraction of the points of every trajectory in `ensemble` that fall inside
/// the band predicted for one reference series, per target. Points are
/// matched by time step over the full window.
pub fn envelope_coverage(reference: &QuantileRollout, ensemble: &[UniformSeries], confidence: f64) -> Result<[f64; 2]> {
    let (_, lo, hi) = reference
        .bands
        .iter()
        .find(|b| (b.0 - confidence).abs() < 1e-9)
        .ok_or_else(|| Error::InvalidParameter(format!("no band at confidence {confidence}")))?;
    if ensemble.is_empty() {
        return Err(Error::InsufficientData("empty ensemble".into()));
    }
    let mut out = [0.0; 2];
    for (t, channel) in [(0, Channel::Ip), (1, Channel::Iq)] {
        let (mut inside, mut total) = (0usize, 0usize);
        for s in ensemble {
            let values = s.channel(channel);
            for (j, (&l, &u)) in lo.target(t).iter().zip(hi.target(t)).enumerate() {
                let Some(&v) = values.get(lo.start + j) else { break };
                total += 1;
                if l.min(u) <= v && v <= l.max(u) {
                    inside += 1;
                }
            }
        }
        if total == 0 {
            return Err(Error::InsufficientData("ensemble does not overlap the band".into()));
        }
        out[t] = inside as f64 / total as f64;
    }
    Ok(out)
}
