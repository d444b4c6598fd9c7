use serde::{Deserialize, Serialize};

use super::series::{Channel, UniformSeries};
use crate::error::{Error, Result};

/// Lags of each input signal. Voltage and frequency lags may include 0 (the
/// current sample); current-feedback lags are strictly positive.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub v_lags: Vec<usize>,
    pub omega_lags: Vec<usize>,
    pub ip_lags: Vec<usize>,
    pub iq_lags: Vec<usize>,
}

impl FeatureSpec {
    /// `v, omega` at lags `0..=n` and fed-back currents at `1..=n`.
    pub fn up_to(n: usize) -> Self {
        Self {
            v_lags: (0..=n).collect(),
            omega_lags: (0..=n).collect(),
            ip_lags: (1..=n).collect(),
            iq_lags: (1..=n).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.ip_lags.contains(&0) || self.iq_lags.contains(&0) {
            return Err(Error::InvalidParameter("current feedback lags must be at least 1".into()));
        }
        if self.n_features() == 0 {
            return Err(Error::InvalidParameter("feature spec selects no features".into()));
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.v_lags.len() + self.omega_lags.len() + self.ip_lags.len() + self.iq_lags.len()
    }

    pub fn max_lag(&self) -> usize {
        self.groups().flat_map(|(_, l)| l.iter().copied()).max().unwrap_or(0)
    }

    fn groups(&self) -> impl Iterator<Item = (Channel, &Vec<usize>)> {
        [
            (Channel::V, &self.v_lags),
            (Channel::Omega, &self.omega_lags),
            (Channel::Ip, &self.ip_lags),
            (Channel::Iq, &self.iq_lags),
        ]
        .into_iter()
    }

    /// Column names such as `dv[t-1]`, in matrix order.
    pub fn names(&self) -> Vec<String> {
        self.groups()
            .flat_map(|(c, lags)| {
                lags.iter().map(move |&n| {
                    if n == 0 {
                        format!("d{}[t]", c.name())
                    } else {
                        format!("d{}[t-{n}]", c.name())
                    }
                })
            })
            .collect()
    }

    /// Column range holding the current-feedback features.
    pub fn feedback_columns(&self) -> std::ops::Range<usize> {
        let start = self.v_lags.len() + self.omega_lags.len();
        start..self.n_features()
    }

    /// Writes the features of step `k` into `row`. Feedback values come from
    /// `ip`/`iq`, which only need to be valid before `k`.
    pub fn fill_row(&self, dv: &[f64], dw: &[f64], ip: &[f64], iq: &[f64], k: usize, row: &mut [f64]) {
        let mut c = 0;
        for (lags, src) in [(&self.v_lags, dv), (&self.omega_lags, dw), (&self.ip_lags, ip), (&self.iq_lags, iq)] {
            for &n in lags {
                row[c] = src[k - n];
                c += 1;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BuildMode {
    /// Feedback columns hold the true lagged currents (training).
    OpenLoop,
    /// Feedback columns are left as NaN, to be filled during rollout.
    ClosedLoopTemplate,
}

/// Row-major delta features with aligned `(Δi_p, Δi_q)` targets. Rows of
/// different series never mix; `series_start[s]` is the first row of series `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub n_features: usize,
    pub x: Vec<f64>,
    pub y: Vec<[f64; 2]>,
    pub time: Vec<f64>,
    pub series_start: Vec<usize>,
}

impl FeatureMatrix {
    pub fn empty(n_features: usize) -> Self {
        Self { n_features, x: vec![], y: vec![], time: vec![], series_start: vec![] }
    }

    pub fn n_rows(&self) -> usize {
        self.y.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.x.iter().skip(j).step_by(self.n_features).copied().collect()
    }

    pub fn target(&self, t: usize) -> Vec<f64> {
        self.y.iter().map(|y| y[t]).collect()
    }

    /// Row range of series `s`.
    pub fn series_rows(&self, s: usize) -> std::ops::Range<usize> {
        let end = self.series_start.get(s + 1).copied().unwrap_or(self.n_rows());
        self.series_start[s]..end
    }

    /// Appends the rows of `other` as new series.
    pub fn append(&mut self, other: FeatureMatrix) -> Result<()> {
        if other.n_features != self.n_features {
            return Err(Error::DimensionMismatch { expected: self.n_features, got: other.n_features });
        }
        let offset = self.n_rows();
        self.series_start.extend(other.series_start.iter().map(|s| s + offset));
        self.x.extend(other.x);
        self.y.extend(other.y);
        self.time.extend(other.time);
        Ok(())
    }
}

/// One row per grid step from the event (or the first step with a full lag
/// history, if later) to the end of the series.
pub fn build_matrix(series: &UniformSeries, spec: &FeatureSpec, mode: BuildMode) -> Result<FeatureMatrix> {
    build_strided(series, spec, mode, 1)
}

/// As [`build_matrix`], keeping every `stride`-th row.
pub fn build_strided(series: &UniformSeries, spec: &FeatureSpec, mode: BuildMode, stride: usize) -> Result<FeatureMatrix> {
    build_rows(series, spec, mode, stride, 0)
}

fn build_rows(series: &UniformSeries, spec: &FeatureSpec, mode: BuildMode, stride: usize, phase: usize) -> Result<FeatureMatrix> {
    spec.validate()?;
    if stride == 0 {
        return Err(Error::InvalidParameter("row stride must be positive".into()));
    }
    let max_lag = spec.max_lag();
    if series.len() < max_lag + 1 {
        return Err(Error::InsufficientData(format!(
            "series of {} samples is shorter than max lag {max_lag} + 1",
            series.len()
        )));
    }
    let dv = series.delta(Channel::V);
    let dw = series.delta(Channel::Omega);
    let dip = series.delta(Channel::Ip);
    let diq = series.delta(Channel::Iq);
    let f = spec.n_features();
    let first = max_lag.max(series.event_index());
    let mut m = FeatureMatrix::empty(f);
    m.series_start.push(0);
    let mut row = vec![0.0; f];
    for k in (first + phase % stride..series.len()).step_by(stride) {
        spec.fill_row(&dv, &dw, &dip, &diq, k, &mut row);
        if mode == BuildMode::ClosedLoopTemplate {
            row[spec.feedback_columns()].fill(f64::NAN);
        }
        m.x.extend_from_slice(&row);
        m.y.push([dip[k], diq[k]]);
        m.time.push(series.time(k));
    }
    Ok(m)
}

/// Open-loop training matrix over many series. With `stride > 1` the first
/// kept row of series `s` is offset by `s % stride`, so that every phase of
/// the post-event transient is represented.
pub fn build_dataset(series: &[UniformSeries], spec: &FeatureSpec, stride: usize) -> Result<FeatureMatrix> {
    let mut m = FeatureMatrix::empty(spec.n_features());
    for (i, s) in series.iter().enumerate() {
        m.append(build_rows(s, spec, BuildMode::OpenLoop, stride, i)?)?;
    }
    Ok(m)
}
