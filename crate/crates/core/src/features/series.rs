use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::simulator::Trajectory;

/// Default resampling interval, s.
pub const DEFAULT_DT: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    V,
    Omega,
    Ip,
    Iq,
}

impl Channel {
    pub const ALL: [Channel; 4] = [Channel::V, Channel::Omega, Channel::Ip, Channel::Iq];

    pub fn name(self) -> &'static str {
        match self {
            Channel::V => "v",
            Channel::Omega => "omega",
            Channel::Ip => "ip",
            Channel::Iq => "iq",
        }
    }
}

/// PCC measurements on a fixed time grid, with the pre-event operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniformSeries {
    pub dt: f64,
    pub start: f64,
    pub event_time: f64,
    pub v: Vec<f64>,
    pub omega: Vec<f64>,
    pub ip: Vec<f64>,
    pub iq: Vec<f64>,
    /// Steady-state value per channel, in [`Channel::ALL`] order.
    pub reference: [f64; 4],
    pub step_kw: f64,
    pub set_id: Option<u64>,
}

impl UniformSeries {
    pub fn len(&self) -> usize {
        self.v.len()
    }

    pub fn is_empty(&self) -> bool {
        self.v.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        self.start + k as f64 * self.dt
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.len()).map(|k| self.time(k)).collect()
    }

    pub fn channel(&self, c: Channel) -> &[f64] {
        match c {
            Channel::V => &self.v,
            Channel::Omega => &self.omega,
            Channel::Ip => &self.ip,
            Channel::Iq => &self.iq,
        }
    }

    pub fn reference_of(&self, c: Channel) -> f64 {
        self.reference[c as usize]
    }

    /// Deviation of a channel from its steady-state value.
    pub fn delta(&self, c: Channel) -> Vec<f64> {
        let r = self.reference_of(c);
        self.channel(c).iter().map(|x| x - r).collect()
    }

    /// First grid index at or after the event.
    pub fn event_index(&self) -> usize {
        let k = ((self.event_time - self.start) / self.dt - 1e-9).ceil();
        (k.max(0.0) as usize).min(self.len())
    }

    /// Indices whose time lies in `[t0, t1]`.
    pub fn window(&self, t0: f64, t1: f64) -> std::ops::Range<usize> {
        let lo = ((t0 - self.start) / self.dt - 1e-9).ceil().max(0.0) as usize;
        let hi = ((t1 - self.start) / self.dt + 1e-9).floor();
        let hi = if hi < 0.0 { 0 } else { (hi as usize + 1).min(self.len()) };
        lo.min(hi)..hi
    }
}

/// Linear interpolation of every channel onto a grid of spacing `dt`
/// covering the trajectory span.
pub fn resample_uniform(trajectory: &Trajectory, dt: f64) -> Result<UniformSeries> {
    let (Some(&t0), Some(&t1)) = (trajectory.time.first(), trajectory.time.last()) else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    resample_window(trajectory, dt, t0, t1)
}

/// As [`resample_uniform`] on `[start, end]`, which must lie inside the
/// trajectory span.
pub fn resample_window(trajectory: &Trajectory, dt: f64, start: f64, end: f64) -> Result<UniformSeries> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter(format!("resampling interval {dt} must be positive")));
    }
    let t = &trajectory.time;
    let (Some(&t0), Some(&t1)) = (t.first(), t.last()) else {
        return Err(Error::InsufficientData("empty trajectory".into()));
    };
    let tol = 1e-9 * (1.0 + t1.abs());
    if start < t0 - tol || end > t1 + tol || end < start {
        return Err(Error::InvalidParameter(format!(
            "grid [{start}, {end}] s lies outside the trajectory span [{t0}, {t1}] s"
        )));
    }
    if t.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::InvalidParameter("trajectory time is not sorted".into()));
    }
    let n = ((end - start) / dt + 1e-9).floor() as usize + 1;

    let mut out = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
    let sources = [&trajectory.v, &trajectory.omega, &trajectory.ip, &trajectory.iq];
    let mut j = 0;
    for k in 0..n {
        let tk = (start + k as f64 * dt).clamp(t0, t1);
        // Last sample at or before tk; with repeated times the later one wins.
        while j + 1 < t.len() && t[j + 1] <= tk {
            j += 1;
        }
        let (a, b) = if j + 1 < t.len() { (j, j + 1) } else { (j, j) };
        let w = if b > a && t[b] > t[a] { (tk - t[a]) / (t[b] - t[a]) } else { 0.0 };
        for (dst, src) in out.iter_mut().zip(&sources) {
            dst[k] = src[a] + w * (src[b] - src[a]);
        }
    }

    let event_time = trajectory.meta.event_time;
    let pre = t.iter().rposition(|&tt| tt <= event_time).unwrap_or(0);
    let reference = [trajectory.v[pre], trajectory.omega[pre], trajectory.ip[pre], trajectory.iq[pre]];
    let [v, omega, ip, iq] = out;
    Ok(UniformSeries {
        dt,
        start,
        event_time,
        v,
        omega,
        ip,
        iq,
        reference,
        step_kw: trajectory.meta.step_kw,
        set_id: trajectory.meta.set_id,
    })
}
