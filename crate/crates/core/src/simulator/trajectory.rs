use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::system::TrippableKind;
use crate::error::{Error, Result};

pub const TRAJECTORY_SCHEMA: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub time: f64,
    pub bus: String,
    pub device: TrippableKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub schema: u32,
    pub step_kw: f64,
    pub set_id: Option<u64>,
    pub tn_profile: String,
    pub event_time: f64,
    pub t_end: f64,
    pub f_n: f64,
    pub trips: Vec<TripRecord>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
}

/// Solver-step record of the PCC quantities for one disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub time: Vec<f64>,
    pub v: Vec<f64>,
    pub omega: Vec<f64>,
    pub ip: Vec<f64>,
    pub iq: Vec<f64>,
    pub meta: TrajectoryMeta,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    time: f64,
    v: f64,
    omega: f64,
    ip: f64,
    iq: f64,
}

impl Trajectory {
    pub fn new(meta: TrajectoryMeta) -> Self {
        Self { time: vec![], v: vec![], omega: vec![], ip: vec![], iq: vec![], meta }
    }

    pub fn push(&mut self, t: f64, v: f64, omega: f64, ip: f64, iq: f64) {
        self.time.push(t);
        self.v.push(v);
        self.omega.push(omega);
        self.ip.push(ip);
        self.iq.push(iq);
    }

    pub fn len(&self) -> usize {
        self.time.len()
    }

    pub fn is_empty(&self) -> bool {
        self.time.is_empty()
    }

    /// Largest frequency deviation from the initial value, Hz.
    pub fn max_frequency_deviation_hz(&self) -> f64 {
        let w0 = self.omega.first().copied().unwrap_or(1.0);
        self.omega
            .iter()
            .map(|w| (w - w0).abs() * self.meta.f_n)
            .fold(0.0, f64::max)
    }

    /// Largest absolute rate of change of frequency, Hz/s.
    pub fn max_rocof_hz_per_s(&self) -> f64 {
        self.time
            .windows(2)
            .zip(self.omega.windows(2))
            .map(|(t, w)| ((w[1] - w[0]) / (t[1] - t[0])).abs() * self.meta.f_n)
            .fold(0.0, f64::max)
    }

    pub fn max_deviation(series: &[f64]) -> f64 {
        let x0 = series.first().copied().unwrap_or(0.0);
        series.iter().map(|x| (x - x0).abs()).fold(0.0, f64::max)
    }

    pub fn sidecar_path(csv: &Path) -> PathBuf {
        csv.with_extension("json")
    }

    /// Writes `path` (CSV `time,v,omega,ip,iq`) and its JSON sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        for k in 0..self.len() {
            w.serialize(Row {
                time: self.time[k],
                v: self.v[k],
                omega: self.omega[k],
                ip: self.ip[k],
                iq: self.iq[k],
            })?;
        }
        w.flush().map_err(|e| Error::io(path, e))?;
        let side = Self::sidecar_path(path);
        std::fs::write(&side, serde_json::to_string_pretty(&self.meta)?)
            .map_err(|e| Error::io(&side, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let side = Self::sidecar_path(path);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: TrajectoryMeta = serde_json::from_str(&text)?;
        if meta.schema != TRAJECTORY_SCHEMA {
            return Err(Error::SchemaVersion {
                what: side.display().to_string(),
                expected: TRAJECTORY_SCHEMA,
                found: meta.schema,
            });
        }
        let mut traj = Self::new(meta);
        let mut r = csv::Reader::from_path(path)?;
        for row in r.deserialize() {
            let row: Row = row?;
            traj.push(row.time, row.v, row.omega, row.ip, row.iq);
        }
        if traj.time.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(format!(
                "{}: sample times are not strictly increasing",
                path.display()
            )));
        }
        Ok(traj)
    }
}
