use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evaluate::{BandScores, PointScores, QuantileRollout};
use crate::features::{Rollout, UniformSeries};
use crate::learners::Family;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpenLoopScores {
    pub ip_r2: Option<f64>,
    pub iq_r2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub family: Family,
    /// `point` or `quantile`.
    pub kind: String,
    pub file: String,
    pub sha256: String,
    pub rows: usize,
    pub features: usize,
    /// One-step-ahead scores on the test split, for point models.
    pub open_loop_test: Option<OpenLoopScores>,
}

impl ModelRecord {
    pub(super) fn new(family: Family, kind: &str, path: &Path, rows: usize, features: usize, open_loop_test: Option<OpenLoopScores>) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            family,
            kind: kind.into(),
            file: path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
            sha256: hex::encode(Sha256::digest(&bytes)),
            rows,
            features,
            open_loop_test,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub schema: u32,
    pub config_hash: String,
    pub dataset_id: String,
    pub n_train_series: usize,
    pub n_test_series: usize,
    pub models: Vec<ModelRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEntry {
    pub family: Family,
    /// `train` or `test`.
    pub split: String,
    pub n_series: usize,
    pub full: PointScores,
    #[serde(rename = "dyn")]
    pub dyn_window: PointScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandEntry {
    pub family: Family,
    #[serde(flatten)]
    pub scores: BandScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossingEntry {
    pub family: Family,
    /// Mean over test series of the fraction of crossed steps, before any fix.
    pub crossing_rate: f64,
    /// Whether band scores were computed after sorting across levels.
    pub fixed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McCoverage {
    pub family: Family,
    pub confidence: f64,
    pub ip: f64,
    pub iq: f64,
    pub crossing_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McReport {
    pub step_kw: f64,
    pub tn_profile: String,
    pub dataset_id: String,
    pub n_trajectories: usize,
    /// The run with the median maximum frequency deviation.
    pub reference_set_id: usize,
    pub reference_max_frequency_deviation_hz: f64,
    pub coverage: Vec<McCoverage>,
}

impl McReport {
    pub fn coverage_of(&self, family: Family) -> Vec<&McCoverage> {
        self.coverage.iter().filter(|c| c.family == family).collect()
    }
}

/// Scores of one study. Holds no timings, so that reruns compare equal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema: u32,
    pub study: String,
    pub config_hash: String,
    pub dataset_id: String,
    pub point: Vec<PointEntry>,
    pub bands: Vec<BandEntry>,
    pub crossing: Vec<CrossingEntry>,
    pub mc: Option<McReport>,
}

impl StudyReport {
    pub(super) fn new(study: &str, config_hash: &str) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            study: study.into(),
            config_hash: config_hash.into(),
            dataset_id: String::new(),
            point: Vec::new(),
            bands: Vec::new(),
            crossing: Vec::new(),
            mc: None,
        }
    }

    pub fn point_entry(&self, family: Family, split: &str) -> Option<&PointEntry> {
        self.point.iter().find(|p| p.family == family && p.split == split)
    }

    /// Band scores of `family` in `window`, by increasing confidence.
    pub fn band_entries(&self, family: Family, window: crate::evaluate::Window) -> Vec<&BandScores> {
        let mut v: Vec<&BandScores> =
            self.bands.iter().filter(|b| b.family == family && b.scores.window == window).map(|b| &b.scores).collect();
        v.sort_by(|a, b| a.confidence.total_cmp(&b.confidence));
        v
    }
}

pub(super) const ROLLOUT_HEADER: [&str; 8] = ["family", "set_id", "step_kw", "t", "ip", "ip_hat", "iq", "iq_hat"];
pub(super) const DIFF_HEADER: [&str; 6] = ["family", "target", "set_id", "step_kw", "dy", "dy_hat"];
pub(super) const BAND_HEADER: [&str; 13] = [
    "family", "confidence", "set_id", "step_kw", "t", "ip", "ip_lower", "ip_median", "ip_upper", "iq", "iq_lower", "iq_median",
    "iq_upper",
];

fn set_label(s: &UniformSeries) -> String {
    s.set_id.map(|v| v.to_string()).unwrap_or_default()
}

pub(super) fn push_rollout_rows(rows: &mut Vec<Vec<String>>, family: Family, s: &UniformSeries, r: &Rollout) {
    for k in 0..r.len() {
        let j = r.start + k;
        rows.push(vec![
            family.to_string(),
            set_label(s),
            s.step_kw.to_string(),
            format!("{:.2}", r.time[k]),
            s.ip[j].to_string(),
            r.ip[k].to_string(),
            s.iq[j].to_string(),
            r.iq[k].to_string(),
        ]);
    }
}

pub(super) fn push_diff_rows(rows: &mut Vec<Vec<String>>, family: Family, target: usize, s: &UniformSeries, pairs: &[(f64, f64)]) {
    let name = if target == 0 { "ip" } else { "iq" };
    for (dy, dyhat) in pairs {
        rows.push(vec![family.to_string(), name.into(), set_label(s), s.step_kw.to_string(), dy.to_string(), dyhat.to_string()]);
    }
}

pub(super) fn push_band_rows(rows: &mut Vec<Vec<String>>, family: Family, s: &UniformSeries, q: &QuantileRollout) {
    for (c, lo, hi) in &q.bands {
        for k in 0..lo.len() {
            let j = lo.start + k;
            rows.push(vec![
                family.to_string(),
                c.to_string(),
                set_label(s),
                s.step_kw.to_string(),
                format!("{:.2}", lo.time[k]),
                s.ip[j].to_string(),
                lo.ip[k].to_string(),
                q.median.ip[k].to_string(),
                hi.ip[k].to_string(),
                s.iq[j].to_string(),
                lo.iq[k].to_string(),
                q.median.iq[k].to_string(),
                hi.iq[k].to_string(),
            ]);
        }
    }
}

pub(super) fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
