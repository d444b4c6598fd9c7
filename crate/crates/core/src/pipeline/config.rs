use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{BandFeedback, SplitConfig};
use crate::learners::{Family, Hyper, STANDARD_CONFIDENCES};
use crate::scenario::CampaignConfig;
use crate::simulator::TnStrength;

pub const RUN_CONFIG_SCHEMA: u32 = 1;

/// Artifact locations, relative to the output root unless absolute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// JSON system description (network, machine, protection settings)
    /// replacing the bundled feeder. Its TN profile is overwritten per study.
    pub system: Option<PathBuf>,
    pub datasets: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { system: None, datasets: "datasets".into(), models: "models".into(), reports: "reports".into() }
    }
}

/// Row subsampling of the training matrices per family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Strides {
    pub linear: usize,
    pub gbt: usize,
    pub nn: usize,
    /// For every model of a quantile set.
    pub quantile: usize,
}

impl Default for Strides {
    fn default() -> Self {
        Self { linear: 1, gbt: 1, nn: 4, quantile: 8 }
    }
}

impl Strides {
    pub fn point(&self, family: Family) -> usize {
        match family {
            Family::Linreg | Family::Elnet => self.linear,
            Family::Gbt => self.gbt,
            Family::NnT | Family::NnB => self.nn,
        }
    }
}

/// The Monte Carlo comparison campaign.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McConfig {
    pub n_sets: usize,
    pub master_seed: u64,
    pub tn: TnStrength,
}

impl Default for McConfig {
    fn default() -> Self {
        Self { n_sets: 100, master_seed: 1_000_003, tn: TnStrength::Strong }
    }
}

/// Everything that determines the artifacts of a run, apart from the output
/// root. Its hash is recorded in every output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema: u32,
    pub paths: Paths,
    /// Parameter sets, load steps, master seed and solver settings.
    pub campaign: CampaignConfig,
    /// Resampling interval of the learning series, s.
    pub dt: f64,
    pub split: SplitConfig,
    pub families: Vec<Family>,
    pub confidences: Vec<f64>,
    pub hyper: Hyper,
    pub strides: Strides,
    pub band_feedback: BandFeedback,
    /// Sort quantile predictions across levels before scoring bands.
    pub crossing_fix: bool,
    pub mc: McConfig,
    /// Test series per load step written to the CSV side files.
    pub report_series_per_step: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema: RUN_CONFIG_SCHEMA,
            paths: Paths::default(),
            campaign: CampaignConfig::default(),
            dt: crate::features::DEFAULT_DT,
            split: SplitConfig::default(),
            families: Family::ALL.to_vec(),
            confidences: STANDARD_CONFIDENCES.to_vec(),
            hyper: Hyper::default(),
            strides: Strides::default(),
            band_feedback: BandFeedback::Own,
            crossing_fix: false,
            mc: McConfig::default(),
            report_series_per_step: 1,
        }
    }
}

impl RunConfig {
    /// Ten parameter sets and four load steps, for quick end-to-end runs.
    pub fn reduced() -> Self {
        let mut c = Self::default();
        c.campaign.n_sets = 10;
        c.campaign.steps_kw = vec![-225.0, -25.0, 25.0, 225.0];
        c.mc.n_sets = 10;
        c
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != RUN_CONFIG_SCHEMA {
            return Err(Error::SchemaVersion { what: "run config".into(), expected: RUN_CONFIG_SCHEMA, found: self.schema });
        }
        if let Some(path) = &self.paths.system {
            if !path.is_file() {
                return Err(Error::InvalidParameter(format!("system file {} does not exist", path.display())));
            }
        }
        self.campaign.validate()?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("resampling interval {} must be positive", self.dt)));
        }
        if !(0.0 < self.split.train_fraction && self.split.train_fraction < 1.0) {
            return Err(Error::InvalidParameter("train fraction must lie in (0, 1)".into()));
        }
        if let Some(c) = self.confidences.iter().find(|c| !(0.0 < **c && **c < 1.0)) {
            return Err(Error::InvalidParameter(format!("confidence {c} outside (0, 1)")));
        }
        let s = &self.strides;
        if [s.linear, s.gbt, s.nn, s.quantile].contains(&0) {
            return Err(Error::InvalidParameter("row strides must be positive".into()));
        }
        if self.mc.n_sets == 0 {
            return Err(Error::InvalidParameter("the Monte Carlo comparison needs at least one set".into()));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let config: Self = crate::learners::load_json(path.as_ref())?;
        config.validate()?;
        Ok(config)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}
