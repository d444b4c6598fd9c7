use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::sampling::{sample_parameters, set_seed, ParameterSample, SamplingMode, UncertaintyRanges};
use crate::error::{Error, Result};
use crate::simulator::{run, DynamicSystem, SimulationConfig, SystemSpec, Trajectory, STANDARD_STEPS_KW};

pub const DATASET_SCHEMA: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const PARAMETERS_FILE: &str = "parameters.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CampaignConfig {
    pub n_sets: usize,
    pub steps_kw: Vec<f64>,
    pub master_seed: u64,
    pub ranges: UncertaintyRanges,
    pub sampling: SamplingMode,
    /// Solver settings; the step size of each run is overwritten.
    pub simulation: SimulationConfig,
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            n_sets: 100,
            steps_kw: STANDARD_STEPS_KW.to_vec(),
            master_seed: 0,
            ranges: UncertaintyRanges::default(),
            sampling: SamplingMode::PerSet,
            simulation: SimulationConfig::default(),
        }
    }
}

impl CampaignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_sets == 0 || self.steps_kw.is_empty() {
            return Err(Error::InvalidParameter("campaign needs at least one set and one step".into()));
        }
        if self.steps_kw.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidParameter("load steps must be finite".into()));
        }
        self.ranges.validate()?;
        self.simulation.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub set_id: usize,
    pub step_kw: f64,
    /// Trajectory CSV relative to the dataset directory; absent on failure.
    pub file: Option<String>,
    pub failure: Option<String>,
    pub max_frequency_deviation_hz: Option<f64>,
}

impl ManifestEntry {
    pub fn succeeded(&self) -> bool {
        self.file.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub schema: u32,
    pub dataset_id: String,
    pub config_hash: String,
    pub tn_profile: String,
    pub master_seed: u64,
    pub n_sets: usize,
    pub steps_kw: Vec<f64>,
    pub entries: Vec<ManifestEntry>,
}

impl DatasetManifest {
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<PathBuf> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let path = dir.as_ref().join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: Self = serde_json::from_str(&text)?;
        if manifest.schema != DATASET_SCHEMA {
            return Err(Error::SchemaVersion {
                what: "dataset manifest".into(),
                expected: DATASET_SCHEMA,
                found: manifest.schema,
            });
        }
        Ok(manifest)
    }

    pub fn successful(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(|e| e.succeeded())
    }

    pub fn failures(&self) -> usize {
        self.entries.iter().filter(|e| !e.succeeded()).count()
    }

    /// Reads every successful trajectory, in manifest order.
    pub fn load_trajectories(&self, dir: impl AsRef<Path>) -> Result<Vec<(ManifestEntry, Trajectory)>> {
        let dir = dir.as_ref();
        self.successful()
            .map(|e| {
                let file = e.file.as_ref().expect("successful entry has a file");
                Ok((e.clone(), Trajectory::read(dir.join(file))?))
            })
            .collect()
    }
}

/// Hex SHA-256 of the canonical JSON encoding of `value`.
pub fn config_hash<T: Serialize>(value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn trajectory_file_name(set_id: usize, step_kw: f64) -> String {
    format!("set{set_id:03}_step{step_kw:+}.csv")
}

/// Draws `n_sets` parameter sets, initializes each once and runs every load
/// step, writing trajectories, the parameter sets and the manifest to
/// `out_dir`. Runs execute on the current rayon pool.
pub fn run_campaign(config: &CampaignConfig, spec: &SystemSpec, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    config.validate()?;
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let hash = config_hash(&(config, spec))?;
    let n_buses = spec.network.buses.len();

    let samples: Vec<ParameterSample> = (0..config.n_sets)
        .map(|id| sample_parameters(id, set_seed(config.master_seed, id), &config.ranges, n_buses, config.sampling))
        .collect::<Result<_>>()?;
    let params_path = out_dir.join(PARAMETERS_FILE);
    std::fs::write(&params_path, serde_json::to_string_pretty(&samples)?)
        .map_err(|e| Error::io(&params_path, e))?;

    let per_set: Vec<Vec<ManifestEntry>> = samples
        .par_iter()
        .map(|sample| run_set(config, spec, sample, out_dir))
        .collect::<Result<_>>()?;
    let entries: Vec<ManifestEntry> = per_set.into_iter().flatten().collect();

    let manifest = DatasetManifest {
        schema: DATASET_SCHEMA,
        dataset_id: hash[..12].to_string(),
        config_hash: hash,
        tn_profile: spec.tn.name.clone(),
        master_seed: config.master_seed,
        n_sets: config.n_sets,
        steps_kw: config.steps_kw.clone(),
        entries,
    };
    manifest.save(out_dir)?;
    info!(
        "campaign {}: {} runs, {} failed",
        manifest.dataset_id,
        manifest.entries.len(),
        manifest.failures()
    );
    Ok(manifest)
}

fn run_set(config: &CampaignConfig, spec: &SystemSpec, sample: &ParameterSample, out_dir: &Path) -> Result<Vec<ManifestEntry>> {
    let failed = |step_kw: f64, reason: String| ManifestEntry {
        set_id: sample.id,
        step_kw,
        file: None,
        failure: Some(reason),
        max_frequency_deviation_hz: None,
    };
    let system = match DynamicSystem::initialize(spec, &sample.buses) {
        Ok(s) => s,
        Err(e) => {
            warn!("parameter set {} failed to initialize: {e}", sample.id);
            return Ok(config.steps_kw.iter().map(|&s| failed(s, format!("initialization: {e}"))).collect());
        }
    };
    let mut entries = Vec::with_capacity(config.steps_kw.len());
    for &step_kw in &config.steps_kw {
        let sim = SimulationConfig { step_kw, ..config.simulation.clone() };
        match run(&sim, &system, &spec.tn.name) {
            Ok(mut traj) => {
                traj.meta.set_id = Some(sample.id as u64);
                let name = trajectory_file_name(sample.id, step_kw);
                traj.write(out_dir.join(&name))?;
                entries.push(ManifestEntry {
                    set_id: sample.id,
                    step_kw,
                    file: Some(name),
                    failure: None,
                    max_frequency_deviation_hz: Some(traj.max_frequency_deviation_hz()),
                });
            }
            Err(e) => {
                warn!("set {} step {step_kw} kW failed: {e}", sample.id);
                entries.push(failed(step_kw, e.to_string()));
            }
        }
    }
    Ok(entries)
}

/// Reads the parameter sets of a dataset directory.
pub fn load_parameters(dir: impl AsRef<Path>) -> Result<Vec<ParameterSample>> {
    let path = dir.as_ref().join(PARAMETERS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulator::{tn_profile, TnStrength};

    #[test]
    fn file_names_carry_the_sign() {
        assert_eq!(trajectory_file_name(7, 225.0), "set007_step+225.csv");
        assert_eq!(trajectory_file_name(12, -25.0), "set012_step-25.csv");
    }

    #[test]
    fn hash_depends_on_config() {
        let a = CampaignConfig::default();
        let b = CampaignConfig { master_seed: 1, ..a.clone() };
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a.clone()).unwrap());
    }

    #[test]
    fn two_sets_one_step() {
        let dir = tempfile::tempdir().unwrap();
        let config = CampaignConfig { n_sets: 2, steps_kw: vec![75.0], ..Default::default() };
        let spec = SystemSpec::standard(tn_profile(TnStrength::Strong));
        let m = run_campaign(&config, &spec, dir.path()).unwrap();
        assert_eq!(m.entries.len(), 2);
        assert_ne!(m.entries[0].set_id, m.entries[1].set_id);
        assert_eq!(m.failures(), 0);
        let back = DatasetManifest::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let trajs = back.load_trajectories(dir.path()).unwrap();
        assert_eq!(trajs.len(), 2);
        assert_eq!(trajs[1].1.meta.set_id, Some(1));
        assert_eq!(load_parameters(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn schema_mismatch_refused() {
        let dir = tempfile::tempdir().unwrap();
        let m = DatasetManifest {
            schema: DATASET_SCHEMA + 1,
            dataset_id: String::new(),
            config_hash: String::new(),
            tn_profile: "strong".into(),
            master_seed: 0,
            n_sets: 0,
            steps_kw: vec![],
            entries: vec![],
        };
        m.save(dir.path()).unwrap();
        assert!(matches!(DatasetManifest::load(dir.path()), Err(Error::SchemaVersion { .. })));
    }
}
