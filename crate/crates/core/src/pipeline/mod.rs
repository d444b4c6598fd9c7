//! Reproducible end-to-end commands: single simulations, campaigns, training
//! of every family and the evaluation studies. Every artifact written here
//! carries the hash of the [`RunConfig`] that produced it.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{McConfig, Paths, RunConfig, Strides, RUN_CONFIG_SCHEMA};
pub use report::{
    BandEntry, CrossingEntry, McCoverage, McReport, ModelRecord, OpenLoopScores, PointEntry, StudyReport, TrainSummary,
    REPORT_SCHEMA,
};

use crate::error::{Error, Result};
use crate::evaluate::{
    band_scores, envelope_coverage, point_scores, stratified_split, time_diff_pairs, QuantileRollout, SeriesKey, Split,
    Window,
};
use crate::features::{build_dataset, closed_loop_rollout, resample_uniform, Rollout, UniformSeries};
use crate::learners::{load_json, save_json, train, Family, ForecastModel, Loss, QuantileSet};
use crate::scenario::{config_hash, run_campaign, sample_parameters, CampaignConfig, DatasetManifest};
use crate::simulator::{run, tn_profile, DynamicSystem, SimulationConfig, SystemSpec, TnStrength};

/// Environment variable naming the output root.
pub const OUTPUT_ROOT_ENV: &str = "DNEQ_OUTPUT_ROOT";

/// Which study [`Pipeline::evaluate`] runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Study {
    /// Train and test split of the strong-grid dataset.
    Strong,
    /// Strong-grid models on the test series of the weak-grid dataset.
    Weak,
    /// Bands for one reference run against a Monte Carlo ensemble at one step.
    McCompare { step_kw: f64 },
}

impl Study {
    pub fn name(&self) -> String {
        match self {
            Study::Strong => "strong".into(),
            Study::Weak => "weak".into(),
            Study::McCompare { step_kw } => format!("mc_compare_{step_kw:+}kW"),
        }
    }
}

/// A model file together with the hash of the configuration that wrote it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact<T> {
    pub config_hash: String,
    pub model: T,
}

/// Output of [`Pipeline::simulate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationRecord {
    pub config_hash: String,
    pub tn_profile: String,
    pub step_kw: f64,
    pub seed: u64,
    pub file: PathBuf,
    pub samples: usize,
    pub max_frequency_deviation_hz: f64,
}

/// Resampled series of a dataset with their keys, in manifest order.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub keys: Vec<SeriesKey>,
    pub series: Vec<UniformSeries>,
}

impl LoadedDataset {
    pub fn select(&self, idx: &[usize]) -> Vec<UniformSeries> {
        idx.iter().map(|&i| self.series[i].clone()).collect()
    }
}

/// A validated configuration bound to an output root.
#[derive(Debug, Clone)]
pub struct Pipeline {
    pub root: PathBuf,
    pub config: RunConfig,
    hash: String,
}

impl Pipeline {
    pub fn new(root: impl Into<PathBuf>, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let hash = config_hash(&config)?;
        Ok(Self { root: root.into(), config, hash })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn dataset_dir(&self, tn: TnStrength) -> PathBuf {
        self.root.join(&self.config.paths.datasets).join(tn.to_string())
    }

    pub fn mc_dataset_dir(&self, step_kw: f64) -> PathBuf {
        self.root.join(&self.config.paths.datasets).join(format!("mc_{}_{step_kw:+}kW", self.config.mc.tn))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.models)
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join(&self.config.paths.reports)
    }

    pub fn point_model_path(&self, family: Family) -> PathBuf {
        self.models_dir().join(format!("point_{family}.json"))
    }

    pub fn quantile_model_path(&self, family: Family) -> PathBuf {
        self.models_dir().join(format!("quantile_{family}.json"))
    }

    /// The system description for `tn`: the configured file if any, else the
    /// bundled feeder.
    pub fn system_spec(&self, tn: TnStrength) -> Result<SystemSpec> {
        match &self.config.paths.system {
            Some(path) => {
                let mut spec: SystemSpec = load_json(path)?;
                spec.tn = tn_profile(tn);
                Ok(spec)
            }
            None => Ok(SystemSpec::standard(tn_profile(tn))),
        }
    }

    /// One parameter draw from `seed`, one initialization and one run.
    pub fn simulate(&self, step_kw: f64, tn: TnStrength, seed: u64, out: Option<&Path>) -> Result<SimulationRecord> {
        let spec = self.system_spec(tn)?;
        let c = &self.config.campaign;
        let sample = sample_parameters(0, seed, &c.ranges, spec.network.buses.len(), c.sampling)?;
        let system = DynamicSystem::initialize(&spec, &sample.buses)?;
        let sim = SimulationConfig { step_kw, ..c.simulation.clone() };
        let traj = run(&sim, &system, &spec.tn.name)?;
        let file = match out {
            Some(p) => p.to_path_buf(),
            None => self.root.join("simulations").join(format!("{tn}_seed{seed}_step{step_kw:+}.csv")),
        };
        if let Some(dir) = file.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        traj.write(&file)?;
        let record = SimulationRecord {
            config_hash: self.hash.clone(),
            tn_profile: tn.to_string(),
            step_kw,
            seed,
            file: file.clone(),
            samples: traj.len(),
            max_frequency_deviation_hz: traj.max_frequency_deviation_hz(),
        };
        save_json(&file.with_extension("run.json"), &record)?;
        Ok(record)
    }

    /// The configured campaign on the `tn` grid.
    pub fn dataset(&self, tn: TnStrength) -> Result<DatasetManifest> {
        let spec = self.system_spec(tn)?;
        run_campaign(&self.config.campaign, &spec, self.dataset_dir(tn))
    }

    /// Loads and resamples every successful run of the dataset in `dir`.
    pub fn load_dataset(&self, dir: &Path) -> Result<LoadedDataset> {
        let manifest = DatasetManifest::load(dir)?;
        let runs = manifest.load_trajectories(dir)?;
        let dt = self.config.dt;
        let series: Vec<UniformSeries> =
            runs.par_iter().map(|(_, t)| resample_uniform(t, dt)).collect::<Result<_>>()?;
        let keys = runs.iter().map(|(e, _)| SeriesKey { set_id: e.set_id, step_kw: e.step_kw }).collect();
        if series.is_empty() {
            return Err(Error::InsufficientData(format!("dataset {} has no successful runs", dir.display())));
        }
        Ok(LoadedDataset { manifest, keys, series })
    }

    pub fn split(&self, data: &LoadedDataset) -> Result<Split> {
        stratified_split(&data.keys, &self.config.split)
    }

    /// Fits point models of `families` and, when `confidences` is non-empty,
    /// quantile sets of the families that support them, on the training split
    /// of the strong-grid dataset.
    pub fn train(&self, families: &[Family], confidences: &[f64]) -> Result<TrainSummary> {
        let data = self.load_dataset(&self.dataset_dir(TnStrength::Strong))?;
        let split = self.split(&data)?;
        let train_series = data.select(&split.train);
        let test_series = data.select(&split.test);
        let hyper = &self.config.hyper;
        let mut models = Vec::new();
        let mut timings = Vec::new();
        for &family in families {
            let spec = family.default_spec();
            let stride = self.config.strides.point(family);
            let matrix = build_dataset(&train_series, &spec, stride)?;
            let started = Instant::now();
            let model = train(&matrix, &spec, family, Loss::Squared, hyper)?;
            timings.push((format!("point_{family}"), started.elapsed().as_secs_f64()));
            let path = self.point_model_path(family);
            save_json(&path, &Artifact { config_hash: self.hash.clone(), model: &model })?;
            let open_loop = open_loop_scores(&model, &test_series)?;
            models.push(ModelRecord::new(family, "point", &path, matrix.n_rows(), spec.n_features(), Some(open_loop))?);

            if !confidences.is_empty() && family.supports_quantiles() {
                let stride = self.config.strides.quantile;
                let matrix = if stride == self.config.strides.point(family) { matrix } else { build_dataset(&train_series, &spec, stride)? };
                let started = Instant::now();
                let set = crate::learners::train_quantile_set(&matrix, &spec, family, confidences, hyper)?;
                timings.push((format!("quantile_{family}"), started.elapsed().as_secs_f64()));
                let path = self.quantile_model_path(family);
                save_json(&path, &Artifact { config_hash: self.hash.clone(), model: &set })?;
                models.push(ModelRecord::new(family, "quantile", &path, matrix.n_rows(), spec.n_features(), None)?);
            }
        }
        let summary = TrainSummary {
            schema: REPORT_SCHEMA,
            config_hash: self.hash.clone(),
            dataset_id: data.manifest.dataset_id.clone(),
            n_train_series: split.train.len(),
            n_test_series: split.test.len(),
            models,
        };
        save_json(&self.models_dir().join("train_summary.json"), &summary)?;
        save_json(&self.models_dir().join("train_timings.json"), &timings)?;
        Ok(summary)
    }

    pub fn load_point_model(&self, family: Family) -> Result<ForecastModel> {
        let a: Artifact<ForecastModel> = load_json(&self.point_model_path(family))?;
        crate::learners::check_schema("model file", a.model.schema)?;
        Ok(a.model)
    }

    pub fn load_quantile_set(&self, family: Family) -> Result<QuantileSet> {
        let a: Artifact<QuantileSet> = load_json(&self.quantile_model_path(family))?;
        crate::learners::check_schema("quantile model file", a.model.schema)?;
        Ok(a.model)
    }

    /// Runs `study` with every model of the configured families found in the
    /// models directory and writes the JSON report and CSV side files.
    pub fn evaluate(&self, study: Study) -> Result<StudyReport> {
        let started = Instant::now();
        let point: Vec<(Family, ForecastModel)> = self
            .config
            .families
            .iter()
            .filter(|f| self.point_model_path(**f).exists())
            .map(|&f| Ok((f, self.load_point_model(f)?)))
            .collect::<Result<_>>()?;
        let quantile: Vec<(Family, QuantileSet)> = self
            .config
            .families
            .iter()
            .filter(|f| self.quantile_model_path(**f).exists())
            .map(|&f| Ok((f, self.load_quantile_set(f)?)))
            .collect::<Result<_>>()?;
        if point.is_empty() && quantile.is_empty() {
            return Err(Error::InsufficientData(format!("no trained models in {}", self.models_dir().display())));
        }
        let name = study.name();
        let out_dir = self.reports_dir();
        std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        let mut report = StudyReport::new(&name, &self.hash);
        match study {
            Study::Strong | Study::Weak => {
                let strong = self.load_dataset(&self.dataset_dir(TnStrength::Strong))?;
                let split = self.split(&strong)?;
                let (data, splits): (LoadedDataset, Vec<(&str, Vec<usize>)>) = if study == Study::Strong {
                    (strong, vec![("train", split.train.clone()), ("test", split.test.clone())])
                } else {
                    let weak = self.load_dataset(&self.dataset_dir(TnStrength::Weak))?;
                    let test = self.split(&weak)?.test;
                    (weak, vec![("test", test)])
                };
                report.dataset_id = data.manifest.dataset_id.clone();
                let test_idx = &splits.last().expect("test split").1;
                let shown = self.shown_series(&data, test_idx);
                let mut rollout_rows = Vec::new();
                let mut diff_rows = Vec::new();
                for (family, model) in &point {
                    check_model_fits(model, &data.series[0])?;
                    for (part, idx) in &splits {
                        let series = data.select(idx);
                        let rollouts: Vec<Rollout> =
                            series.par_iter().map(|s| closed_loop_rollout(model, s)).collect::<Result<_>>()?;
                        report.point.push(PointEntry {
                            family: *family,
                            split: part.to_string(),
                            n_series: series.len(),
                            full: point_scores(&series, &rollouts, Window::Full)?,
                            dyn_window: point_scores(&series, &rollouts, Window::Dyn)?,
                        });
                        if *part == "test" {
                            for &i in &shown {
                                let pos = idx.iter().position(|&j| j == i).expect("shown series is in the test split");
                                let (s, r) = (&series[pos], &rollouts[pos]);
                                report::push_rollout_rows(&mut rollout_rows, *family, s, r);
                                for t in 0..2 {
                                    let pairs = time_diff_pairs(std::slice::from_ref(s), std::slice::from_ref(r), t, Window::Full)?;
                                    report::push_diff_rows(&mut diff_rows, *family, t, s, &pairs);
                                }
                            }
                        }
                    }
                }
                let series = data.select(test_idx);
                let mut band_rows = Vec::new();
                for (family, set) in &quantile {
                    check_model_fits(&set.median, &data.series[0])?;
                    let mut rollouts: Vec<QuantileRollout> = series
                        .par_iter()
                        .map(|s| QuantileRollout::run(set, s, self.config.band_feedback))
                        .collect::<Result<_>>()?;
                    let rate = rollouts.iter().map(QuantileRollout::crossing_rate).sum::<f64>() / rollouts.len() as f64;
                    report.crossing.push(CrossingEntry { family: *family, crossing_rate: rate, fixed: self.config.crossing_fix });
                    if self.config.crossing_fix {
                        rollouts.iter_mut().for_each(QuantileRollout::rearrange);
                    }
                    for &c in &set.confidences() {
                        for window in [Window::Full, Window::Dyn] {
                            let scores = band_scores(&series, &rollouts, c, window)?;
                            report.bands.push(BandEntry { family: *family, scores });
                        }
                    }
                    for &i in &shown {
                        let pos = test_idx.iter().position(|&j| j == i).expect("shown series is in the test split");
                        report::push_band_rows(&mut band_rows, *family, &series[pos], &rollouts[pos]);
                    }
                }
                report::write_csv(&out_dir.join(format!("{name}_rollouts.csv")), &report::ROLLOUT_HEADER, &rollout_rows)?;
                report::write_csv(&out_dir.join(format!("{name}_time_diff.csv")), &report::DIFF_HEADER, &diff_rows)?;
                report::write_csv(&out_dir.join(format!("{name}_bands.csv")), &report::BAND_HEADER, &band_rows)?;
            }
            Study::McCompare { step_kw } => {
                report.mc = Some(self.mc_compare(step_kw, &quantile, &out_dir, &name)?);
                report.dataset_id = report.mc.as_ref().map(|m| m.dataset_id.clone()).unwrap_or_default();
            }
        }
        save_json(&out_dir.join(format!("{name}.json")), &report)?;
        let elapsed = started.elapsed().as_secs_f64();
        save_json(&out_dir.join(format!("{name}_timings.json")), &[("evaluate", elapsed)])?;
        info!("study {name} finished in {elapsed:.1} s");
        Ok(report)
    }

    /// The first `report_series_per_step` indices of `idx` for every step.
    fn shown_series(&self, data: &LoadedDataset, idx: &[usize]) -> Vec<usize> {
        let mut counts: Vec<(f64, usize)> = Vec::new();
        let mut out = Vec::new();
        for &i in idx {
            let step = data.keys[i].step_kw;
            let slot = match counts.iter().position(|c| c.0 == step) {
                Some(p) => p,
                None => {
                    counts.push((step, 0));
                    counts.len() - 1
                }
            };
            if counts[slot].1 < self.config.report_series_per_step {
                counts[slot].1 += 1;
                out.push(i);
            }
        }
        out
    }

    fn mc_compare(&self, step_kw: f64, quantile: &[(Family, QuantileSet)], out_dir: &Path, name: &str) -> Result<McReport> {
        if quantile.is_empty() {
            return Err(Error::InsufficientData("the Monte Carlo comparison needs at least one quantile model".into()));
        }
        let mc = &self.config.mc;
        let campaign = CampaignConfig {
            n_sets: mc.n_sets,
            steps_kw: vec![step_kw],
            master_seed: mc.master_seed,
            ..self.config.campaign.clone()
        };
        let dir = self.mc_dataset_dir(step_kw);
        run_campaign(&campaign, &self.system_spec(mc.tn)?, &dir)?;
        let data = self.load_dataset(&dir)?;
        let mut order: Vec<usize> = (0..data.series.len()).collect();
        let max_df: Vec<f64> = data
            .manifest
            .successful()
            .map(|e| e.max_frequency_deviation_hz.unwrap_or(f64::NAN))
            .collect();
        order.sort_by(|&a, &b| max_df[a].total_cmp(&max_df[b]).then(a.cmp(&b)));
        let reference = order[(order.len() - 1) / 2];
        let ref_series = &data.series[reference];
        let mut coverage = Vec::new();
        let mut band_rows = Vec::new();
        for (family, set) in quantile {
            check_model_fits(&set.median, ref_series)?;
            let mut q = QuantileRollout::run(set, ref_series, self.config.band_feedback)?;
            let crossing_rate = q.crossing_rate();
            q.rearrange();
            for &c in &set.confidences() {
                let [ip, iq] = envelope_coverage(&q, &data.series, c)?;
                coverage.push(McCoverage { family: *family, confidence: c, ip, iq, crossing_rate });
            }
            report::push_band_rows(&mut band_rows, *family, ref_series, &q);
        }
        report::write_csv(&out_dir.join(format!("{name}_bands.csv")), &report::BAND_HEADER, &band_rows)?;
        let mut ensemble_rows = Vec::new();
        for (key, s) in data.keys.iter().zip(&data.series) {
            for k in s.event_index()..s.len() {
                ensemble_rows.push(vec![key.set_id.to_string(), format!("{:.2}", s.time(k)), s.ip[k].to_string(), s.iq[k].to_string()]);
            }
        }
        report::write_csv(&out_dir.join(format!("{name}_ensemble.csv")), &["set_id", "t", "ip", "iq"], &ensemble_rows)?;
        Ok(McReport {
            step_kw,
            tn_profile: mc.tn.to_string(),
            dataset_id: data.manifest.dataset_id.clone(),
            n_trajectories: data.series.len(),
            reference_set_id: data.keys[reference].set_id,
            reference_max_frequency_deviation_hz: max_df[reference],
            coverage,
        })
    }
}

fn check_model_fits(model: &ForecastModel, series: &UniformSeries) -> Result<()> {
    let needed = model.spec.max_lag() + 1;
    if series.len() < needed {
        return Err(Error::DimensionMismatch { expected: needed, got: series.len() });
    }
    Ok(())
}

/// One-step-ahead R2 per target on the true lagged currents of `series`,
/// using every tenth row.
fn open_loop_scores(model: &ForecastModel, series: &[UniformSeries]) -> Result<OpenLoopScores> {
    let matrix = build_dataset(series, &model.spec, 10)?;
    let pred: Vec<[f64; 2]> = (0..matrix.n_rows()).map(|i| model.predict(matrix.row(i))).collect::<Result<_>>()?;
    let r2 = |t: usize| {
        let y = matrix.target(t);
        let yhat: Vec<f64> = pred.iter().map(|p| p[t]).collect();
        crate::evaluate::r2(&y, &yhat).ok()
    };
    Ok(OpenLoopScores { ip_r2: r2(0), iq_r2: r2(1) })
}
