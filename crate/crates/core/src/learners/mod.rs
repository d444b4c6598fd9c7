//! Point and quantile forecasters of the interface currents: least squares,
//! elastic net, gradient-boosted trees and two feed-forward networks, behind
//! one self-describing model type.

mod gbt;
mod linear;
mod nn;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::info;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{FeatureMatrix, FeatureSpec, Forecaster, Scaler};

pub use gbt::{fit_gbt, GbtModel, GbtParams, RegressionTree, TreeNode};
pub use linear::{fit_elastic_net, fit_least_squares, soft_threshold, CdOptions, ElasticNetReport, LinearModel};
pub use nn::{fit_nn, Activation, Architecture, BatchNorm, Dense, Gradients, Mlp, NnParams};

pub const MODEL_SCHEMA: u32 = 1;

/// Nominal confidences of the prediction intervals.
pub const STANDARD_CONFIDENCES: [f64; 6] = [0.60, 0.80, 0.90, 0.95, 0.98, 0.99];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Loss {
    Squared,
    Pinball { q: f64 },
}

impl Loss {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Loss::Pinball { q } if !(0.0 < q && q < 1.0) => {
                Err(Error::InvalidParameter(format!("quantile {q} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    pub fn value(&self, y: f64, yhat: f64) -> f64 {
        match *self {
            Loss::Squared => (y - yhat) * (y - yhat),
            Loss::Pinball { q } => pinball(y, yhat, q),
        }
    }

    /// `-dL/dyhat`.
    pub fn negative_gradient(&self, y: f64, yhat: f64) -> f64 {
        match *self {
            Loss::Squared => 2.0 * (y - yhat),
            Loss::Pinball { q } => {
                if y >= yhat {
                    q
                } else {
                    q - 1.0
                }
            }
        }
    }

    pub fn mean(&self, y: &[f64], yhat: &[f64]) -> f64 {
        y.iter().zip(yhat).map(|(&a, &b)| self.value(a, b)).sum::<f64>() / y.len().max(1) as f64
    }
}

fn pinball(y: f64, yhat: f64, q: f64) -> f64 {
    if y >= yhat {
        q * (y - yhat)
    } else {
        (1.0 - q) * (yhat - y)
    }
}

/// Mean pinball loss of predictions `yhat` for quantile `q`.
pub fn pinball_loss(y: &[f64], yhat: &[f64], q: f64) -> Result<f64> {
    Loss::Pinball { q }.validate()?;
    if y.len() != yhat.len() {
        return Err(Error::DimensionMismatch { expected: y.len(), got: yhat.len() });
    }
    if y.is_empty() {
        return Err(Error::InsufficientData("pinball loss of no samples".into()));
    }
    Ok(y.iter().zip(yhat).map(|(&a, &b)| pinball(a, b, q)).sum::<f64>() / y.len() as f64)
}

/// Smallest sample with at least a fraction `q` of the data at or below it.
/// Reorders `values`.
pub(crate) fn quantile_of(values: &mut [f64], q: f64) -> f64 {
    let n = values.len();
    let k = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
    let (_, v, _) = values.select_nth_unstable_by(k, f64::total_cmp);
    *v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Linreg,
    Elnet,
    Gbt,
    NnT,
    NnB,
}

impl Family {
    pub const ALL: [Family; 5] = [Family::Linreg, Family::Elnet, Family::Gbt, Family::NnT, Family::NnB];

    pub fn name(self) -> &'static str {
        match self {
            Family::Linreg => "linreg",
            Family::Elnet => "elnet",
            Family::Gbt => "gbt",
            Family::NnT => "nn_t",
            Family::NnB => "nn_b",
        }
    }

    pub fn supports_quantiles(self) -> bool {
        matches!(self, Family::Gbt | Family::NnT | Family::NnB)
    }

    /// Default lag depth: `v, omega` at `0..=n`, fed-back currents at `1..=n`.
    pub fn default_lags(self) -> usize {
        match self {
            Family::Linreg | Family::Gbt => 1,
            Family::Elnet => 10,
            Family::NnT | Family::NnB => 5,
        }
    }

    pub fn default_spec(self) -> FeatureSpec {
        FeatureSpec::up_to(self.default_lags())
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s || f.name().replace('_', "") == s || f.name().replace('_', "-") == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown model family '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElnetParams {
    pub alpha: f64,
    /// L1 share per target `(i_p, i_q)`.
    pub rho: [f64; 2],
    pub cd: CdOptions,
}

/// Hyper-parameters of every family.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyper {
    pub elnet: ElnetParams,
    /// Per target `(i_p, i_q)`.
    pub gbt: [GbtParams; 2],
    pub nn_t: NnParams,
    pub nn_b: NnParams,
    /// When set, predictions are clamped to the training target range widened
    /// on each side by this fraction of its span.
    pub output_margin: Option<f64>,
}

impl Default for Hyper {
    fn default() -> Self {
        let tree = |n_estimators, min_samples_leaf| GbtParams { n_estimators, learning_rate: 0.1, max_depth: 5, min_samples_leaf };
        Self {
            elnet: ElnetParams { alpha: 0.1, rho: [0.12, 0.24], cd: CdOptions::default() },
            gbt: [tree(300, 11), tree(225, 6)],
            nn_t: NnParams::new(Architecture::Trapezoid, 300),
            nn_b: NnParams::new(Architecture::Block, 200),
            output_margin: Some(0.5),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelBody {
    Linear { targets: [LinearModel; 2] },
    Gbt { targets: [GbtModel; 2] },
    Nn { net: Mlp },
}

/// A trained forecaster with everything needed to apply it: feature spec,
/// scalers (fit on its training rows) and parameters. Works on unscaled
/// delta rows and returns unscaled `(Δi_p, Δi_q)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastModel {
    pub schema: u32,
    pub family: Family,
    pub loss: Loss,
    pub spec: FeatureSpec,
    pub x_scaler: Scaler,
    pub y_scaler: Scaler,
    pub body: ModelBody,
    /// `[min, max]` per target applied to every prediction.
    #[serde(default)]
    pub output_bounds: Option<[[f64; 2]; 2]>,
}

impl ForecastModel {
    pub fn predict(&self, row: &[f64]) -> Result<[f64; 2]> {
        let f = self.spec.n_features();
        if row.len() != f {
            return Err(Error::DimensionMismatch { expected: f, got: row.len() });
        }
        let mut z = row.to_vec();
        self.x_scaler.apply(&mut z);
        let mut out = match &self.body {
            ModelBody::Linear { targets } => [targets[0].predict(&z), targets[1].predict(&z)],
            ModelBody::Gbt { targets } => [targets[0].predict(&z), targets[1].predict(&z)],
            ModelBody::Nn { net } => {
                let o = net.predict_one(&z);
                [o[0], o[1]]
            }
        };
        self.y_scaler.invert(&mut out);
        if let Some(b) = &self.output_bounds {
            for t in 0..2 {
                out[t] = out[t].clamp(b[t][0], b[t][1]);
            }
        }
        Ok(out)
    }

    /// Linear coefficients of target `t` in unscaled units, for linear families.
    pub fn linear_coefficients(&self, t: usize) -> Option<LinearModel> {
        let ModelBody::Linear { targets } = &self.body else { return None };
        let m = &targets[t];
        let sy = if self.y_scaler.constant[t] { 1.0 } else { self.y_scaler.std[t] };
        let my = if self.y_scaler.constant[t] { 0.0 } else { self.y_scaler.mean[t] };
        let mut intercept = m.intercept;
        let coef = m
            .coef
            .iter()
            .enumerate()
            .map(|(j, &b)| {
                if self.x_scaler.constant[j] {
                    b
                } else {
                    intercept -= b * self.x_scaler.mean[j] / self.x_scaler.std[j];
                    b / self.x_scaler.std[j]
                }
            })
            .map(|b| b * sy)
            .collect();
        Some(LinearModel { coef, intercept: my + sy * intercept })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let model: Self = load_json(path.as_ref())?;
        check_schema("model file", model.schema)?;
        Ok(model)
    }
}

impl Forecaster for ForecastModel {
    fn feature_spec(&self) -> &FeatureSpec {
        &self.spec
    }

    fn predict_row(&self, row: &[f64]) -> Result<[f64; 2]> {
        self.predict(row)
    }
}

pub(crate) fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string(value)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub(crate) fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn check_schema(what: &str, found: u32) -> Result<()> {
    if found != MODEL_SCHEMA {
        return Err(Error::SchemaVersion { what: what.into(), expected: MODEL_SCHEMA, found });
    }
    Ok(())
}

/// Fits one model of `family` with `loss` on an open-loop matrix built with `spec`.
pub fn train(matrix: &FeatureMatrix, spec: &FeatureSpec, family: Family, loss: Loss, hyper: &Hyper) -> Result<ForecastModel> {
    spec.validate()?;
    loss.validate()?;
    let f = spec.n_features();
    if matrix.n_features != f {
        return Err(Error::DimensionMismatch { expected: f, got: matrix.n_features });
    }
    let n = matrix.n_rows();
    if n < f.max(2) {
        return Err(Error::InsufficientData(format!("{n} training rows for {f} features")));
    }
    if matrix.x.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter("training matrix has non-finite features".into()));
    }
    if let (Family::Linreg | Family::Elnet, Loss::Pinball { .. }) = (family, loss) {
        return Err(Error::InvalidParameter(format!("{family} has no quantile variant")));
    }
    let x_scaler = Scaler::fit(&matrix.x, f)?;
    let y_scaler = Scaler::fit_targets(&matrix.y)?;
    let x = x_scaler.transform(&matrix.x);
    let y: Vec<f64> = {
        let flat: Vec<f64> = matrix.y.iter().flat_map(|t| t.iter().copied()).collect();
        y_scaler.transform(&flat)
    };
    let target = |t: usize| -> Vec<f64> { y.iter().skip(t).step_by(2).copied().collect() };
    let started = std::time::Instant::now();
    let body = match family {
        Family::Linreg => ModelBody::Linear {
            targets: [fit_least_squares(&x, &target(0), f, true)?, fit_least_squares(&x, &target(1), f, true)?],
        },
        Family::Elnet => {
            let e = &hyper.elnet;
            let fit = |t: usize| fit_elastic_net(&x, &target(t), f, e.alpha, e.rho[t], true, e.cd).map(|r| r.0);
            ModelBody::Linear { targets: [fit(0)?, fit(1)?] }
        }
        Family::Gbt => {
            let (a, b) = rayon::join(
                || fit_gbt(&x, &target(0), f, &hyper.gbt[0], loss),
                || fit_gbt(&x, &target(1), f, &hyper.gbt[1], loss),
            );
            ModelBody::Gbt { targets: [a?.0, b?.0] }
        }
        Family::NnT | Family::NnB => {
            let p = if family == Family::NnT { &hyper.nn_t } else { &hyper.nn_b };
            ModelBody::Nn { net: fit_nn(&x, &y, f, 2, p, loss)?.0 }
        }
    };
    info!("trained {family} ({loss:?}) on {n} rows x {f} features in {:.2?}", started.elapsed());
    let output_bounds = match hyper.output_margin {
        Some(m) if m.is_finite() && m >= 0.0 => Some(target_bounds(&matrix.y, m)),
        Some(m) => return Err(Error::InvalidParameter(format!("output margin {m} must be finite and non-negative"))),
        None => None,
    };
    Ok(ForecastModel { schema: MODEL_SCHEMA, family, loss, spec: spec.clone(), x_scaler, y_scaler, body, output_bounds })
}

fn target_bounds(y: &[[f64; 2]], margin: f64) -> [[f64; 2]; 2] {
    let mut b = [[f64::INFINITY, f64::NEG_INFINITY]; 2];
    for row in y {
        for t in 0..2 {
            b[t][0] = b[t][0].min(row[t]);
            b[t][1] = b[t][1].max(row[t]);
        }
    }
    for bt in &mut b {
        let span = bt[1] - bt[0];
        bt[0] -= margin * span;
        bt[1] += margin * span;
    }
    b
}

/// `(0.5 - Q/2, 0.5 + Q/2)`, rounded to 12 decimals.
pub fn quantile_pair(confidence: f64) -> Result<(f64, f64)> {
    if !(0.0 < confidence && confidence < 1.0) {
        return Err(Error::InvalidParameter(format!("confidence {confidence} outside (0, 1)")));
    }
    let round = |v: f64| (v * 1e12).round() / 1e12;
    Ok((round(0.5 - confidence / 2.0), round(0.5 + confidence / 2.0)))
}

/// Prediction interval of nominal confidence `confidence` with its median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileBand {
    pub confidence: f64,
    pub lower: ForecastModel,
    pub median: ForecastModel,
    pub upper: ForecastModel,
}

/// Bands at several confidences of one family. The median model is shared.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSet {
    pub schema: u32,
    pub family: Family,
    pub median: ForecastModel,
    /// `(confidence, lower, upper)`, by increasing confidence.
    pub bands: Vec<(f64, ForecastModel, ForecastModel)>,
}

impl QuantileSet {
    pub fn band(&self, confidence: f64) -> Option<QuantileBand> {
        self.bands.iter().find(|b| (b.0 - confidence).abs() < 1e-9).map(|(c, lo, hi)| QuantileBand {
            confidence: *c,
            lower: lo.clone(),
            median: self.median.clone(),
            upper: hi.clone(),
        })
    }

    pub fn confidences(&self) -> Vec<f64> {
        self.bands.iter().map(|b| b.0).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_json(path.as_ref(), self)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let set: Self = load_json(path.as_ref())?;
        check_schema("quantile model file", set.schema)?;
        Ok(set)
    }
}

pub fn train_quantile_band(matrix: &FeatureMatrix, spec: &FeatureSpec, family: Family, confidence: f64, hyper: &Hyper) -> Result<QuantileBand> {
    let set = train_quantile_set(matrix, spec, family, &[confidence], hyper)?;
    Ok(set.band(confidence).expect("band was trained"))
}

/// Trains the median and a lower/upper pair per confidence, independently
/// and in parallel.
pub fn train_quantile_set(matrix: &FeatureMatrix, spec: &FeatureSpec, family: Family, confidences: &[f64], hyper: &Hyper) -> Result<QuantileSet> {
    if !family.supports_quantiles() {
        return Err(Error::InvalidParameter(format!("{family} has no quantile variant")));
    }
    let mut sorted = confidences.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut levels = vec![0.5];
    for &c in &sorted {
        let (lo, hi) = quantile_pair(c)?;
        levels.extend([lo, hi]);
    }
    let models: Vec<ForecastModel> = levels
        .par_iter()
        .map(|&q| train(matrix, spec, family, Loss::Pinball { q }, hyper))
        .collect::<Result<_>>()?;
    let mut it = models.into_iter();
    let median = it.next().expect("median");
    let bands = sorted.iter().map(|&c| (c, it.next().expect("lower"), it.next().expect("upper"))).collect();
    Ok(QuantileSet { schema: MODEL_SCHEMA, family, median, bands })
}

/// Stacks rows into a matrix (used by batch inference helpers).
pub fn rows_to_matrix(rows: &[f64], n_features: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(rows.len() / n_features, n_features, rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn pinball_branches() {
        assert_eq!(pinball_loss(&[1.0], &[0.0], 0.9).unwrap(), 0.9);
        assert!((pinball_loss(&[0.0], &[1.0], 0.9).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(pinball_loss(&[0.0], &[1.0], 0.9).unwrap(), 1.0 - 0.9);
        let y = [0.3, -1.0, 2.0];
        let yhat = [0.0, 0.5, 2.5];
        let mae = y.iter().zip(&yhat).map(|(a, b): (&f64, &f64)| (a - b).abs()).sum::<f64>() / 3.0;
        assert!((pinball_loss(&y, &yhat, 0.5).unwrap() - mae / 2.0).abs() < 1e-15);
        assert!(pinball_loss(&y, &yhat, 1.0).is_err());
    }

    #[test]
    fn pinball_is_asymmetric_above_the_median() {
        for q in [0.6, 0.75, 0.9, 0.99] {
            assert!(pinball_loss(&[1.0], &[0.0], q).unwrap() > pinball_loss(&[0.0], &[1.0], q).unwrap());
        }
    }

    #[test]
    fn ninety_percent_pair() {
        assert_eq!(quantile_pair(0.9).unwrap(), (0.05, 0.95));
        assert_eq!(quantile_pair(0.6).unwrap(), (0.2, 0.8));
        assert!(quantile_pair(1.0).is_err());
    }

    #[test]
    fn family_names() {
        for f in Family::ALL {
            assert_eq!(f.name().parse::<Family>().unwrap(), f);
        }
        assert_eq!("nn-b".parse::<Family>().unwrap(), Family::NnB);
        assert!("svr".parse::<Family>().is_err());
        assert_eq!(Family::Linreg.default_spec().n_features(), 6);
    }

    #[test]
    fn table_defaults() {
        let h = Hyper::default();
        assert_eq!((h.gbt[0].n_estimators, h.gbt[0].min_samples_leaf, h.gbt[0].max_depth), (300, 11, 5));
        assert_eq!((h.gbt[1].n_estimators, h.gbt[1].min_samples_leaf), (225, 6));
        assert_eq!((h.elnet.alpha, h.elnet.rho), (0.1, [0.12, 0.24]));
        assert_eq!((h.nn_t.batch_size, h.nn_b.batch_size, h.nn_t.epochs), (300, 200, 40));
        assert_eq!(h.nn_t.dropout, 0.01);
    }

    fn synthetic(n: usize, seed: u64) -> FeatureMatrix {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut m = FeatureMatrix::empty(6);
        m.series_start.push(0);
        for k in 0..n {
            let row: Vec<f64> = (0..6).map(|_| rng.random_range(-0.01..0.01)).collect();
            let p = 2.0 * row[0] - 3.0 * row[2] + 0.5 * row[4] + 0.001;
            let q = -row[1] + row[5];
            m.x.extend(row);
            m.y.push([p, q]);
            m.time.push(k as f64);
        }
        m
    }

    #[test]
    fn linreg_recovers_unscaled_coefficients() {
        let m = synthetic(200, 1);
        let spec = FeatureSpec::up_to(1);
        let model = train(&m, &spec, Family::Linreg, Loss::Squared, &Hyper::default()).unwrap();
        let c = model.linear_coefficients(0).unwrap();
        let want = [2.0, 0.0, -3.0, 0.0, 0.5, 0.0];
        for (a, b) in c.coef.iter().zip(want) {
            assert!((a - b).abs() < 1e-8, "{:?}", c.coef);
        }
        assert!((c.intercept - 0.001).abs() < 1e-8);
        let row = m.row(3);
        let direct = model.predict(row).unwrap()[0];
        assert!((direct - c.predict(row)).abs() < 1e-12);
    }

    #[test]
    fn quantile_linreg_is_refused() {
        let m = synthetic(50, 2);
        let r = train(&m, &FeatureSpec::up_to(1), Family::Linreg, Loss::Pinball { q: 0.9 }, &Hyper::default());
        assert!(r.is_err());
    }

    #[test]
    fn gaussian_quantile_from_constant_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut m = FeatureMatrix::empty(6);
        m.series_start.push(0);
        for k in 0..10_000 {
            m.x.extend([0.0; 6]);
            let z: f64 = StandardNormal.sample(&mut rng);
            m.y.push([z, -z]);
            m.time.push(k as f64);
        }
        let model = train(&m, &FeatureSpec::up_to(1), Family::Gbt, Loss::Pinball { q: 0.9 }, &Hyper::default()).unwrap();
        let p = model.predict(&[0.0; 6]).unwrap();
        assert!((p[0] - 1.2816).abs() < 0.05, "{p:?}");
        assert!((p[1] - 1.2816).abs() < 0.05, "{p:?}");
    }

    #[test]
    fn save_load_is_bit_identical() {
        let m = synthetic(300, 4);
        let spec = FeatureSpec::up_to(1);
        let mut hyper = Hyper::default();
        hyper.gbt[0].n_estimators = 20;
        hyper.gbt[1].n_estimators = 20;
        hyper.nn_t.epochs = 2;
        let dir = tempfile::tempdir().unwrap();
        for family in Family::ALL {
            let model = train(&m, &spec, family, Loss::Squared, &hyper).unwrap();
            let path = dir.path().join(format!("{family}.json"));
            model.save(&path).unwrap();
            let back = ForecastModel::load(&path).unwrap();
            for i in 0..m.n_rows() {
                assert_eq!(model.predict(m.row(i)).unwrap(), back.predict(m.row(i)).unwrap());
            }
        }
    }

    #[test]
    fn wrong_schema_refused() {
        let m = synthetic(50, 5);
        let mut model = train(&m, &FeatureSpec::up_to(1), Family::Linreg, Loss::Squared, &Hyper::default()).unwrap();
        model.schema = MODEL_SCHEMA + 1;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        model.save(&path).unwrap();
        assert!(matches!(ForecastModel::load(&path), Err(Error::SchemaVersion { .. })));
    }

    #[test]
    fn prediction_checks_dimension_and_is_deterministic() {
        let m = synthetic(100, 6);
        let model = train(&m, &FeatureSpec::up_to(1), Family::Linreg, Loss::Squared, &Hyper::default()).unwrap();
        assert!(model.predict(&[0.0; 5]).is_err());
        assert_eq!(model.predict(m.row(0)).unwrap(), model.predict(m.row(0)).unwrap());
    }
}
