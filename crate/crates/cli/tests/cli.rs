use std::path::Path;
use std::process::{Command, Output};

use dneq::pipeline::{StudyReport, TrainSummary};
use dneq::simulator::Trajectory;

fn dneq(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dneq"))
        .args(args)
        .env("DNEQ_OUTPUT_ROOT", root)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(root: &Path, args: &[&str]) -> String {
    let out = dneq(root, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> T {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn simulate_variants() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(root, &["simulate", "--step-kw", "0", "--seed", "7", "--out", root.join("flat.csv").to_str().unwrap()]);
    let flat = Trajectory::read(root.join("flat.csv")).unwrap();
    assert!(Trajectory::max_deviation(&flat.omega) < 1e-6);
    assert!(Trajectory::max_deviation(&flat.ip) < 1e-6);

    ok(root, &["simulate", "--step-kw", "225", "--tn", "strong", "--seed", "7", "--out", root.join("s.csv").to_str().unwrap()]);
    ok(root, &["simulate", "--step-kw", "225", "--tn", "weak", "--seed", "7", "--out", root.join("w.csv").to_str().unwrap()]);
    let strong = Trajectory::read(root.join("s.csv")).unwrap();
    let weak = Trajectory::read(root.join("w.csv")).unwrap();
    assert!(weak.max_frequency_deviation_hz() > strong.max_frequency_deviation_hz());
    assert!(strong.time.last().copied().unwrap() >= 12.0 - 1e-9);
}

#[test]
fn reduced_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(root, &["--reduced", "dataset", "--tn", "strong"]);
    ok(root, &["--reduced", "dataset", "--tn", "weak"]);
    let trained = ok(root, &["--reduced", "train", "--family", "linreg,gbt,nn_t", "--target", "ip", "--quantiles", "60,90"]);
    assert!(trained.contains("gbt point"), "{trained}");
    assert!(trained.contains("one-step test R2 ip") && !trained.contains(", iq"), "{trained}");

    let summary: TrainSummary = read_json(&root.join("models/train_summary.json"));
    assert_eq!(summary.models.iter().filter(|m| m.kind == "quantile").count(), 2);
    assert_eq!((summary.n_train_series, summary.n_test_series), (32, 8));
    let artifact = std::fs::read_to_string(root.join("models/point_gbt.json")).unwrap();
    assert!(artifact.contains(&summary.config_hash));

    for study in ["strong", "weak"] {
        ok(root, &["--reduced", "evaluate", "--study", study]);
        let report: StudyReport = read_json(&root.join(format!("reports/{study}.json")));
        assert_eq!(report.config_hash.len(), 64);
        assert_ne!(report.config_hash, summary.config_hash, "train overrode the confidences");
        assert!(report.point.iter().all(|p| p.full.n_samples > 0));
        assert_eq!(report.bands.len(), 2 * 2 * 2);
        for side in ["rollouts", "time_diff", "bands"] {
            assert!(root.join(format!("reports/{study}_{side}.csv")).is_file());
        }
    }

    let out = ok(root, &["--reduced", "evaluate", "--study", "mc-compare", "--step-kw", "100"]);
    assert!(out.contains("MC points inside"), "{out}");
    let report: StudyReport = read_json(&root.join("reports/mc_compare_+100kW.json"));
    let mc = report.mc.unwrap();
    assert_eq!(mc.n_trajectories, 10);
    for family in [dneq::learners::Family::Gbt, dneq::learners::Family::NnT] {
        let cov = mc.coverage_of(family);
        assert_eq!(cov.len(), 2);
        assert!(cov[1].ip >= cov[0].ip && cov[1].iq >= cov[0].iq);
    }
}

#[test]
fn schema_mismatch_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    ok(root, &["--reduced", "dataset", "--sets", "3", "--steps-kw", "-25,225"]);
    let manifest = root.join("datasets/strong/manifest.json");
    let text = std::fs::read_to_string(&manifest).unwrap().replacen("\"schema\": 1", "\"schema\": 7", 1);
    std::fs::write(&manifest, text).unwrap();
    let out = dneq(root, &["--reduced", "train", "--family", "linreg", "--quantiles", "none"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("schema"));
}

#[test]
fn config_prints_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["config"]);
    let c: dneq::pipeline::RunConfig = serde_json::from_str(&out).unwrap();
    assert_eq!(c, dneq::pipeline::RunConfig::default());
    let unknown = dneq(dir.path(), &["train", "--family", "svm"]);
    assert!(!unknown.status.success());
}
