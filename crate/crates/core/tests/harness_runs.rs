use std::fs;

use sticky_averaging::harness::{run, ExperimentConfig};

fn config(text: &str, dir: &std::path::Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::from_toml(text).unwrap();
    cfg.output.dir = dir.to_path_buf();
    cfg
}

#[test]
fn coefficients_run_writes_tables_and_passes() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&config("experiment = \"coefficients\"\n[coefficients]\ncells = 128\n", dir.path())).unwrap();
    assert!(report.passed(), "{:?}", report.assertions);
    for name in ["coefficients.csv", "coefficients.json", "manifest.json", "summary.txt"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["experiment"], "coefficients");
}

#[test]
fn bvp_run_reports_the_gluing_residual() {
    let dir = tempfile::tempdir().unwrap();
    let report = run(&config("experiment = \"bvp\"\n[output]\nsvg = true\n", dir.path())).unwrap();
    assert!(report.assertions.iter().any(|a| a.name == "gluing residual" && a.passed));
    let csv = fs::read_to_string(dir.path().join("bvp.csv")).unwrap();
    assert!(csv.starts_with("edge,h,v,flux"));
    assert!(fs::read_to_string(dir.path().join("bvp.svg")).unwrap().starts_with("<svg"));
}

#[test]
fn small_occupation_run_records_seed_and_generator() {
    let dir = tempfile::tempdir().unwrap();
    let text = "experiment = \"occupation\"\neps = [0.1]\nhorizon = 2.0\nn_paths = 8\nseed = 99\n";
    run(&config(text, dir.path())).unwrap();
    let csv = fs::read_to_string(dir.path().join("occupation_paths.csv")).unwrap();
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().ends_with("rng,seed"));
    assert_eq!(lines.count(), 8);
    assert!(csv.contains(",99\n"));
}
