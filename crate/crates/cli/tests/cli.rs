use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use stairs_core::experiments::{
    default_config_path, Manifest, COEFFS_HEADER, COUPLING_TABLE_HEADER, SWEEP_SUMMARY_HEADER,
};

fn shipped(name: &str) -> Value {
    serde_json::from_str(&fs::read_to_string(default_config_path(name)).unwrap()).unwrap()
}

fn run(cmd: &str, config: &Value, out: &Path, extra: &[&str]) -> Output {
    let path = out.join(format!("{cmd}_config.json"));
    fs::create_dir_all(out).unwrap();
    fs::write(&path, serde_json::to_string(config).unwrap()).unwrap();
    Command::new(env!("CARGO_BIN_EXE_stairs-lab"))
        .arg(cmd)
        .arg("--config")
        .arg(&path)
        .arg("--out")
        .arg(out)
        .args(["--threads", "1"])
        .args(extra)
        .output()
        .unwrap()
}

fn run_ok(cmd: &str, config: &Value, out: &Path, extra: &[&str]) -> Output {
    let o = run(cmd, config, out, extra);
    assert!(
        o.status.success(),
        "{cmd}: {}",
        String::from_utf8_lossy(&o.stderr)
    );
    o
}

fn first_line(path: PathBuf) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .next()
        .unwrap()
        .to_string()
}

fn manifest(out: &Path) -> Manifest {
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn sample_writes_inputs_and_latents() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("sample.json");
    cfg["n"] = json!(50);
    run_ok("sample", &cfg, dir.path(), &[]);
    let body = fs::read_to_string(dir.path().join("samples.csv")).unwrap();
    let header: Vec<&str> = body.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 1 + 16 + 2);
    assert_eq!((header[0], header[1], header[16]), ("y", "x_0", "x_15"));
    assert_eq!(&header[17..], ["lambda", "nu"]);
    assert_eq!(body.lines().count(), 51);
}

#[test]
fn coeffs_prints_and_writes_the_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("coeffs.json");
    cfg["n_mc"] = json!(20000);
    let o = run_ok("coeffs", &cfg, dir.path(), &[]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert_eq!(stdout.lines().next().unwrap(), COEFFS_HEADER);
    assert_eq!(
        fs::read_to_string(dir.path().join("coeffs.csv")).unwrap(),
        stdout
    );
}

#[test]
fn perceptron_emits_linked_trace_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("perceptron.json");
    cfg["d"] = json!(16);
    run_ok("perceptron", &cfg, dir.path(), &["--seed", "5"]);
    let m = manifest(dir.path());
    assert_eq!(m.command, "perceptron");
    assert_eq!(m.seeds, vec![5]);
    assert_eq!(m.runs.len(), 1);
    assert_eq!(m.runs[0].run_id, "mcm_correlated_q1_d0016_s5");
    assert_eq!(
        first_line(dir.path().join(&m.runs[0].trace)),
        "t,alpha_u,alpha_v"
    );
    let report: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join(&m.runs[0].report)).unwrap())
            .unwrap();
    assert_eq!(report["d"], 16);
    assert_eq!(report["seed"], 5);
}

#[test]
fn ode_writes_trajectory_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("ode.json");
    cfg["t_end"] = json!(1.0);
    run_ok("ode", &cfg, dir.path(), &[]);
    assert_eq!(
        first_line(dir.path().join("ode_trajectory.csv")),
        "t,alpha_u,alpha_v"
    );
    let summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ode_summary.json")).unwrap())
            .unwrap();
    assert!(summary["coeffs"]["c11"].as_f64().unwrap() > 0.0);
}

#[test]
fn sweep_writes_summary_and_fit() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("sweep_cov_only.json");
    cfg["dims"] = json!([8, 12, 16]);
    cfg["seeds"] = json!(2);
    run_ok("sweep", &cfg, dir.path(), &[]);
    let summary = fs::read_to_string(dir.path().join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().next().unwrap(), SWEEP_SUMMARY_HEADER);
    assert_eq!(summary.lines().count(), 4);
    let m = manifest(dir.path());
    assert_eq!(m.runs.len(), 6);
    assert!(m.fit.is_some() != m.fit_error.is_some());
}

#[test]
fn compare_writes_the_coupling_table() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("compare_couplings.json");
    cfg["dims"] = json!([16]);
    cfg["seeds"] = json!(2);
    run_ok("compare", &cfg, dir.path(), &[]);
    let table = fs::read_to_string(dir.path().join("coupling_ratios.csv")).unwrap();
    assert_eq!(table.lines().next().unwrap(), COUPLING_TABLE_HEADER);
    assert_eq!(table.lines().count(), 3);
    assert_eq!(manifest(dir.path()).runs.len(), 4);
}

#[test]
fn two_layer_emits_a_training_log() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("two_layer_mcm_sign_matched.json");
    cfg["d"] = json!(8);
    cfg["m"] = json!(8);
    cfg["train"]["steps"] = json!(2000);
    cfg["train"]["eval_set_size"] = json!(200);
    run_ok("two-layer", &cfg, dir.path(), &[]);
    let m = manifest(dir.path());
    assert_eq!(m.runs.len(), 1);
    let header = first_line(dir.path().join(&m.runs[0].trace));
    assert!(header.starts_with("step,"), "{header}");
    for col in ["err_full", "err_gauss_equiv", "top5_m", "top5_u", "top5_v"] {
        assert!(
            header.split(',').any(|c| c == col),
            "missing {col} in {header}"
        );
    }
}

#[test]
fn schema_mismatch_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = shipped("perceptron.json");
    cfg["schema_version"] = json!(99);
    let o = run("perceptron", &cfg, dir.path(), &[]);
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("schema"));
    assert!(!dir.path().join("manifest.json").exists());
}

#[test]
fn missing_config_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_stairs-lab"))
        .args(["sweep", "--config"])
        .arg(dir.path().join("absent.json"))
        .arg("--out")
        .arg(dir.path())
        .output()
        .unwrap();
    assert!(!o.status.success());
}
