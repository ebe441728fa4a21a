use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modah_core::em::correct;
use modah_core::io::{read_dataset_csv, read_params, write_dataset_csv};
use serde_json::Value;

const SMALL: &str = r#"{"u": 1.0, "v": 10.0, "base_sizes": [100, 150, 200], "seed": 3}"#;

fn modah(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modah")).args(args).output().expect("modah binary runs")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn simulate_small(dir: &Path) -> PathBuf {
    let cfg = dir.join("cfg.json");
    std::fs::write(&cfg, SMALL).unwrap();
    let out = dir.join("sim");
    let o = modah(&["simulate", "--config", p(&cfg), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    out
}

#[test]
fn simulate_defaults_write_all_cells_with_header() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim");
    let o = modah(&["simulate", "--out", p(&out), "--seed", "7"]);
    assert!(o.status.success());
    let csv = std::fs::read_to_string(dir.path().join("sim.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4501);
    let truth = read_json(&dir.path().join("sim.truth.json"));
    assert_eq!(truth["K"], 4);
    assert!(truth["inputs_hash"].is_string());
    assert!(dir.path().join("sim.manifest.json").exists());
}

#[test]
fn simulate_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(modah(&["simulate", "--out", p(&a), "--seed", "11"]).status.success());
    assert!(modah(&["simulate", "--out", p(&b), "--seed", "11"]).status.success());
    for suffix in ["csv", "truth.json"] {
        let x = std::fs::read(dir.path().join(format!("a.{suffix}"))).unwrap();
        let y = std::fs::read(dir.path().join(format!("b.{suffix}"))).unwrap();
        assert_eq!(x, y, "{suffix} differs");
    }
}

#[test]
fn simulate_rejects_bad_pi_with_validation_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"pi": [[0.5, 0.4], [0.5, 0.5]], "base_sizes": [10, 10]}"#).unwrap();
    let o = modah(&["simulate", "--config", p(&cfg), "--out", p(&dir.path().join("x"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("pi row 1"));
}

#[test]
fn missing_input_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = modah(&["fit", "--input", p(&dir.path().join("nope.csv")), "--k", "4", "--out", p(&dir.path().join("f"))]);
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn fit_preserves_shape_and_logs_iterations() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path());
    let input = sim.with_extension("csv");
    let out = dir.path().join("fit");
    let o = modah(&["fit", "--input", p(&input), "--k", "4", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let raw = read_dataset_csv(&input).unwrap();
    let corrected = read_dataset_csv(&dir.path().join("fit.corrected.csv")).unwrap();
    assert_eq!(raw.dataset.n(), corrected.dataset.n());
    assert_eq!(raw.dataset.d(), corrected.dataset.d());
    assert_eq!(raw.labels, corrected.labels);

    let log = read_json(&dir.path().join("fit.fitlog.json"));
    assert_eq!(log["K"], 4);
    assert!(log["estimate"].is_null());
    let trace = log["objective_trace"].as_array().unwrap();
    assert!(!trace.is_empty());
    assert!(trace.windows(2).all(|w| w[1].as_f64().unwrap() <= w[0].as_f64().unwrap() + 1e-9));
    assert_eq!(read_params(&dir.path().join("fit.params.json")).unwrap().k, 4);
}

#[test]
fn fit_with_estimated_k_and_perbatch_init() {
    let dir = tempfile::tempdir().unwrap();
    let input = simulate_small(dir.path()).with_extension("csv");
    let out = dir.path().join("est");
    let o = modah(&["fit", "--input", p(&input), "--estimate-k", "--init", "perbatch", "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let log = read_json(&dir.path().join("est.fitlog.json"));
    let k_hat = log["estimate"]["k_hat"].as_u64().unwrap();
    assert_eq!(log["K"].as_u64().unwrap(), k_hat);
    assert_eq!(log["init"], "perbatch");
    assert_eq!(log["lloyd_iterations"].as_array().unwrap().len(), 3);
}

#[test]
fn k_and_estimate_k_conflict() {
    let o = modah(&["fit", "--input", "x.csv", "--k", "3", "--estimate-k", "--out", "y"]);
    assert!(!o.status.success());
}

#[test]
fn eval_of_oracle_correction_has_zero_loss() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path());
    let data_path = sim.with_extension("csv");
    let truth_path = dir.path().join("sim.truth.json");
    let raw = read_dataset_csv(&data_path).unwrap();
    let params = read_params(&truth_path).unwrap();
    let labels = raw.assignment(Some(params.k)).unwrap().unwrap();
    let oracle = correct(&raw.dataset, &params, &labels).unwrap();
    let oracle_path = dir.path().join("oracle.csv");
    write_dataset_csv(&oracle_path, &oracle, Some(&labels)).unwrap();

    let out = dir.path().join("eval");
    let o = modah(&[
        "eval",
        "--corrected",
        p(&oracle_path),
        "--truth-data",
        p(&data_path),
        "--truth-params",
        p(&truth_path),
        "--out",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("eval.json"));
    assert_eq!(report["loss"]["correction_loss"].as_f64().unwrap(), 0.0);
    assert!(report["metrics"]["aggregates"]["total"].is_number());
    let card = std::fs::read_to_string(dir.path().join("eval.txt")).unwrap();
    assert!(card.contains("Correction loss"));
}

#[test]
fn eval_without_truth_omits_loss_and_flags_k_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path());
    let data_path = sim.with_extension("csv");
    let truth_path = dir.path().join("sim.truth.json");
    let fit = dir.path().join("fit");
    assert!(modah(&["fit", "--input", p(&data_path), "--k", "3", "--out", p(&fit)]).status.success());
    let corrected = dir.path().join("fit.corrected.csv");

    let bare = dir.path().join("bare");
    assert!(modah(&["eval", "--corrected", p(&corrected), "--out", p(&bare)]).status.success());
    assert!(read_json(&dir.path().join("bare.json")).get("loss").is_none());

    let full = dir.path().join("full");
    let o = modah(&[
        "eval",
        "--corrected",
        p(&corrected),
        "--truth-data",
        p(&data_path),
        "--truth-params",
        p(&truth_path),
        "--fit-log",
        p(&dir.path().join("fit.fitlog.json")),
        "--out",
        p(&full),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report = read_json(&dir.path().join("full.json"));
    assert!(report["loss"]["alignment"]["flagged"].as_bool().unwrap());
    assert!(!report["flags"].as_array().unwrap().is_empty());
}

#[test]
fn eval_needs_both_truth_files() {
    let dir = tempfile::tempdir().unwrap();
    let sim = simulate_small(dir.path());
    let data_path = sim.with_extension("csv");
    let o = modah(&["eval", "--corrected", p(&data_path), "--truth-data", p(&data_path), "--out", p(&dir.path().join("e"))]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn snr_reports_bounds_and_pairs() {
    let dir = tempfile::tempdir().unwrap();
    simulate_small(dir.path());
    let out = dir.path().join("snr");
    let o = modah(&["snr", "--params", p(&dir.path().join("sim.truth.json")), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_json(&dir.path().join("snr.json"));
    assert!(r["snr"].as_f64().unwrap() > 0.0);
    // B = 3 batches, K = 4 clusters, ordered pairs k != k'.
    assert_eq!(r["per_pair"].as_array().unwrap().len(), 3 * 4 * 3);
    assert!(r["prop1"].is_object());
}

#[test]
fn bench_single_point_writes_rows_summary_and_runtime() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"setting": {"loss_vs_v": {"u": 1.0}}, "grid": [10], "reps": 1}"#).unwrap();
    let out = dir.path().join("bench.csv");
    let o = modah(&["bench", "--spec", p(&spec), "--out", p(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(std::fs::read_to_string(&out).unwrap().lines().count(), 2);
    assert_eq!(std::fs::read_to_string(dir.path().join("bench.summary.csv")).unwrap().lines().count(), 2);
    assert!(dir.path().join("bench.runtime.csv").exists());
    assert!(dir.path().join("bench.manifest.json").exists());
}

#[test]
fn bench_rejects_unknown_spec_keys() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("spec.json");
    std::fs::write(&spec, r#"{"setting": {"loss_vs_v": {"u": 1.0}}, "grid": [10], "replicates": 1}"#).unwrap();
    let o = modah(&["bench", "--spec", p(&spec), "--out", p(&dir.path().join("b.csv"))]);
    assert_eq!(o.status.code(), Some(2));
}
