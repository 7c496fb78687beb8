//! End-to-end tests of the `rsm` binary: exit codes, file outputs,
//! determinism and the documented flag surface.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rsm_core::eval::{parse_cmc_csv, parse_sweep_csv};
use rsm_core::io;
use rsm_core::ranking::RankingReport;

fn rsm() -> Command {
    Command::new(env!("CARGO_BIN_EXE_rsm"))
}

fn run(args: &[&str]) -> Output {
    rsm().args(args).output().expect("binary runs")
}

fn assert_exit(output: &Output, code: i32) {
    assert_eq!(
        output.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&output.stdout),
        String::from_utf8_lossy(&output.stderr)
    );
}

fn write_config(dir: &Path, name: &str, text: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

const SMALL_CONFIG: &str = r#"{
  "generator": {"subjects": 4, "block_size": 2, "dim": 12, "frames": 2,
                 "subspace_dim": 2, "sigma_v": 0.0, "outlier_prob": 0.0,
                 "outlier_scale": 1.0, "seed": 11},
  "run": {"lambda": 1e-3, "T": 10},
  "methods": ["rsm", "src"],
  "trials": 2
}"#;

#[test]
fn generate_writes_expected_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("data");

    let output = run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_exit(&output, 0);

    let gallery = io::read_matrix(&out.join("gallery.csv")).unwrap();
    assert_eq!((gallery.nrows(), gallery.ncols()), (12, 8));
    let labels = io::read_labels(&out.join("labels.csv")).unwrap();
    assert_eq!(labels.len(), 8);
    for s in 1..=4 {
        let probe = io::read_matrix(&out.join(format!("probe_{s}.csv"))).unwrap();
        assert_eq!((probe.nrows(), probe.ncols()), (12, 2));
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["rng"]["algorithm"], "xoshiro256**");
    assert!(manifest["files"].get("gallery.csv").is_some());
}

#[test]
fn generate_rejects_violated_invariant_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = SMALL_CONFIG.replace("\"subspace_dim\": 2", "\"subspace_dim\": 3");
    let config = write_config(dir.path(), "bad.json", &bad);
    let out = dir.path().join("data");

    let output = run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_exit(&output, 2);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("subspace_dim") && stderr.contains("block_size"), "stderr: {stderr}");
}

#[test]
fn generate_same_seed_gives_identical_data_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out_a.to_str().unwrap()]), 0);
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out_b.to_str().unwrap()]), 0);

    for name in ["gallery.csv", "labels.csv", "probe_1.csv", "probe_4.csv"] {
        let a = std::fs::read(out_a.join(name)).unwrap();
        let b = std::fs::read(out_b.join(name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn rank_noiseless_probe_identifies_true_subject() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("data");
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    for method in ["rsm", "isr", "src"] {
        let output = run(&[
            "rank",
            "--gallery",
            out.join("gallery.csv").to_str().unwrap(),
            "--labels",
            out.join("labels.csv").to_str().unwrap(),
            "--probe",
            out.join("probe_3.csv").to_str().unwrap(),
            "--method",
            method,
            "--lambda",
            "1e-3",
            "--T",
            "10",
        ]);
        assert_exit(&output, 0);
        let report: RankingReport = serde_json::from_slice(&output.stdout).unwrap();
        assert_eq!(report.psi[0], 3, "{method} misranked the planted subject");
        assert_eq!(report.probe_id, "probe_3");
        // full depth, no duplicates
        let mut ids = report.psi.clone();
        ids.sort_unstable();
        assert_eq!(ids, vec![1, 2, 3, 4]);
    }
}

#[test]
fn rank_is_deterministic_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("data");
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    let gallery = out.join("gallery.csv");
    let labels = out.join("labels.csv");
    let probe = out.join("probe_2.csv");
    let args = [
        "rank",
        "--gallery",
        gallery.to_str().unwrap(),
        "--labels",
        labels.to_str().unwrap(),
        "--probe",
        probe.to_str().unwrap(),
        "--zeta",
        "1",
        "--tau",
        "1",
        "--lambda",
        "1e-3",
    ];
    let first = run(&args);
    let second = run(&args);
    assert_exit(&first, 0);
    assert_eq!(first.stdout, second.stdout);
}

#[test]
fn rank_dimension_mismatch_exits_3_with_both_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("data");
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    // probe with the wrong feature dimension
    let bad_probe = dir.path().join("bad_probe.csv");
    std::fs::write(&bad_probe, "1.0,2.0\n3.0,4.0\n").unwrap();

    let output = run(&[
        "rank",
        "--gallery",
        out.join("gallery.csv").to_str().unwrap(),
        "--labels",
        out.join("labels.csv").to_str().unwrap(),
        "--probe",
        bad_probe.to_str().unwrap(),
    ]);
    assert_exit(&output, 3);
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains('2') && stderr.contains("12"), "stderr: {stderr}");
}

#[test]
fn rank_parse_error_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("data");
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    let garbled = dir.path().join("garbled.csv");
    std::fs::write(&garbled, "1.0,zz\n").unwrap();
    let output = run(&[
        "rank",
        "--gallery",
        garbled.to_str().unwrap(),
        "--labels",
        out.join("labels.csv").to_str().unwrap(),
        "--probe",
        out.join("probe_1.csv").to_str().unwrap(),
    ]);
    assert_exit(&output, 2);

    // unknown config key is also a config error
    let bad_cfg = write_config(dir.path(), "bad_run.json", r#"{"lambda": 1.0, "bogus": 1}"#);
    let output = run(&[
        "rank",
        "--gallery",
        out.join("gallery.csv").to_str().unwrap(),
        "--labels",
        out.join("labels.csv").to_str().unwrap(),
        "--probe",
        out.join("probe_1.csv").to_str().unwrap(),
        "--config",
        bad_cfg.to_str().unwrap(),
    ]);
    assert_exit(&output, 2);
}

#[test]
fn experiment_writes_results_and_tables() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("exp");

    let output = run(&[
        "experiment",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--sweep-L",
        "1,2",
        "--jobs",
        "1",
    ]);
    assert_exit(&output, 0);

    let results: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("results.json")).unwrap()).unwrap();
    // two trials x two methods
    assert_eq!(results["records"].as_array().unwrap().len(), 4);
    assert_eq!(results["rng"]["algorithm"], "xoshiro256**");
    assert!(results["config_hash"].as_str().unwrap().len() == 64);

    // noiseless: rank-1 mean is exactly 1 in the cmc table
    let cmc = parse_cmc_csv(&std::fs::read_to_string(out.join("cmc.csv")).unwrap()).unwrap();
    assert_eq!(cmc[0].0, 1.0);

    // sweep has one row per (L, method) plus header
    let sweep_text = std::fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(sweep_text.lines().count(), 1 + 4);
    let rows = parse_sweep_csv(&sweep_text).unwrap();
    assert_eq!(rows.len(), 4);
    for row in rows {
        assert_eq!(row.rank1_mean, 1.0);
    }

    // per-method cmc tables exist and parse
    for name in ["cmc_rsm.csv", "cmc_src.csv"] {
        parse_cmc_csv(&std::fs::read_to_string(out.join(name)).unwrap()).unwrap();
    }

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["files"].get("results.json").is_some());
    assert!(manifest["files"].get("sweep.csv").is_some());
}

#[test]
fn experiment_results_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out_a = dir.path().join("a");
    let out_b = dir.path().join("b");

    for out in [&out_a, &out_b] {
        let output =
            run(&["experiment", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_exit(&output, 0);
    }
    let a = std::fs::read(out_a.join("results.json")).unwrap();
    let b = std::fs::read(out_b.join("results.json")).unwrap();
    assert_eq!(a, b, "results.json differs between identical runs");
    assert_eq!(
        std::fs::read(out_a.join("cmc.csv")).unwrap(),
        std::fs::read(out_b.join("cmc.csv")).unwrap()
    );
}

#[test]
fn experiment_lambda_grid_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let with_grid = SMALL_CONFIG.replace("\"trials\": 2", "\"trials\": 1, \"lambda_grid\": [0.001, 0.1]");
    let config = write_config(dir.path(), "cfg.json", &with_grid);
    let out = dir.path().join("exp");

    let output = run(&["experiment", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_exit(&output, 0);
    let text = std::fs::read_to_string(out.join("lambda_sweep.csv")).unwrap();
    assert!(text.starts_with("lambda,rank1_mean,rank1_std\n"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn diagnostics_go_to_stderr_not_stdout() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "cfg.json", SMALL_CONFIG);
    let out = dir.path().join("data");
    assert_exit(&run(&["generate", "--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()]), 0);

    let output = rsm()
        .args([
            "rank",
            "--gallery",
            out.join("gallery.csv").to_str().unwrap(),
            "--labels",
            out.join("labels.csv").to_str().unwrap(),
            "--probe",
            out.join("probe_1.csv").to_str().unwrap(),
            "--lambda",
            "1e-3",
        ])
        .env("RSM_LOG", "info")
        .output()
        .unwrap();
    assert_exit(&output, 0);
    // stdout is exactly the JSON document
    let _: RankingReport = serde_json::from_slice(&output.stdout).unwrap();
    let stderr = String::from_utf8_lossy(&output.stderr);
    assert!(stderr.contains("ranked"), "expected info logging on stderr, got: {stderr}");
}

#[test]
fn missing_config_file_exits_2() {
    let output = run(&["experiment", "--config", "/definitely/not/here.json", "--out", "/tmp/x"]);
    assert_exit(&output, 2);
}
