//! End-to-end checks of the `mtc-regions` binary: argument and stage
//! validation, the machine-readable error line on stderr, prerequisite
//! enforcement between stages, and a reduced-size full pipeline run
//! whose artifacts are cross-checked (cluster CSV vs. cluster-map
//! GeoJSON, determinism under a stage re-run, `--k` override).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mtc_regions::pipeline::read_cluster_map;

const BIN: &str = env!("CARGO_BIN_EXE_mtc-regions");

fn run_cli(args: &[&str], cwd: &Path) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn mtc-regions")
}

/// Parse the last nonempty stderr line as the JSON error object the
/// binary promises on failure.
fn error_line(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or_else(|| panic!("no stderr line; stdout: {:?}", out.stdout));
    serde_json::from_str(line)
        .unwrap_or_else(|e| panic!("stderr line not JSON ({e}): {line:?}"))
}

const SMOKE_TOML: &str = r#"
out_dir = "run"
seed = 7
scenario = "smoke"
slots = ["full"]
hops = 1
tcn_epochs = 2
tcn_batch_size = 8
agg_epochs = 2
eval_repeats = 2
mlp_hidden = 16
mlp_max_epochs = 5
forest_trees = 5
cluster_k = 2
k_range = [2, 3]
"#;

fn write_smoke_config(dir: &Path) -> PathBuf {
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, SMOKE_TOML).unwrap();
    path
}

fn read_clusters_csv(path: &Path) -> BTreeMap<String, usize> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("region_id,cluster"));
    lines
        .map(|l| {
            let (id, label) = l.split_once(',').unwrap();
            (id.to_string(), label.parse().unwrap())
        })
        .collect()
}

#[test]
fn unknown_stage_fails_with_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke_config(dir.path());
    let out = run_cli(&["frobnicate", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let err = error_line(&out);
    assert_eq!(err["error"], "config");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("unknown stage"), "got: {msg}");
    assert!(msg.contains("train-agg"), "should list valid stages: {msg}");
}

#[test]
fn missing_config_file_fails_with_json_error_line() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_cli(&["synth", "--config", "does-not-exist.toml"], dir.path());
    assert!(!out.status.success());
    let err = error_line(&out);
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("does-not-exist.toml"));
}

#[test]
fn stage_without_prerequisites_names_the_producer() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_smoke_config(dir.path());
    // nothing has run yet, so aggregator training has no inputs
    let out = run_cli(&["train-agg", "--config", cfg.to_str().unwrap()], dir.path());
    assert!(!out.status.success());
    let err = error_line(&out);
    assert_eq!(err["error"], "missing_stage");
    let msg = err["message"].as_str().unwrap();
    assert!(msg.contains("train-agg"), "got: {msg}");
    assert!(
        msg.contains("run `mtc-regions"),
        "should tell the user what to run first: {msg}"
    );
}

#[test]
fn smoke_pipeline_round_trips_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_smoke_config(dir.path());
    let cfg_arg = cfg_path.to_str().unwrap();

    let out = run_cli(&["all", "--config", cfg_arg], dir.path());
    assert!(
        out.status.success(),
        "pipeline failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );

    let run = dir.path().join("run");
    let csv_path = run.join("clusters_weighted_sum_full_k2.csv");
    let map_path = run.join("cluster_map_weighted_sum_full_k2.geojson");
    let from_csv = read_clusters_csv(&csv_path);
    let from_map = read_cluster_map(&map_path).unwrap();
    assert_eq!(from_csv, from_map, "CSV and GeoJSON must agree");
    assert!(!from_map.is_empty());
    assert!(from_map.values().all(|&l| l < 2));

    // re-running a downstream stage must succeed and reproduce the
    // artifact byte for byte
    let before = std::fs::read(&map_path).unwrap();
    let out = run_cli(&["cluster", "--config", cfg_arg], dir.path());
    assert!(
        out.status.success(),
        "re-run failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let after = std::fs::read(&map_path).unwrap();
    assert_eq!(before, after, "stage re-run must be byte-identical");

    // --k override reclusters under a new artifact name without
    // touching the k=2 outputs
    let out = run_cli(&["cluster", "--config", cfg_arg, "--k", "3"], dir.path());
    assert!(
        out.status.success(),
        "--k 3 failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let k3 = read_clusters_csv(&run.join("clusters_weighted_sum_full_k3.csv"));
    assert_eq!(k3.len(), from_csv.len());
    assert!(k3.values().all(|&l| l < 3));
    assert_eq!(std::fs::read(&map_path).unwrap(), before);
}
