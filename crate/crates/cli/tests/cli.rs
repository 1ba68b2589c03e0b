use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn oqns(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oqns")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MINIMAL: &str = "horizon = 10\n[set]\nkind = \"ball\"\ndim = 1\n";

fn strip_timing(csv: &str) -> String {
    csv.lines().map(|l| l.rsplit_once(',').unwrap().0).collect::<Vec<_>>().join("\n")
}

#[test]
fn minimal_run_writes_one_row_per_round() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("run");
    let o = oqns(&["run-online", "--config", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(out.join("rounds_seed0.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,loss,surr_reg_inc,surr_reg_cum,grad_norm,landmark,inversions,wall_nanos");
    assert_eq!(lines.len(), 11);
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["schema_version"], 1);
    assert!(summary["landmark_bound"].as_f64().unwrap() > 0.0);
}

#[test]
fn reruns_reproduce_non_timing_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "horizon = 300\nseeds = [1, 2, 3]\n[set]\nkind = \"hypercube\"\ndim = 3\nreduction = \"gauge\"\n",
    );
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for dir in [&a, &b] {
        assert!(oqns(&["run-online", "-c", s(&cfg), "--out", s(dir)]).status.success());
    }
    for seed in [1, 2, 3] {
        let name = format!("rounds_seed{seed}.csv");
        let x = std::fs::read_to_string(a.join(&name)).unwrap();
        let y = std::fs::read_to_string(b.join(&name)).unwrap();
        assert_eq!(strip_timing(&x), strip_timing(&y));
    }
}

#[test]
fn stochastic_horizon_follows_epsilon() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "epsilon = 0.05\n[set]\nkind = \"ball\"\ndim = 5\n");
    let out = tmp.path().join("run");
    let o = oqns(&["run-stochastic", "-c", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["horizon"], 922);
    let rows = std::fs::read_to_string(out.join("rounds_seed0.csv")).unwrap().lines().count();
    assert_eq!(rows, 923);
    assert!(summary["stochastic"]["excess_risk_mean"].as_f64().unwrap() >= 0.0);
}

#[test]
fn seed_flag_replaces_configured_seeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let out = tmp.path().join("run");
    assert!(oqns(&["run-online", "-c", s(&cfg), "--seed", "7", "--seed", "9", "--out", s(&out)]).status.success());
    assert!(out.join("rounds_seed7.csv").exists());
    assert!(out.join("rounds_seed9.csv").exists());
    assert!(!out.join("rounds_seed0.csv").exists());
}

fn verified_run(tmp: &Path) -> PathBuf {
    let cfg = write_config(tmp, "horizon = 400\nseeds = [1, 2]\n[set]\nkind = \"ball\"\ndim = 3\n");
    let out = tmp.join("run");
    assert!(oqns(&["run-online", "-c", s(&cfg), "--out", s(&out)]).status.success());
    out
}

#[test]
fn verify_bounds_passes_and_matches_recomputed_bounds() {
    let tmp = tempfile::tempdir().unwrap();
    let out = verified_run(tmp.path());
    let o = oqns(&["verify-bounds", s(&out), "--json"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_slice(&o.stdout).unwrap();
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    let (d, t, eta, beta, c, b) = (3.0f64, 400.0f64, 11.0f64, 0.125f64, 0.25f64, 1.0f64);
    let m = summary["taylor_order"].as_u64().unwrap() as i32;
    let log = (d + b * b * t / d).ln();
    let landmark = 8.0 * (2.0 * t * log / (c * c * eta * beta)).sqrt();
    let taylor = c.powi(m) / (2.0 * eta * d * (1.0 - c));
    for check in report["checks"].as_array().unwrap() {
        assert_eq!(check["status"], "pass");
        let rhs = check["rhs"].as_f64().unwrap();
        match check["bound"].as_str().unwrap() {
            "landmark_count" => assert!((rhs - landmark).abs() <= 1e-12 * landmark),
            "taylor_accuracy" => assert!((rhs - taylor).abs() <= 1e-12 * taylor),
            "surrogate_regret" => {
                // The reported comparator is one of the grid points; recompute its bound.
                let seed = check["seed"].as_u64().unwrap();
                let entry = summary["seeds"].as_array().unwrap().iter().find(|e| e["seed"] == seed).unwrap();
                let found = entry["comparators"].as_array().unwrap().iter().any(|comp| {
                    let n2: f64 = comp["point"].as_array().unwrap().iter().map(|x| x.as_f64().unwrap().powi(2)).sum();
                    let want = -eta * d * (1.0 - n2).ln()
                        + 0.5 * (d + eta * b * b) * n2
                        + (3.0 * d + b * d.sqrt()) * log / beta;
                    (want - rhs).abs() <= 1e-12 * want
                });
                assert!(found);
            }
            "interiority" => assert_eq!(rhs, 1.0),
            other => panic!("unexpected bound {other}"),
        }
    }
}

#[test]
fn corrupted_landmark_count_fails_verification() {
    let tmp = tempfile::tempdir().unwrap();
    let out = verified_run(tmp.path());
    let path = out.join("rounds_seed2.csv");
    let text = std::fs::read_to_string(&path).unwrap();
    let corrupted: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f[5] = "100";
            f.join(",")
        })
        .collect();
    std::fs::write(&path, corrupted.join("\n") + "\n").unwrap();
    let o = oqns(&["verify-bounds", s(&out)]);
    assert_eq!(o.status.code(), Some(3));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("landmark_count") && err.contains("seed 2"), "{err}");
}

#[test]
fn missing_column_is_a_runtime_error_naming_it() {
    let tmp = tempfile::tempdir().unwrap();
    let out = verified_run(tmp.path());
    let path = out.join("rounds_seed1.csv");
    let text = std::fs::read_to_string(&path).unwrap().replacen("landmark,", "", 1);
    let text: Vec<String> = text
        .lines()
        .enumerate()
        .map(|(i, l)| {
            if i == 0 {
                return l.to_string();
            }
            let mut f: Vec<&str> = l.split(',').collect();
            f.remove(5);
            f.join(",")
        })
        .collect();
    std::fs::write(&path, text.join("\n") + "\n").unwrap();
    let o = oqns(&["verify-bounds", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "missing_telemetry");
    assert!(err["message"].as_str().unwrap().contains("`landmark`"));
}

#[test]
fn config_errors_exit_with_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), MINIMAL);
    let o = oqns(&["run-online", "-c", s(&cfg), "--set", "learner.kind=newton"]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    let o = oqns(&["run-online", "-c", s(&tmp.path().join("absent.toml"))]);
    assert_eq!(o.status.code(), Some(1));
    let o = oqns(&["run-online"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn compare_baselines_runs_all_learners() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "horizon = 200\nseeds = [1, 2]\n[set]\nkind = \"ball\"\ndim = 4\n");
    let out = tmp.path().join("cmp");
    let o = oqns(&["compare-baselines", "-c", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cmp: Value = serde_json::from_str(&std::fs::read_to_string(out.join("comparison.json")).unwrap()).unwrap();
    let names: Vec<&str> = cmp["learners"].as_array().unwrap().iter().map(|r| r["learner"].as_str().unwrap()).collect();
    assert_eq!(names, ["oqns", "ons", "ogd"]);
    let ons = &cmp["learners"][1];
    assert_eq!(ons["mean_inversions"], 200.0);
    for name in names {
        assert!(out.join(name).join("summary.json").exists());
    }
}
