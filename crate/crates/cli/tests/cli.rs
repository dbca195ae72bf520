use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn bayeshead(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bayeshead")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn validate_accepts_minimal_config() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "ok.json", r#"{"experiment": "head-laplace", "seed": 3}"#);
    let o = bayeshead(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("ok"));
}

#[test]
fn validate_reports_every_error_with_exit_code_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "bad.json",
        r#"{"experiment": "iris-hmc", "tau": 1.5, "model": {"prior_std": -1}, "colour": "red"}"#,
    );
    let o = bayeshead(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("seed"), "{err}");
    assert!(err.contains("tau"), "{err}");
    assert!(err.contains("model.prior_std"), "{err}");
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn missing_feature_file_points_to_extractor() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "head.json",
        r#"{"experiment": "head-hmc", "seed": 1, "data": {"path": "nowhere.bhft"}}"#,
    );
    let o = bayeshead(&["validate", "--config", &cfg]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("embed-extract"), "{}", stderr(&o));
}

#[test]
fn inspect_of_garbage_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("x.bhsc");
    std::fs::write(&path, b"not a chain").unwrap();
    let o = bayeshead(&["inspect", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

fn metrics(dir: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(dir.join("metrics.json")).unwrap()).unwrap()
}

#[test]
fn head_laplace_run_and_output_protection() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.json", r#"{"experiment": "head-laplace", "seed": 42}"#);
    let out = dir.path().join("out");
    let out_s = out.to_str().unwrap();

    let o = bayeshead(&["run", "--config", &cfg, "--out", out_s]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("6915"));
    let files = std::fs::read_dir(&out).unwrap().count();
    assert!(files >= 7, "{files} files");

    let m = metrics(&out);
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["s_mc"], 30);
    assert_eq!(m["model"]["n_params"], 6915);
    assert!(m["results"]["map"].is_object() && m["results"]["laplace"].is_object());
    assert!(m["decisions"]["laplace_precision"].as_str().unwrap().contains("1/prior_std^2"));
    assert_eq!(m["decisions"]["reliability_bins"], 10);

    let entries = std::fs::read_to_string(out.join("entries.csv")).unwrap();
    let header = entries.lines().next().unwrap();
    for col in ["mean_p0", "std_p0", "predicted", "label"] {
        assert!(header.contains(col), "{header}");
    }

    let o = bayeshead(&["run", "--config", &cfg, "--out", out_s]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--force"));

    let o = bayeshead(&["run", "--config", &cfg, "--out", out_s, "--force"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let chain = out.join("laplace-draws.bhsc");
    let o = bayeshead(&["inspect", chain.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("draws: 30") && text.contains("parameters: 6915"), "{text}");
}

#[test]
fn laplace_collapses_onto_map_when_the_variance_vanishes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.json",
        r#"{"experiment": "head-laplace", "seed": 9, "laplace": {"precision_floor": 1e18}}"#,
    );
    let out = dir.path().join("out");
    let o = bayeshead(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = metrics(&out);
    let map = &m["results"]["map"];
    let lap = &m["results"]["laplace"];
    let close = |a: &Value, b: &Value| (a.as_f64().unwrap() - b.as_f64().unwrap()).abs() < 1e-6;
    assert!(close(&map["ece"], &lap["ece"]));
    assert!(close(&map["mean_confidence"], &lap["mean_confidence"]));
    let (pm, pl) = (map["coverage"]["points"].as_array().unwrap(), lap["coverage"]["points"].as_array().unwrap());
    assert_eq!(pm.len(), pl.len());
    for (a, b) in pm.iter().zip(pl) {
        assert!(close(&a["threshold"], &b["threshold"]));
        assert!(close(&a["coverage"], &b["coverage"]));
    }
    for d in m["results"]["laplace_vs_map"]["confidence_deltas"].as_array().unwrap() {
        assert!(d.as_f64().unwrap().abs() < 1e-6);
    }
}

#[test]
fn iris_run_with_short_chains() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.json",
        r#"{"experiment": "iris-hmc", "seed": 1, "sampler": {"n_chains": 2, "n_warmup": 150, "n_samples": 100}}"#,
    );
    let out = dir.path().join("out");
    let o = bayeshead(&["run", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "marginal_W1_0_1.svg",
        "marginal_b2_1.svg",
        "marginal2d_near_independent.svg",
        "marginal2d_correlated.svg",
        "entry_0.svg",
        "reliability.svg",
        "coverage.svg",
        "predictions.csv",
        "chain-0.bhsc",
        "chain-1.bhsc",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }
    let m = metrics(&out);
    let two = &m["marginals"]["two_d"];
    let lo = two["near_independent"]["correlation"].as_f64().unwrap().abs();
    let hi = two["correlated"]["correlation"].as_f64().unwrap().abs();
    assert!(lo <= hi);
    assert!(m["decisions"]["contours"].is_string());

    let c0 = out.join("chain-0.bhsc");
    let c1 = out.join("chain-1.bhsc");
    let o = bayeshead(&["inspect", c0.to_str().unwrap(), c1.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("chains: 2") && text.contains("split-R-hat") && text.contains("W1[0,0]"), "{text}");
}
