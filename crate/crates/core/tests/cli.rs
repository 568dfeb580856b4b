//! Command-line behaviour through the library entry point.

use std::fs;
use std::path::{Path, PathBuf};

use fedfair::cli::run;
use serde_json::Value;

struct Outcome {
    code: i32,
    stdout: String,
    stderr: String,
}

fn fedfair(args: &[&str]) -> Outcome {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run(
        std::iter::once("fedfair").chain(args.iter().copied()),
        &mut out,
        &mut err,
    );
    Outcome {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).display().to_string()
}

/// Generated data plus a trained model in a fresh directory.
fn workspace(samples: &str) -> (tempfile::TempDir, String, String) {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data.csv");
    let model = path(dir.path(), "model.json");
    let g = fedfair(&[
        "generate",
        "--scenario",
        "2",
        "--samples-per-client",
        samples,
        "--seed",
        "3",
        "--out",
        &data,
    ]);
    assert_eq!(g.code, 0, "{}", g.stderr);
    let t = fedfair(&[
        "train", "--data", &data, "--out", &model, "--rounds", "8", "--seed", "1",
    ]);
    assert_eq!(t.code, 0, "{}", t.stderr);
    (dir, data, model)
}

#[test]
fn train_writes_a_reproducible_checkpoint() {
    let (dir, data, model) = workspace("300");
    let again = path(dir.path(), "again.json");
    let log = path(dir.path(), "log.json");
    let t = fedfair(&[
        "train", "--data", &data, "--out", &again, "--rounds", "8", "--seed", "1", "--log", &log,
    ]);
    assert_eq!(t.code, 0);
    assert_eq!(
        t.stdout.lines().filter(|l| l.starts_with("round ")).count(),
        8
    );
    assert_eq!(fs::read(&model).unwrap(), fs::read(&again).unwrap());
    let rounds: Vec<Value> = serde_json::from_str(&fs::read_to_string(&log).unwrap()).unwrap();
    assert_eq!(rounds.len(), 8);
    let other = path(dir.path(), "other.json");
    assert_eq!(
        fedfair(&["train", "--data", &data, "--out", &other, "--rounds", "8", "--seed", "2"]).code,
        0
    );
    assert_ne!(fs::read(&model).unwrap(), fs::read(&other).unwrap());
}

#[test]
fn missing_column_is_named() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "bad.csv");
    fs::write(&data, "f0,a,y\n0.5,0,1\n0.1,1,0\n").unwrap();
    let t = fedfair(&[
        "train",
        "--data",
        &data,
        "--out",
        &path(dir.path(), "m.json"),
    ]);
    assert_eq!(t.code, 3);
    assert!(t.stderr.contains('c'), "{}", t.stderr);
    assert!(t.stderr.contains("column"), "{}", t.stderr);
    let absent = fedfair(&[
        "train",
        "--data",
        &path(dir.path(), "nope.csv"),
        "--out",
        &path(dir.path(), "m.json"),
    ]);
    assert_eq!(absent.code, 3);
}

#[test]
fn loose_postprocessing_never_trails_the_base_predictor() {
    let (dir, data, model) = workspace("600");
    let out = path(dir.path(), "fair.json");
    let transcript = path(dir.path(), "transcript.ndjson");
    let p = fedfair(&[
        "postprocess",
        "--data",
        &data,
        "--model",
        &model,
        "--out",
        &out,
        "--metric",
        "eo",
        "--eps-global",
        "1",
        "--eps-local",
        "1",
        "--transcript",
        &transcript,
    ]);
    assert_eq!(p.code, 0, "{}", p.stderr);
    let report: Value = serde_json::from_str(&p.stdout).unwrap();
    // With no fairness pressure the LP picks the best mixture per cell, which
    // is the base predictor itself whenever that predictor is cellwise optimal.
    let lp = report["lp_objective"].as_f64().unwrap();
    assert!(lp >= report["stats_base_accuracy"].as_f64().unwrap() - 1e-12);
    assert!((lp - report["expected"]["accuracy"].as_f64().unwrap()).abs() <= 1e-9);
    let on_disk: Value =
        serde_json::from_str(&fs::read_to_string(format!("{out}.report.json")).unwrap()).unwrap();
    assert_eq!(on_disk, report);
    let bundle: Value = serde_json::from_str(&fs::read_to_string(&out).unwrap()).unwrap();
    assert_eq!(bundle["model_checkpoint"], Value::String(model.clone()));
    let lines = fs::read_to_string(&transcript).unwrap();
    assert!(lines.lines().count() >= 10);
}

#[test]
fn tight_postprocessing_meets_expected_tolerance_and_reports_noise() {
    let (dir, data, model) = workspace("600");
    for metric in ["eo", "eop", "sp"] {
        let out = path(dir.path(), &format!("{metric}.json"));
        let p = fedfair(&[
            "postprocess",
            "--data",
            &data,
            "--model",
            &model,
            "--out",
            &out,
            "--metric",
            metric,
            "--eps-global",
            "0.02",
            "--eps-local",
            "0.05",
        ]);
        assert_eq!(p.code, 0, "{metric}: {}", p.stderr);
        let report: Value = serde_json::from_str(&p.stdout).unwrap();
        let global = report["expected"]["global_disparity"]["max"]
            .as_f64()
            .unwrap();
        let local = report["expected"]["local_disparity"]["max"]
            .as_f64()
            .unwrap();
        assert!(global <= 0.02 + 1e-7, "{metric}: global {global}");
        assert!(local <= 0.05 + 1e-7, "{metric}: local {local}");
    }
    let out = path(dir.path(), "dp.json");
    let p = fedfair(&[
        "postprocess",
        "--data",
        &data,
        "--model",
        &model,
        "--out",
        &out,
        "--metric",
        "eo",
        "--eps-global",
        "0.1",
        "--eps-local",
        "0.1",
        "--dp-epsilon",
        "0.5",
    ]);
    assert_eq!(p.code, 0, "{}", p.stderr);
    let report: Value = serde_json::from_str(&p.stdout).unwrap();
    assert_eq!(report["dp_scale"].as_array().unwrap().len(), 5);
    let notes = report["report"]["notes"].as_array().unwrap();
    assert!(notes
        .iter()
        .any(|n| n.as_str().unwrap().contains("Laplace")));
}

#[test]
fn bad_options_are_usage_errors() {
    let (dir, data, model) = workspace("200");
    let out = path(dir.path(), "x.json");
    let base = [
        "postprocess",
        "--data",
        &data,
        "--model",
        &model,
        "--out",
        &out,
    ];
    let with = |extra: &[&str]| {
        fedfair(
            &base
                .iter()
                .copied()
                .chain(extra.iter().copied())
                .collect::<Vec<_>>(),
        )
    };
    assert_eq!(
        with(&[
            "--metric",
            "parity-ish",
            "--eps-global",
            "0.1",
            "--eps-local",
            "0.1"
        ])
        .code,
        3
    );
    assert_eq!(
        with(&[
            "--metric",
            "eo",
            "--eps-global",
            "1.5",
            "--eps-local",
            "0.1"
        ])
        .code,
        3
    );
    assert_eq!(
        with(&[
            "--metric",
            "eo",
            "--eps-global",
            "0.1",
            "--eps-local",
            "0.1,0.2"
        ])
        .code,
        3
    );
    assert_eq!(
        with(&[
            "--metric",
            "eo",
            "--eps-global",
            "0.1",
            "--eps-local",
            "0.1",
            "--dp-epsilon",
            "-1"
        ])
        .code,
        3
    );
    assert_eq!(
        with(&[
            "--metric",
            "eo",
            "--eps-global",
            "0.1",
            "--eps-local",
            "0.1",
            "--region-form",
            "cube"
        ])
        .code,
        3
    );
    assert_eq!(fedfair(&["frobnicate"]).code, 3);
    assert_eq!(
        fedfair(&[
            "generate",
            "--scenario",
            "9",
            "--out",
            &path(dir.path(), "g.csv")
        ])
        .code,
        3
    );
}

#[test]
fn sweep_writes_every_table() {
    let (dir, data, model) = workspace("300");
    let out: PathBuf = dir.path().join("sweep");
    let s = fedfair(&[
        "sweep",
        "--data",
        &data,
        "--model",
        &model,
        "--grid",
        "0.02,0.1,1",
        "--seeds",
        "2",
        "--metric",
        "eo",
        "--out",
        out.to_str().unwrap(),
        "--passes",
        "2",
    ]);
    assert_eq!(s.code, 0, "{}", s.stderr);
    for f in [
        "accuracy.csv",
        "lp_objective.csv",
        "global_disparity.csv",
        "local_disparity.csv",
        "cells.csv",
        "sweep.json",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let acc = fs::read_to_string(out.join("accuracy.csv")).unwrap();
    let rows: Vec<&str> = acc.lines().collect();
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0], "eps_global\\eps_local,0.02,0.1,1");
    assert!(rows[3].starts_with("1,"));
    let cells = fs::read_to_string(out.join("cells.csv")).unwrap();
    assert_eq!(cells.lines().count(), 1 + 9);
    let sweep: Value =
        serde_json::from_str(&fs::read_to_string(out.join("sweep.json")).unwrap()).unwrap();
    let corner = &sweep["cells"][2][2];
    assert_eq!(corner["seeds"].as_array().unwrap().len(), 2);
    // The loosest corner never does worse than any tighter cell.
    let lp = fs::read_to_string(out.join("lp_objective.csv")).unwrap();
    let values: Vec<Vec<f64>> = lp
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(1).map(|v| v.parse().unwrap()).collect())
        .collect();
    let best = values
        .iter()
        .flatten()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    assert!((values[2][2] - best).abs() <= 1e-12);
}

#[test]
fn oracle_suites_report_and_exit() {
    let o = fedfair(&["oracle", "--suite", "region", "--seed", "1"]);
    assert_eq!(o.code, 0, "{}", o.stdout);
    assert!(o
        .stdout
        .lines()
        .all(|l| l.starts_with("PASS") || l.ends_with("checks passed")));
    assert!(o.stdout.trim_end().ends_with("checks passed"));
    assert_eq!(fedfair(&["oracle", "--suite", "everything"]).code, 3);
}

#[test]
fn help_and_version_exit_cleanly() {
    let h = fedfair(&["--help"]);
    assert_eq!(h.code, 0);
    for sub in ["train", "postprocess", "sweep", "oracle"] {
        assert!(h.stdout.contains(sub), "help lacks {sub}");
    }
    let v = fedfair(&["--version"]);
    assert_eq!(v.code, 0);
    assert!(v.stdout.contains(env!("CARGO_PKG_VERSION")));
}
