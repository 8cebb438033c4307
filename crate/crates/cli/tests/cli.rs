use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::Value;

fn streamreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_streamreg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit status")
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("machine output parses")
}

/// Writes `y = 1 + 2 a - b + 0.5 c + noise` with a header row.
fn write_linear(path: &Path, rows: std::ops::Range<usize>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut text = String::from("y,a,b,c\n");
    for _ in rows {
        let a: f64 = rng.random_range(-2.0..2.0);
        let b: f64 = rng.random_range(0.0..5.0);
        let c: f64 = StandardNormal.sample(&mut rng);
        let e: f64 = StandardNormal.sample(&mut rng);
        writeln!(text, "{},{a},{b},{c}", 1.0 + 2.0 * a - b + 0.5 * c + e).unwrap();
    }
    std::fs::write(path, text).unwrap();
}

fn linear_file(dir: &Path, name: &str, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(name);
    write_linear(&path, 0..n, seed);
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn zero_workers_is_a_configuration_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_file(dir.path(), "d.csv", 50, 1);
    let out = streamreg(&[
        "--workers",
        "0",
        "dnc",
        "--input",
        s(&data),
        "--response",
        "y",
        "--covariates",
        "a",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn unknown_scenario_is_a_configuration_error() {
    let out = streamreg(&["simulate", "--replicates", "1", "--scenarios", "9"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario 9"));
}

#[test]
fn missing_column_and_file_are_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_file(dir.path(), "d.csv", 50, 2);
    let out = streamreg(&[
        "dnc",
        "--input",
        s(&data),
        "--response",
        "y",
        "--covariates",
        "a,zzz",
    ]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("zzz"));

    let gone = dir.path().join("absent.csv");
    let out = streamreg(&[
        "dnc",
        "--input",
        s(&gone),
        "--response",
        "y",
        "--covariates",
        "a",
    ]);
    assert_eq!(code(&out), 3);
}

#[test]
fn strict_mode_aborts_on_a_bad_row() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.csv");
    std::fs::write(&path, "y,a\n1,2\n2,x\n3,4\n4,5\n").unwrap();
    let base = [
        "select-stream",
        "--input",
        s(&path),
        "--response",
        "y",
        "--covariates",
        "a",
    ];
    let lenient = json(&streamreg(&[&["--format", "machine"], &base[..]].concat()));
    assert_eq!(lenient["rows_skipped"], 1);
    assert_eq!(lenient["selections"][0]["n"], 3);

    let out = streamreg(&[&base[..], &["--strict"]].concat());
    assert_eq!(code(&out), 3);
}

#[test]
fn too_few_rows_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_file(dir.path(), "tiny.csv", 3, 3);
    let out = streamreg(&[
        "select-stream",
        "--input",
        s(&data),
        "--response",
        "y",
        "--covariates",
        "a,b,c",
    ]);
    assert_eq!(code(&out), 4);
}

#[test]
fn snapshot_resume_matches_a_single_pass() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let first: usize = 40 * rng.random_range(2..6usize);
    let whole = linear_file(dir.path(), "whole.csv", 600, 5);
    let text = std::fs::read_to_string(&whole).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    let head = dir.path().join("head.csv");
    let tail = dir.path().join("tail.csv");
    std::fs::write(&head, lines[..=first].join("\n") + "\n").unwrap();
    std::fs::write(
        &tail,
        format!("{}\n{}\n", lines[0], lines[first + 1..].join("\n")),
    )
    .unwrap();
    let snap = dir.path().join("state.json");

    let common = [
        "--response",
        "y",
        "--covariates",
        "a,b,c",
        "--block-size",
        "40",
    ];
    let run = |input: &Path, extra: &[&str]| {
        let mut args = vec!["--format", "machine", "select-stream", "--input", s(input)];
        args.extend_from_slice(&common);
        args.extend_from_slice(extra);
        json(&streamreg(&args))
    };
    let single = run(&whole, &[]);
    run(&head, &["--snapshot-out", s(&snap)]);
    let resumed = run(&tail, &["--snapshot-in", s(&snap)]);

    let a = single["selections"].as_array().unwrap().last().unwrap();
    let b = resumed["selections"].as_array().unwrap().last().unwrap();
    assert_eq!(a["k"], 15);
    assert_eq!(a, b);
}

#[test]
fn snapshot_with_wrong_width_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_file(dir.path(), "d.csv", 100, 6);
    let snap = dir.path().join("state.json");
    let base = ["select-stream", "--input", s(&data), "--response", "y"];
    let out = streamreg(
        &[
            &base[..],
            &["--covariates", "a,b", "--snapshot-out", s(&snap)],
        ]
        .concat(),
    );
    assert!(out.status.success());
    let out = streamreg(&[&base[..], &["--covariates", "a", "--snapshot-in", s(&snap)]].concat());
    assert_eq!(code(&out), 2);
}

#[test]
fn streamed_full_model_matches_gaussian_glm_and_dnc() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_file(dir.path(), "d.csv", 2345, 7);
    let input = [
        "--input",
        s(&data),
        "--response",
        "y",
        "--covariates",
        "a,b,c",
    ];
    let select = json(&streamreg(
        &[
            &["--format", "machine", "select-stream"],
            &input[..],
            &["--block-size", "100"],
        ]
        .concat(),
    ));
    let glm = json(&streamreg(
        &[
            &["--format", "machine", "glm"],
            &input[..],
            &["--family", "gaussian", "--chunk-size", "300"],
        ]
        .concat(),
    ));
    let dnc = json(&streamreg(
        &[
            &["--format", "machine", "dnc"],
            &input[..],
            &["--block-size", "500"],
        ]
        .concat(),
    ));

    let last = select["selections"].as_array().unwrap().last().unwrap();
    let full = last["models"]
        .as_array()
        .unwrap()
        .iter()
        .find(|m| m["p_m"] == 3)
        .unwrap();
    let streamed: Vec<f64> = full["beta"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let coefs = |v: &Value| -> Vec<f64> {
        v["coefficients"]
            .as_array()
            .unwrap()
            .iter()
            .map(|c| c["estimate"].as_f64().unwrap())
            .collect()
    };
    assert_eq!(glm["passes"], 1);
    for (name, other) in [("glm", coefs(&glm)), ("dnc", coefs(&dnc))] {
        for (x, y) in streamed.iter().zip(&other) {
            assert!(
                (x - y).abs() <= 1e-8 * y.abs().max(1.0),
                "{name}: {x} vs {y}"
            );
        }
    }
    assert!((streamed[1] - 2.0).abs() < 0.1);
}

#[test]
fn airline_pipeline_converges_on_the_sample() {
    let dir = tempfile::tempdir().unwrap();
    let sample = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/data/airline_sample.csv");
    let prepared = dir.path().join("prepared.csv");
    let prep = json(&streamreg(&[
        "--format",
        "machine",
        "airline-prep",
        "--input",
        s(&sample),
        "--prepared",
        s(&prepared),
    ]));
    assert_eq!(prep["stats"]["rows_read"], 10_000);
    let written = prep["stats"]["rows_written"].as_u64().unwrap();
    let fit = json(&streamreg(&[
        "--format",
        "machine",
        "glm",
        "--input",
        s(&prepared),
        "--response",
        "Late",
        "--covariates",
        "DepHour,Distance,Night,Weekend",
        "--chunk-size",
        "1000",
    ]));
    assert_eq!(fit["converged"], true);
    assert_eq!(fit["n"].as_u64().unwrap(), written);
    assert!(fit["deviance"].as_f64().unwrap() < fit["null_deviance"].as_f64().unwrap());
    let dep_hour = fit["coefficients"][1]["estimate"].as_f64().unwrap();
    assert!(dep_hour > 0.0, "later departures are later more often");
}

#[test]
fn table_and_machine_reports_agree_on_file_output() {
    let dir = tempfile::tempdir().unwrap();
    let data = linear_file(dir.path(), "d.csv", 300, 8);
    let report = dir.path().join("report.json");
    let out = streamreg(&[
        "--format",
        "machine",
        "--out",
        s(&report),
        "dnc",
        "--input",
        s(&data),
        "--response",
        "y",
        "--covariates",
        "a,b,c",
        "--block-size",
        "100",
    ]);
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
    let v: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(v["blocks"], 3);
    assert_eq!(v["n"], 300);

    let table = streamreg(&[
        "dnc",
        "--input",
        s(&data),
        "--response",
        "y",
        "--covariates",
        "a,b,c",
        "--block-size",
        "100",
    ]);
    let text = String::from_utf8(table.stdout).unwrap();
    assert!(text.contains("(Intercept)"));
    assert!(text.contains("blocks: 3"));
}
