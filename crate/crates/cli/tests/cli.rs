// SPDX-License-Identifier: MIT OR Apache-2.0

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn kvsmooth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kvsmooth"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn toy(dir: &Path) -> PathBuf {
    let out = kvsmooth(&[
        "toy",
        "--out",
        dir.to_str().unwrap(),
        "--images",
        "4",
        "--max-new-tokens",
        "16",
        "--seed",
        "3",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    dir.join("config.json")
}

#[test]
fn generate_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    let cfg = cfg.to_str().unwrap();
    let mut outputs = Vec::new();
    for (i, threads) in ["1", "1", "3"].iter().enumerate() {
        let path = tmp.path().join(format!("r{i}.jsonl"));
        let out = kvsmooth(&[
            "generate",
            "--config",
            cfg,
            "--threads",
            threads,
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(out.status.code(), Some(0));
        outputs.push(std::fs::read(path).unwrap());
    }
    assert!(!outputs[0].is_empty());
    assert_eq!(outputs[0], outputs[1]);
    assert_eq!(outputs[0], outputs[2]);
    let lines = String::from_utf8(outputs[0].clone()).unwrap();
    assert_eq!(lines.lines().count(), 4);
    for l in lines.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert_eq!(v["schema_version"], 1);
    }
}

#[test]
fn fixed_zero_matches_no_smoothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    let cfg = cfg.to_str().unwrap();
    let tokens = |extra: &[&str]| {
        let mut args = vec!["generate", "--config", cfg];
        args.extend_from_slice(extra);
        let out = kvsmooth(&args);
        assert!(out.status.success());
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["generated"].clone())
            .collect::<Vec<_>>()
    };
    assert_eq!(tokens(&["--fixed-lambda", "0"]), tokens(&["--no-smoothing"]));
}

#[test]
fn empty_prompt_file_is_no_work_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    std::fs::write(tmp.path().join("run/prompts.jsonl"), "").unwrap();
    let out_path = tmp.path().join("never.jsonl");
    let out = kvsmooth(&[
        "generate",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(5));
    assert!(!out_path.exists());
}

#[test]
fn missing_config_is_a_config_error() {
    let out = kvsmooth(&["generate", "--config", "/nonexistent/config.json"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
}

#[test]
fn bad_prompt_line_is_a_schema_error_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    std::fs::write(
        tmp.path().join("run/prompts.jsonl"),
        "{\"tokens\": [0, 2]}\n{\"tokens\": \"oops\"}\n",
    )
    .unwrap();
    let out = kvsmooth(&["generate", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(":2:"));
}

#[test]
fn eval_fixture_captions() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("lex.json"), r#"{"dog": [], "cat": [], "car": []}"#).unwrap();
    std::fs::write(d.join("ann.json"), r#"{"1": ["dog"], "2": ["car"]}"#).unwrap();
    std::fs::write(
        d.join("caps.jsonl"),
        "{\"image_id\": \"1\", \"caption\": \"a dog\"}\n{\"image_id\": \"2\", \"caption\": \"a car and a cat\"}\n",
    )
    .unwrap();
    let p = |n: &str| d.join(n).to_str().unwrap().to_string();
    let out = kvsmooth(&[
        "eval",
        "--captions",
        &p("caps.jsonl"),
        "--annotations",
        &p("ann.json"),
        "--lexicon",
        &p("lex.json"),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["chair"]["chair_s"], 50.0);
    assert_eq!(v["schema_version"], 1);

    std::fs::write(d.join("bad.jsonl"), "{\"image_id\": \"1\"}\n").unwrap();
    let out = kvsmooth(&[
        "eval",
        "--captions",
        &p("bad.jsonl"),
        "--annotations",
        &p("ann.json"),
        "--lexicon",
        &p("lex.json"),
    ]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    let csv = tmp.path().join("s.csv");
    let out = kvsmooth(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "lambda-ref",
        "--values",
        "0.5",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("axis_value,chair_s,chair_i,precision,recall,f1,mean_lambda_tilde,tokens_per_s"));
}

#[test]
fn sweep_failure_keeps_partial_csv() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    let csv = tmp.path().join("s.csv");
    // Layer 9 does not exist in the 4-layer toy model.
    let out = kvsmooth(&[
        "sweep",
        "--config",
        cfg.to_str().unwrap(),
        "--axis",
        "layer-end",
        "--values",
        "2,9",
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 3);
    assert!(lines[1].contains(",ok,"));
    assert!(lines[2].contains("failed"));
}

#[test]
fn verify_passes() {
    let out = kvsmooth(&["verify", "--seed", "1"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["schema_version"], 1);
}

#[test]
fn bench_rejects_too_few_repetitions() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = toy(&tmp.path().join("run"));
    let out = kvsmooth(&["bench", "--config", cfg.to_str().unwrap(), "--repetitions", "2"]);
    assert_eq!(out.status.code(), Some(2));
}
