use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpStream;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use catforge_core::dataset::{EndToEndCase, Split};
use catforge_core::files::read_jsonl;
use catforge_core::pipeline::{CaseSuggestions, SuggestionLine};
use catforge_core::text::label_key;
use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_catforge"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Value {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let stdout = String::from_utf8(out.stdout).unwrap();
    serde_json::from_str(stdout.lines().last().unwrap()).unwrap()
}

fn stderr_json(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

/// Synthetic KB with a small forest, run through every stage up to train.
fn prepared() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "."]);
    let cfg = std::fs::read_to_string(dir.path().join("catforge.toml")).unwrap();
    std::fs::write(dir.path().join("catforge.toml"), cfg.replace("n_trees = 1000", "n_trees = 50")).unwrap();
    for stage in ["ingest", "build-datasets", "index", "graph", "train"] {
        let v = ok(dir.path(), &[stage]);
        assert_eq!(v["stage"], stage);
    }
    dir
}

#[test]
fn missing_config_exits_2_and_names_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &["--config", "nope/c.toml", "index"]);
    assert_eq!(out.status.code(), Some(2));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "config");
    assert!(err["message"].as_str().unwrap().contains("nope/c.toml"));
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["frobnicate"][..], &["index", "--no-such-flag"], &[]] {
        let out = run(dir.path(), args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("usage"), "{args:?}");
    }
    let out = run(dir.path(), &["index", "--scorer", "cosine"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cosine"));
}

#[test]
fn invalid_config_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("catforge.toml"), "[params]\nalpha = \"two\"\n").unwrap();
    let out = run(dir.path(), &["index"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn stage_without_inputs_reports_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "."]);
    let out = run(dir.path(), &["index"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr_json(&out);
    assert_eq!(err["error"], "missing_stage");
    assert!(err["message"].as_str().unwrap().contains("catforge ingest"));
}

#[test]
fn invalid_override_is_a_contract_error() {
    let dir = tempfile::tempdir().unwrap();
    ok(dir.path(), &["synth", "--out", "."]);
    let out = run(dir.path(), &["ingest", "--alpha", "0"]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(stderr_json(&out)["error"], "contract");
}

/// Independent reciprocal rank over label keys.
fn reciprocal_rank(ranking: &[String], relevant: &BTreeSet<String>) -> f64 {
    for (i, r) in ranking.iter().take(10).enumerate() {
        if relevant.contains(r) {
            return 1.0 / (i + 1) as f64;
        }
    }
    0.0
}

#[test]
fn pipeline_suggests_and_evaluates_consistently() {
    let dir = prepared();
    let d = dir.path();
    let v = ok(d, &["suggest", "--cases", "inputs.jsonl", "--out", "out/s.jsonl"]);
    assert_eq!(v["summary"]["cases"], 80);
    let suggestions: Vec<CaseSuggestions> = read_jsonl(&d.join("out/s.jsonl")).unwrap();
    assert_eq!(suggestions.len(), 80);

    ok(d, &["suggest", "--cases", "inputs.jsonl", "--out", "out/flat.jsonl", "--flat"]);
    let flat: Vec<SuggestionLine> = read_jsonl(&d.join("out/flat.jsonl")).unwrap();
    assert_eq!(flat.len(), suggestions.iter().map(|s| s.ranked.suggestions.len()).sum::<usize>());

    ok(d, &["evaluate", "--suggestions", "mine=out/s.jsonl", "--out", "eval"]);
    let report: Value = serde_json::from_str(&std::fs::read_to_string(d.join("eval/eval_report.json")).unwrap()).unwrap();
    let reported = report["report"]["aggregates"]["mine"]["MRR@10"].as_f64().unwrap();
    assert!(d.join("eval/eval_table.txt").exists());

    let cases: Vec<EndToEndCase> = read_jsonl(&d.join("work/datasets/cases.jsonl")).unwrap();
    let split: Split = serde_json::from_str(&std::fs::read_to_string(d.join("work/datasets/split.json")).unwrap()).unwrap();
    let by_case: BTreeMap<&str, &CaseSuggestions> = suggestions.iter().map(|s| (s.case_id.as_str(), s)).collect();
    let rrs: Vec<f64> = split
        .test
        .iter()
        .map(|id| {
            let case = cases.iter().find(|c| &c.input.case_id == id).unwrap();
            let relevant: BTreeSet<String> = case.ground_truth_labels.values().map(|l| label_key(l)).collect();
            let ranking: Vec<String> = by_case[id.as_str()].ranked.suggestions.iter().map(|s| label_key(&s.label)).collect();
            reciprocal_rank(&ranking, &relevant)
        })
        .collect();
    let oracle = rrs.iter().sum::<f64>() / rrs.len() as f64;
    assert!((oracle - reported).abs() < 1e-12, "{oracle} vs {reported}");
}

#[test]
fn flag_overrides_change_behaviour() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["suggest", "--out", "a.jsonl"]);
    ok(d, &["suggest", "--out", "b.jsonl", "--gamma", "0.9"]);
    let count = |f: &str| -> usize {
        read_jsonl::<CaseSuggestions>(&d.join(f)).unwrap().iter().map(|s| s.ranked.suggestions.len()).sum()
    };
    let b: Vec<CaseSuggestions> = read_jsonl(&d.join("b.jsonl")).unwrap();
    assert!(b.iter().flat_map(|s| &s.ranked.suggestions).all(|s| s.score >= 0.9));
    assert!(count("b.jsonl") <= count("a.jsonl"));
    assert!(count("a.jsonl") > 0);
    ok(d, &["suggest", "--out", "c.jsonl", "--scorer", "bm25", "--expansion", "false", "--pool-k", "3"]);
}

#[test]
fn evaluate_compares_two_systems() {
    let dir = prepared();
    let d = dir.path();
    ok(d, &["suggest", "--out", "a.jsonl"]);
    ok(d, &["suggest", "--out", "b.jsonl", "--scorer", "bm25"]);
    ok(d, &["evaluate", "--suggestions", "a.jsonl", "--suggestions", "bm25=b.jsonl", "--split", "all"]);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("work/eval/eval_report.json")).unwrap()).unwrap();
    assert_eq!(report["report"]["case_ids"].as_array().unwrap().len(), 80);
    assert_eq!(report["report"]["significance"].as_array().unwrap().len(), 4);
    assert!(report["placement"]["a"]["recovered"].as_u64().unwrap() > 0);
    let out = run(d, &["evaluate", "--suggestions", "a.jsonl", "--split", "nope"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn stale_index_is_detected() {
    let dir = prepared();
    let d = dir.path();
    let cfg = std::fs::read_to_string(d.join("catforge.toml")).unwrap();
    std::fs::write(d.join("catforge.toml"), cfg.replace("work_dir = \"work\"", "work_dir = \"work\"\nkb = \"full\"")).unwrap();
    let out = run(d, &["suggest", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr_json(&out)["message"].as_str().unwrap().contains("rerun `catforge index`"));
}

#[test]
fn serve_answers_health() {
    let dir = prepared();
    let mut child = bin()
        .current_dir(dir.path())
        .env("RUST_LOG", "info")
        .args(["serve", "--bind", "127.0.0.1:0"])
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    let mut lines = BufReader::new(child.stderr.take().unwrap()).lines();
    let addr = loop {
        let line = lines.next().expect("server exited").unwrap();
        if let Some(rest) = line.split("listening on http://").nth(1) {
            break rest.trim().to_string();
        }
    };
    let mut stream = TcpStream::connect(&addr).unwrap();
    write!(stream, "GET /api/health HTTP/1.1\r\nHost: x\r\nConnection: close\r\n\r\n").unwrap();
    let mut resp = String::new();
    stream.read_to_string(&mut resp).unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(resp.starts_with("HTTP/1.1 200"), "{resp}");
    assert!(resp.contains("\"categories\":117"), "{resp}");
}
