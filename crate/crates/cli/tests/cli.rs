//! End-to-end behaviour of the `visprobe` binary.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use visprobe::{load_scored, RESULTS_FILE, SCORED_FILE};

fn visprobe(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_visprobe")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tiny_spec(dir: &Path) -> std::path::PathBuf {
    let spec = dir.join("tiny.json");
    let doc = r#"{
  "master_seed": 7,
  "profile": "blip2",
  "suites": [
    {"kind": "quality", "param_grid": [2, 4, 6, 8, 10], "digit_tiers": [3, 5], "trials_per_cell": 1}
  ]
}"#;
    fs::write(&spec, doc).unwrap();
    spec
}

#[test]
fn tiny_suite_runs_end_to_end_with_the_oracle() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_spec(tmp.path());
    let out = tmp.path().join("suite");
    assert_eq!(code(&visprobe(&["generate", "--spec", p(&spec), "--out", p(&out)])), 0);
    assert_eq!(code(&visprobe(&["run", "--out", p(&out), "--backend", "oracle"])), 0);
    assert_eq!(code(&visprobe(&["score", "--out", p(&out)])), 0);
    assert_eq!(code(&visprobe(&["report", "--out", p(&out)])), 0);

    let scored = load_scored(&out.join(SCORED_FILE)).unwrap();
    assert_eq!(scored.len(), 10);
    assert!(scored.iter().all(|r| r.score.gpm == 1.0 && !r.errored()));
    let reports: Vec<_> = fs::read_dir(out.join("report")).unwrap().map(|e| e.unwrap().file_name().into_string().unwrap()).collect();
    assert!(reports.iter().any(|n| n.ends_with("_curve.csv")), "{reports:?}");
    assert!(reports.iter().any(|n| n.ends_with("_curve.svg")), "{reports:?}");
}

#[test]
fn regenerating_is_idempotent_and_foreign_suites_are_refused() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_spec(tmp.path());
    let out = tmp.path().join("suite");
    assert_eq!(code(&visprobe(&["generate", "--spec", p(&spec), "--out", p(&out)])), 0);
    let first = fs::read(out.join("manifest.jsonl")).unwrap();
    assert_eq!(code(&visprobe(&["generate", "--spec", p(&spec), "--out", p(&out)])), 0);
    assert_eq!(fs::read(out.join("manifest.jsonl")).unwrap(), first);

    let reseeded = visprobe(&["generate", "--spec", p(&spec), "--out", p(&out), "--seed", "8"]);
    assert_eq!(code(&reseeded), 1, "{}", String::from_utf8_lossy(&reseeded.stderr));
    assert_eq!(fs::read(out.join("manifest.jsonl")).unwrap(), first);
}

#[test]
fn malformed_spec_is_a_validation_error_with_a_line() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    fs::write(&spec, "{\n  \"master_seed\": 1,\n  \"suites\": [\n    {\"kind\": \"quality\",}\n  ]\n}\n").unwrap();
    let out = visprobe(&["generate", "--spec", p(&spec), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(code(&out), 1);
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 4"), "{msg}");
}

#[test]
fn unknown_suite_kind_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tmp.path().join("bad.json");
    fs::write(&spec, r#"{"master_seed": 1, "profile": "blip2", "suites": [{"kind": "colour"}]}"#).unwrap();
    assert_eq!(code(&visprobe(&["generate", "--spec", p(&spec), "--out", p(&tmp.path().join("x"))])), 1);
}

#[test]
fn unreachable_endpoint_records_errors_and_exits_partial() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_spec(tmp.path());
    let out = tmp.path().join("suite");
    assert_eq!(code(&visprobe(&["generate", "--spec", p(&spec), "--out", p(&out)])), 0);
    // bind then drop to find a port nothing listens on
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let url = format!("http://127.0.0.1:{port}/v1/chat/completions");
    let run = visprobe(&["run", "--out", p(&out), "--backend", "http", "--endpoint-url", &url, "--model", "m", "--max-retries", "0", "--timeout-secs", "1"]);
    assert_eq!(code(&run), 3, "{}", String::from_utf8_lossy(&run.stderr));
    let lines = fs::read_to_string(out.join(RESULTS_FILE)).unwrap();
    let records: Vec<serde_json::Value> = lines.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 10);
    assert!(records.iter().all(|r| !r["error"].is_null()), "{lines}");

    assert_eq!(code(&visprobe(&["score", "--out", p(&out)])), 3);
    let scored = load_scored(&out.join(SCORED_FILE)).unwrap();
    assert!(scored.iter().all(|r| r.errored() && r.score.gpm == 0.0));
}

#[test]
fn resume_keeps_existing_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let spec = tiny_spec(tmp.path());
    let out = tmp.path().join("suite");
    assert_eq!(code(&visprobe(&["generate", "--spec", p(&spec), "--out", p(&out)])), 0);
    assert_eq!(code(&visprobe(&["run", "--out", p(&out), "--backend", "oracle"])), 0);
    let results = out.join(RESULTS_FILE);
    let full = fs::read_to_string(&results).unwrap();
    let kept: Vec<&str> = full.lines().take(4).collect();
    fs::write(&results, kept.join("\n") + "\n").unwrap();
    assert_eq!(code(&visprobe(&["run", "--out", p(&out), "--backend", "oracle", "--resume"])), 0);
    let resumed = fs::read_to_string(&results).unwrap();
    assert_eq!(resumed.lines().count(), 10);
    assert!(resumed.starts_with(&(kept.join("\n") + "\n")));
}

#[test]
fn missing_manifest_is_a_validation_error() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&visprobe(&["run", "--out", p(tmp.path()), "--backend", "oracle"])), 1);
}

#[test]
fn slice_writes_a_quantile_table() {
    let tmp = tempfile::tempdir().unwrap();
    let ann = tmp.path().join("ann.jsonl");
    let mut lines = String::new();
    for i in 0..10u32 {
        let side = f64::from(i + 1) * 10.0;
        let prediction = if i % 2 == 0 { "cat" } else { "dog" };
        lines.push_str(&format!(
            r#"{{"question_id":"q{i}","width":200,"height":200,"answers":["cat"],"target_boxes":[{{"x":0,"y":0,"w":{side},"h":{side}}}],"prediction":"{prediction}"}}"#
        ));
        lines.push('\n');
    }
    fs::write(&ann, lines).unwrap();
    let out = tmp.path().join("slices");
    let run = visprobe(&["slice", "--annotations", p(&ann), "--mode", "gqa", "--q", "2", "--out", p(&out)]);
    assert_eq!(code(&run), 0, "{}", String::from_utf8_lossy(&run.stderr));
    let table = fs::read_to_string(out.join("slice_relative_size.csv")).unwrap();
    let rows: Vec<&str> = table.lines().collect();
    assert_eq!(rows.len(), 3, "{table}");
    assert!(rows[0].starts_with("quantile,n,"));
    assert!(rows[1].starts_with("1,5,0.0025,0.0625,") && rows[1].ends_with(",0.6,0.6,0.6"), "{table}");
    assert!(rows[2].starts_with("2,5,0.09,0.25,") && rows[2].ends_with(",0.4,0.4,0.4"), "{table}");
}
