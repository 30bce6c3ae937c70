use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"{"corpus": {"cases": 10}, "seg": {"base": 2}, "gen": {"points": 32},
    "seg_epochs": 1, "gen_epochs": 1, "train_limit": 2}"#;

fn px2t(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_px2t")).args(args).output().unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_string_lossy().into_owned()
}

fn json_lines(bytes: &[u8]) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(bytes).lines().map(|l| serde_json::from_str(l).expect("JSON line")).collect()
}

#[test]
fn full_command_sequence_succeeds_and_logs_json() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL);
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    for cmd in ["synth", "project", "train-seg", "train-gen", "eval", "report"] {
        let o = px2t(&[cmd, "--config", &cfg, "--seed", "5", "--out", out]);
        assert_eq!(o.status.code(), Some(0), "{cmd}: {}", String::from_utf8_lossy(&o.stderr));
        let lines = json_lines(&o.stdout);
        assert_eq!(lines.first().unwrap()["event"], "start");
        assert_eq!(lines.last().unwrap()["event"], "done");
        assert_eq!(lines[0]["seed"], 5);
        let file = fs::read(Path::new(out).join("logs").join(format!("{cmd}.jsonl"))).unwrap();
        assert_eq!(file, o.stdout);
    }
    let md = fs::read_to_string(Path::new(out).join("report.md")).unwrap();
    assert!(md.contains("| model |"));
}

#[test]
fn invalid_input_exits_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let bad = write_config(dir.path(), "bad.json", r#"{"corpus": {"cases": 3}}"#);
    let unknown = write_config(dir.path(), "unknown.json", r#"{"sed": 1}"#);
    for args in [
        vec!["synth", "--config", bad.as_str(), "--out", out],
        vec!["synth", "--config", unknown.as_str(), "--out", out],
        vec!["eval", "--out", out],
        vec!["report", "--out", out],
    ] {
        let o = px2t(&args);
        assert_eq!(o.status.code(), Some(2), "{args:?}");
        let err = json_lines(&o.stderr);
        assert_eq!(err[0]["kind"], "validation");
    }
}

#[test]
fn numeric_failure_exits_with_3() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let out = out.to_str().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL);
    assert_eq!(px2t(&["synth", "--config", &cfg, "--out", out, "--quiet"]).status.code(), Some(0));
    let nan = write_config(
        dir.path(),
        "nan.json",
        r#"{"corpus": {"cases": 10}, "seg": {"base": 2}, "seg_epochs": 2, "train_limit": 2, "seg_lr": {"base": 1e300}}"#,
    );
    let o = px2t(&["train-seg", "--config", &nan, "--out", out, "--quiet"]);
    assert_eq!(o.status.code(), Some(3));
    let err = json_lines(&o.stderr);
    assert_eq!(err[0]["kind"], "numeric");
    assert!(err[0]["message"].as_str().unwrap().contains("epoch 0"));
}
