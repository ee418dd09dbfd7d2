use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const RECYCLING: &str = include_str!("../../core/tests/fixtures/recycling.txt");

const SMALL_CONFIG: &str = r#"
[pipeline]
embedding_dim = 16
hidden = 4

[pipeline.train]
epochs = 5

[pipeline.dataset]
count = 4
"#;

fn shield(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shield"))
        .current_dir(dir)
        .env("RUST_LOG", "off")
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn help_and_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(shield(dir.path(), &["--help"]).status.code(), Some(0));
    assert_eq!(shield(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(shield(dir.path(), &["eval"]).status.code(), Some(1));
}

#[test]
fn validate_accepts_fixture_and_rejects_bad_schema() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "r.txt", RECYCLING);
    let ok = shield(dir.path(), &["schema", "validate", "r.txt"]);
    assert_eq!(ok.status.code(), Some(0), "{}", stdout(&ok));
    assert!(stdout(&ok).contains("ok: 9 events, 6 relations"));

    let bad = r#"{"@context":[],"events":[{"@id":"ev1","name":"a","participants":[{"event_id":"ev1.1","importance":1}]},
        {"@id":"ev1.1","name":"b"}],"relations":[{"relationSubject":"ev1.1","relationObject":"ev1.1"}]}"#;
    write(dir.path(), "bad.json", bad);
    let out = shield(dir.path(), &["schema", "validate", "bad.json"]);
    assert_eq!(out.status.code(), Some(2), "{}", stdout(&out));

    let missing = shield(dir.path(), &["schema", "validate", "nope.txt"]);
    assert_eq!(missing.status.code(), Some(3));
}

#[test]
fn merge_and_show() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "r.txt", RECYCLING);
    let out = shield(dir.path(), &["schema", "merge", "r.txt", "r.txt", "-o", "m.json"]);
    assert_eq!(out.status.code(), Some(0));
    let shown = shield(dir.path(), &["schema", "show", "m.json"]);
    assert_eq!(shown.status.code(), Some(0));
    let tree = stdout(&shown);
    assert_eq!(tree.lines().filter(|l| l.contains(" [ev")).count(), 9, "{tree}");
    let sdf = shield(dir.path(), &["schema", "show", "m.json", "--format", "sdf"]);
    let v: serde_json::Value = serde_json::from_slice(&sdf.stdout).unwrap();
    assert_eq!(v["events"].as_array().unwrap().len(), 9);
}

#[test]
fn induce_from_replay() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "d1.txt", "Cobalt recycling plants reopened.\n\nSmelters resumed work.");
    std::fs::create_dir(dir.path().join("replays")).unwrap();
    write(&dir.path().join("replays"), "d1.txt", RECYCLING);
    let out = shield(dir.path(), &["induce", "d1.txt", "-o", "s.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("s.json")).unwrap()).unwrap();
    assert_eq!(v["events"].as_array().unwrap().len(), 9);

    write(&dir.path().join("replays"), "d2.txt", "I cannot help with that.");
    write(dir.path(), "d2.txt", "Some text.");
    assert_eq!(shield(dir.path(), &["induce", "d2.txt"]).status.code(), Some(2));
    write(dir.path(), "d3.txt", "No replay exists.");
    assert_eq!(shield(dir.path(), &["induce", "d3.txt"]).status.code(), Some(3));
}

#[test]
fn extract_train_predict() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "r.txt", RECYCLING);
    write(dir.path(), "cfg.toml", SMALL_CONFIG);
    write(dir.path(), "doc.txt", "Workers began a strike at the recycling plant.\n\nSmelting was halted after a fire.");
    let out = shield(dir.path(), &["extract", "doc.txt", "-o", "ext.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));

    let out = shield(dir.path(), &["--config", "cfg.toml", "train", "--schema", "r.txt", "-o", "model.json"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(stdout(&out).starts_with("wrote model.json"));

    let args = [
        "--config", "cfg.toml", "predict", "--schema", "r.txt", "--extractions", "ext.json", "--checkpoint", "model.json",
        "--gold", "ev1,ev1.1", "--json",
    ];
    let out = shield(dir.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert!(v["prf"]["fscore"].is_number());

    let bad = shield(dir.path(), &["predict", "--schema", "r.txt", "--extractions", "ext.json", "--stages", "all"]);
    assert_eq!(bad.status.code(), Some(1));
}

#[test]
fn eval_identical_libraries() {
    let dir = tempfile::tempdir().unwrap();
    write(dir.path(), "r.txt", RECYCLING);
    let out = shield(dir.path(), &["eval", "r.txt", "r.txt", "--json"]);
    assert_eq!(out.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["fscore"], 1.0);
}
