use std::path::Path;
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_graphmoco"))
        .args(args)
        .env("GRAPHMOCO_LOG", "error")
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

#[test]
fn synth_train_embed_search_eval_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let model = dir.path().join("model");
    let index = dir.path().join("index.gmix");
    let report = dir.path().join("report.json");

    ok(&["synth", "--functions", "12", "--variants", "3", "--seed", "4", "--out", path(&corpus)]);
    assert_eq!(std::fs::read_to_string(&corpus).unwrap().lines().count(), 36);

    let config = dir.path().join("train.json");
    std::fs::write(&config, r#"{"epochs": 1, "batch": 4, "queue": 8, "dim": 8, "filters": 4, "hidden": 8}"#).unwrap();
    ok(&["train", "--corpus", path(&corpus), "--out", path(&model), "--config", path(&config), "--seed", "2"]);
    let checkpoint = model.join("checkpoint.gmck");
    assert!(checkpoint.exists());

    ok(&["embed", "--checkpoint", path(&checkpoint), "--corpus", path(&corpus), "--out", path(&index)]);
    let listing = ok(&["search", "--index", path(&index), "--function-id", "fn_00003", "--top", "5"]);
    let rows: Vec<&str> = listing.lines().filter(|l| l.trim_start().starts_with(char::is_numeric)).collect();
    assert_eq!(rows.len(), 5, "{listing}");
    let sims: Vec<f64> = rows.iter().map(|r| r.split_whitespace().nth(1).unwrap().parse().unwrap()).collect();
    assert!(sims.windows(2).all(|w| w[0] >= w[1]), "{listing}");

    ok(&[
        "eval", "--checkpoint", path(&checkpoint), "--corpus", path(&corpus), "--task", "xm", "--pool", "10",
        "--metrics", "auc,recall1", "--out", path(&report),
    ]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    let recall = json["metrics"]["recall1"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&recall));
    assert_eq!(json["config"]["eval"]["metrics"], serde_json::json!(["auc", "recall1"]));
}

#[test]
fn usage_errors_exit_with_two() {
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&[]).status.code(), Some(2));
    let missing = run(&["synth", "--functions", "3"]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(!missing.stderr.is_empty());
}

#[test]
fn runtime_failures_print_one_line() {
    let out = run(&["embed", "--checkpoint", "/nonexistent/ck.gmck", "--corpus", "/nonexistent/c.jsonl", "--out", "/tmp/x.gmix"]);
    assert!(!out.status.success());
    assert_ne!(out.status.code(), Some(2));
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.trim_end().lines().count(), 1, "{stderr}");
}
