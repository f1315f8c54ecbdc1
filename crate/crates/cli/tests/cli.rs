mod common;

use common::{demo_pipeline, hh, s};
use serde_json::Value;

fn read_json(p: &std::path::Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn demo_pipeline_produces_reports() {
    let dir = tempfile::tempdir().unwrap();
    demo_pipeline(dir.path(), 150, 3, 2);

    let report = read_json(&dir.path().join("eval_report.json"));
    let pairwise = report["pairwise"].as_array().unwrap();
    assert_eq!(pairwise.len(), 2);
    assert!(pairwise.iter().all(|r| r["model"] == "threshold" && r["f1"].as_f64().unwrap() > 0.8));
    let clusters: Vec<&str> = report["cluster"].as_array().unwrap().iter().map(|r| r["clustering"].as_str().unwrap()).collect();
    assert_eq!(clusters, ["center", "merge_center"]);

    let usage = read_json(&dir.path().join("usage_report.json"));
    assert_eq!(usage["reports"].as_array().unwrap().len(), 2);

    let manifest = read_json(&dir.path().join("manifest.json"));
    for stage in ["synth", "encode", "pairs", "tune", "train", "link", "cluster", "eval", "demo-stays", "metrics"] {
        assert!(manifest["stages"].get(stage).is_some(), "no manifest entry for {stage}");
    }
    assert_eq!(manifest["stages"]["encode"]["config"]["key_source"], "key-file");

    for entry in std::fs::read_dir(dir.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.file_name().unwrap() == "key.txt" {
            continue;
        }
        let bytes = std::fs::read(&path).unwrap();
        let text = String::from_utf8_lossy(&bytes);
        assert!(!text.contains("integration-test-key"), "key leaked into {}", path.display());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.jsonl");
    assert_eq!(hh(&["--help"]), 0);
    assert_eq!(hh(&["no-such-command"]), 1);
    assert_eq!(hh(&["pairs", "--encoded", "/nonexistent/encoded.jsonl", "--out", s(&out)]), 1);
    assert_eq!(hh(&["cluster", "--links", "a", "--encoded", "b", "--algo", "bogus", "--out", "c"]), 1);
    assert_eq!(hh(&["tune", "--pairs", "p.csv", "--out", "o"]), 1);
}

#[test]
fn missing_column_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let profiles = dir.path().join("profiles.csv");
    std::fs::write(&profiles, "profile_id,first_name,last_name,dob_day,dob_month\np1,ann,lee,1,2\n").unwrap();
    let key = dir.path().join("key");
    std::fs::write(&key, "k").unwrap();
    let out = dir.path().join("encoded.jsonl");
    assert_eq!(hh(&["encode", "--profiles", s(&profiles), "--out", s(&out), "--key-file", s(&key)]), 1);
    assert!(!out.exists());
}

#[test]
fn config_file_supplies_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("synth.conf");
    std::fs::write(&conf, format!("# demo\nbundled_roster = 30\nseed = 9\nout = \"{}\"\n", s(dir.path()))).unwrap();
    assert_eq!(hh(&["synth", "--config", s(&conf)]), 0);
    let profiles = std::fs::read_to_string(dir.path().join("profiles.csv")).unwrap();
    assert!(profiles.lines().count() > 30);
    let manifest = read_json(&dir.path().join("manifest.json"));
    assert_eq!(manifest["stages"]["synth"]["seed"], 9);

    std::fs::write(&conf, "bogus = 1\n").unwrap();
    assert_eq!(hh(&["synth", "--bundled-roster", "5", "--out", s(dir.path()), "--config", s(&conf)]), 1);
}

#[test]
fn train_defaults_and_link_without_pairs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let key = d.join("key");
    std::fs::write(&key, "another key").unwrap();
    let f = |n: &str| d.join(n).to_str().unwrap().to_string();
    assert_eq!(hh(&["synth", "--bundled-roster", "60", "--seed", "1", "--out", s(d)]), 0);
    assert_eq!(hh(&["encode", "--profiles", &f("profiles.csv"), "--out", &f("encoded.jsonl"), "--key-file", s(&key)]), 0);
    assert_eq!(hh(&["pairs", "--encoded", &f("encoded.jsonl"), "--truth", &f("truth.csv"), "--out", &f("pairs.csv")]), 0);
    for model in ["lr", "tree", "mlp"] {
        let out = f(&format!("{model}.json"));
        assert_eq!(hh(&["train", "--model", model, "--pairs", &f("pairs.csv"), "--out", &out]), 0, "{model}");
        let links = f(&format!("{model}_links.csv"));
        assert_eq!(hh(&["link", "--model", &out, "--encoded", &f("encoded.jsonl"), "--out", &links]), 0);
        let rows = std::fs::read_to_string(&links).unwrap();
        assert!(rows.lines().count() > 1, "{model} linked nothing");
    }
    // unlabeled pairs cannot train
    assert_eq!(hh(&["pairs", "--encoded", &f("encoded.jsonl"), "--out", &f("raw.csv")]), 0);
    assert_eq!(hh(&["train", "--model", "lr", "--pairs", &f("raw.csv"), "--out", &f("x.json")]), 1);
}
