#![allow(dead_code)]

use std::path::Path;

/// Runs the CLI in-process, returning its exit status.
pub fn hh(args: &[&str]) -> i32 {
    hhlink::run(std::iter::once("hhlink").chain(args.iter().copied()))
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Synthesizes, encodes, pairs, tunes, trains, links, clusters, evaluates
/// and computes usage metrics, all inside `dir`.
pub fn demo_pipeline(dir: &Path, roster: usize, seed: u64, workers: usize) {
    let key = dir.join("key.txt");
    std::fs::write(&key, "integration-test-key\n").unwrap();
    let f = |name: &str| dir.join(name).to_str().unwrap().to_string();
    let center_csv = f("center.csv");
    let encoded_jsonl = f("encoded.jsonl");
    let links_csv = f("links.csv");
    let merge_center_csv = f("merge_center.csv");
    let model_json = f("model.json");
    let pair_summary_json = f("pair_summary.json");
    let pairs_csv = f("pairs.csv");
    let profiles_csv = f("profiles.csv");
    let stays_csv = f("stays.csv");
    let truth_csv = f("truth.csv");
    let tuning_report_json = f("tuning_report.json");
    let seed = seed.to_string();
    let workers = workers.to_string();
    let roster = roster.to_string();
    let steps: Vec<Vec<&str>> = vec![
        vec!["synth", "--bundled-roster", &roster, "--seed", &seed, "--out", s(dir)],
        vec!["encode", "--profiles", &profiles_csv, "--out", &encoded_jsonl, "--key-file", s(&key)],
        vec![
            "pairs", "--encoded", &encoded_jsonl, "--truth", &truth_csv, "--out", &pairs_csv,
            "--workers", &workers,
        ],
        vec![
            "tune", "--model", "threshold", "--pairs", &pairs_csv, "--pair-summary", &pair_summary_json,
            "--seed", &seed, "--workers", &workers, "--out", s(dir),
        ],
        vec![
            "train", "--params", &tuning_report_json, "--pairs", &pairs_csv, "--pair-summary",
            &pair_summary_json, "--seed", &seed, "--out", &model_json,
        ],
        vec![
            "link", "--model", &model_json, "--encoded", &encoded_jsonl, "--pairs", &pairs_csv,
            "--out", &links_csv,
        ],
        vec![
            "cluster", "--links", &links_csv, "--encoded", &encoded_jsonl, "--algo", "center", "--out",
            &center_csv,
        ],
        vec![
            "cluster", "--links", &links_csv, "--encoded", &encoded_jsonl, "--algo", "merge-center",
            "--out", &merge_center_csv,
        ],
        vec![
            "eval", "--model", &model_json, "--pairs", &pairs_csv, "--pair-summary",
            &pair_summary_json, "--seed", &seed, "--truth", &truth_csv, "--clusters", &center_csv,
            "--clusters", &merge_center_csv, "--out", s(dir),
        ],
        vec!["demo-stays", "--encoded", &encoded_jsonl, "--seed", &seed, "--out", &stays_csv],
        vec!["metrics", "--stays", &stays_csv, "--clusters", &merge_center_csv, "--out", s(dir)],
    ];
    for step in steps {
        assert_eq!(hh(&step), 0, "step failed: {step:?}");
    }
}
