use std::collections::BTreeSet;

use hhlink_core::adjudication::{Adjudicator, Decision};
use hhlink_core::encoder::{EncodedProfile, Encoder, EncoderConfig, PlainProfile};
use hhlink_core::models::{self, Hyperparameters, ModelType};
use hhlink_core::pairgen::{compare_all, label_pairs, pair_count, stratified_split, CompareOptions, LabeledDataset};
use hhlink_core::similarity::{dice_all, FeatureVector};
use hhlink_core::synth::{bundled_roster, generate_corpus, ClusterSizeDistribution, PatternDistribution, SynthCorpus};
use hhlink_core::tuner::{evaluate_model, final_fit, grid_search, Grid};

fn corpus(originals: usize, seed: u64) -> SynthCorpus {
    generate_corpus(
        &bundled_roster(originals, seed),
        &ClusterSizeDistribution::manual_default(),
        &PatternDistribution::manual_default(),
        seed,
    )
    .unwrap()
}

fn encode(profiles: &[PlainProfile]) -> Vec<EncodedProfile> {
    let e = Encoder::new(EncoderConfig::new(64, 2, b"pipeline key".to_vec()).unwrap()).unwrap();
    profiles.iter().map(|p| e.encode_profile(p)).collect()
}

fn dataset(originals: usize, seed: u64) -> LabeledDataset {
    let c = corpus(originals, seed);
    let enc = encode(&c.profiles);
    let cands = compare_all(&enc, &CompareOptions::default()).unwrap();
    label_pairs(cands, &enc, &c.truth).unwrap()
}

#[test]
fn compare_all_matches_double_loop() {
    let c = corpus(700, 3);
    let enc: Vec<EncodedProfile> = encode(&c.profiles).into_iter().take(2000).collect();
    let got = compare_all(&enc, &CompareOptions { workers: 3, block_size: 97, ..Default::default() }).unwrap();
    let mut want = BTreeSet::new();
    for i in 0..enc.len() {
        for j in i + 1..enc.len() {
            if dice_all(&enc[i], &enc[j]).unwrap_or(0.0) >= 0.5 {
                let (a, b) = (&enc[i].profile_id, &enc[j].profile_id);
                want.insert(if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) });
            }
        }
    }
    let got: BTreeSet<(String, String)> = got.iter().map(|p| (p.id_a.to_string(), p.id_b.to_string())).collect();
    assert_eq!(got, want);
}

#[test]
fn labels_cover_every_true_pair() {
    let c = corpus(300, 5);
    let enc = encode(&c.profiles);
    let ds = label_pairs(compare_all(&enc, &CompareOptions::default()).unwrap(), &enc, &c.truth).unwrap();
    assert_eq!(ds.positive_count(), c.truth.positive_pairs());
    assert_eq!(ds.len() as u64 + ds.implicit_negatives, pair_count(enc.len() as u64));
}

#[test]
fn every_model_matches_identical_pairs() {
    let ds = dataset(300, 11);
    let (train, test) = stratified_split(&ds, 0.7, 11).unwrap();
    for t in [ModelType::Threshold, ModelType::Lr, ModelType::Tree, ModelType::Mlp] {
        let model = models::train(&train, &Hyperparameters::default_for(t), 11).unwrap();
        assert!(model.predict(&FeatureVector::ONES).unwrap().is_match, "{t:?}");
        let m = evaluate_model(&model, &test).unwrap();
        assert!(m.f1 > 0.8, "{t:?}: test F1 {}", m.f1);
        let back = models::Model::from_json(&model.to_json().unwrap()).unwrap();
        for p in &test.pairs {
            assert_eq!(back.predict(&p.features).unwrap(), model.predict(&p.features).unwrap());
        }
    }
}

#[test]
fn refit_is_not_worse_than_cross_validation() {
    let ds = dataset(300, 13);
    let (train, _) = stratified_split(&ds, 0.7, 13).unwrap();
    for t in [ModelType::Threshold, ModelType::Tree] {
        let report = grid_search(&train, &Grid::default_for(t), 5, 13, 2).unwrap();
        let best = report.summaries.iter().find(|s| s.hyperparameters == report.best).unwrap();
        let model = final_fit(&train, &report.best, 13).unwrap();
        let f1 = evaluate_model(&model, &train).unwrap().f1;
        assert!(f1 >= best.mean_f1 - 0.05, "{t:?}: refit {f1} vs cv {}", best.mean_f1);
    }
}

fn levenshtein(a: &[char], b: &[char]) -> usize {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in table.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        table[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = table[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            table[i][j] = sub.min(table[i - 1][j] + 1).min(table[i][j - 1] + 1);
        }
    }
    table[a.len()][b.len()]
}

#[test]
fn adjudication_candidates_match_brute_force() {
    let profiles = bundled_roster(1000, 21);
    let adj = Adjudicator::new(profiles.clone(), 0).unwrap();
    let concat: Vec<(String, Vec<char>)> = profiles
        .iter()
        .map(|p| (p.profile_id.clone(), p.normalized_fields().concat().chars().collect()))
        .collect();
    for (anchor, chars) in concat.iter().step_by(37) {
        let mut ranked: Vec<(usize, &str)> = concat
            .iter()
            .filter(|(id, _)| id != anchor)
            .map(|(id, c)| (levenshtein(chars, c), id.as_str()))
            .collect();
        ranked.sort();
        ranked.truncate(10);
        let task = adj.task_for(anchor).unwrap();
        let got: Vec<(usize, &str)> = task
            .candidates
            .iter()
            .map(|c| (c.distance, c.profile.profile_id.as_str()))
            .collect();
        assert_eq!(got, ranked, "anchor {anchor}");
    }
}

#[test]
fn adjudicated_truth_labels_pairs() {
    let c = corpus(40, 17);
    let mut adj = Adjudicator::new(c.profiles.clone(), 4).unwrap();
    let membership = c.truth.membership();
    while let Ok(task) = adj.next_task("reviewer") {
        let anchor = &task.anchor.profile_id;
        let (accepted, rejected): (Vec<_>, Vec<_>) = task
            .candidates
            .iter()
            .map(|k| k.profile.profile_id.clone())
            .partition(|id| membership[id.as_str()] == membership[anchor.as_str()]);
        adj.submit(Decision {
            anchor_id: anchor.clone(),
            accepted: accepted.into_iter().collect(),
            rejected: rejected.into_iter().collect(),
            reviewer: "r".into(),
            timestamp: None,
        })
        .unwrap();
    }
    let exported = adj.export_truth().unwrap();
    let enc = encode(&c.profiles);
    let cands = compare_all(&enc, &CompareOptions::default()).unwrap();
    let from_review = label_pairs(cands.clone(), &enc, &exported).unwrap();
    let from_truth = label_pairs(cands, &enc, &c.truth).unwrap();
    // every cluster here has at most ten duplicates, so a truthful reviewer recovers it
    assert_eq!(from_review.labels(), from_truth.labels());
    assert_eq!(from_review.implicit_negatives, from_truth.implicit_negatives);
}
