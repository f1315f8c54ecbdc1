use std::collections::HashSet;

use hhlink_core::encoder::{qgrams, Encoder, EncoderConfig, PlainProfile};
use hhlink_core::synth::bundled_roster;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn encoder(m: u32, key: &[u8]) -> Encoder {
    Encoder::new(EncoderConfig::new(m, 2, key.to_vec()).unwrap()).unwrap()
}

/// Upper-tail p-value of a uniformity test over `m` bins.
fn uniformity_p(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let expected = n as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

#[test]
fn bigram_positions_are_uniform_across_keys() {
    for m in [32u32, 64] {
        for (gram, field) in [("ge", 0usize), ("_s", 1), ("07", 2)] {
            let mut first = vec![0u64; m as usize];
            let mut second = vec![0u64; m as usize];
            for i in 0..10_000u32 {
                let key = format!("key-{i}");
                let pos = encoder(m, key.as_bytes()).positions(gram, field);
                first[pos[0] as usize] += 1;
                second[pos[1] as usize] += 1;
            }
            for counts in [&first, &second] {
                let p = uniformity_p(counts);
                assert!(p > 0.01, "m={m} gram={gram} field={field}: p={p}");
            }
        }
    }
}

#[test]
fn different_keys_give_different_vectors() {
    let a = encoder(64, b"first key");
    let b = encoder(64, b"second key");
    let strings: Vec<String> = (0..1000).map(|i| format!("person{i}name")).collect();
    let differ = strings
        .iter()
        .filter(|s| a.encode_field(s, 0).unwrap() != b.encode_field(s, 0).unwrap())
        .count();
    assert!(differ >= 990, "only {differ} of 1000 differ");
}

#[test]
fn encoding_ignores_qgram_order_and_duplicates() {
    let e = encoder(64, b"k");
    let grams = qgrams("anna");
    assert_eq!(grams, ["_a", "an", "nn", "na", "a_"]);
    let mut manual = 0u64;
    for g in &grams {
        for p in e.positions(g, 0) {
            manual |= 1u64 << (63 - p);
        }
    }
    assert_eq!(e.encode_field("anna", 0).unwrap().word(), manual);
}

#[test]
fn generated_corpus_encodes_with_unique_ids() {
    let roster = bundled_roster(4750, 1);
    let e = encoder(64, b"k");
    let encoded: Vec<_> = roster.iter().map(|p| e.encode_profile(p)).collect();
    let ids: HashSet<&str> = encoded.iter().map(|p| p.profile_id.as_str()).collect();
    assert_eq!(ids.len(), 4750);
}

#[test]
fn zero_padding_round_trips_through_bigrams() {
    let p = PlainProfile {
        profile_id: "x".into(),
        first_name: "a".into(),
        last_name: "b".into(),
        dob_day: 7,
        dob_month: 3,
        dob_year: 1985,
    };
    let f = p.normalized_fields();
    assert_eq!(&f[2..], ["07", "03", "1985"]);
    let grams = qgrams(&f[2]);
    assert_eq!(grams, ["_0", "07", "7_"]);
    let rebuilt: String = grams[1..].iter().map(|g| g.chars().next().unwrap()).collect();
    assert_eq!(rebuilt, "07");
}
