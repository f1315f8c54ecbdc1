use std::collections::{BTreeSet, HashMap};

use chrono::{Days, NaiveDate};
use hhlink_core::cluster::{center_cluster, merge_center_cluster, Clustering, LinkEdge};
use hhlink_core::data_io;
use hhlink_core::encoder::{BloomVector, EncodedProfile, NUM_FIELDS};
use hhlink_core::evaluate::cluster_metrics;
use hhlink_core::pairgen::{compare_all, CompareOptions};
use hhlink_core::similarity::{dice, dice_all, edit_distance};
use hhlink_core::truth::GroundTruth;
use hhlink_core::usage::{all_usage, merge_stays, unmerged_stays, StayRecord, Tenure};
use proptest::prelude::*;

fn naive_dice(a: u64, b: u64, m: u32) -> Option<f64> {
    let (mut both, mut na, mut nb) = (0u32, 0u32, 0u32);
    for i in 0..m {
        let x = (a >> i) & 1;
        let y = (b >> i) & 1;
        both += (x & y) as u32;
        na += x as u32;
        nb += y as u32;
    }
    (na + nb > 0).then(|| 2.0 * both as f64 / (na + nb) as f64)
}

fn mask(m: u32) -> u64 {
    if m == 64 {
        u64::MAX
    } else {
        (1u64 << m) - 1
    }
}

fn profile(id: String, words: [u64; NUM_FIELDS], m: u32) -> EncodedProfile {
    EncodedProfile {
        profile_id: id,
        m,
        fields: words.map(|w| BloomVector::from_word(w & mask(m), m)),
    }
}

/// Sparse words so that a fair share of random pairs clears the floor.
fn sparse_word() -> impl Strategy<Value = u64> {
    (any::<u64>(), any::<u64>()).prop_map(|(a, b)| a & b & 0xFFFF)
}

fn profiles(max: usize) -> impl Strategy<Value = Vec<EncodedProfile>> {
    prop::collection::vec(prop::array::uniform5(sparse_word()), 0..max).prop_map(|rows| {
        rows.into_iter()
            .enumerate()
            .map(|(i, w)| profile(format!("p{i:03}"), w, 64))
            .collect()
    })
}

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("n{i:02}")).collect()
}

fn edges(n: usize) -> impl Strategy<Value = Vec<LinkEdge>> {
    prop::collection::vec((0..n, 0..n, 1u32..=20), 0..n * 3).prop_map(move |raw| {
        let names = ids(n);
        let mut seen = BTreeSet::new();
        raw.into_iter()
            .filter(|(a, b, _)| a != b)
            .filter(|(a, b, _)| seen.insert((*a.min(b), *a.max(b))))
            .map(|(a, b, w)| LinkEdge::new(names[a].clone(), names[b].clone(), w as f64 / 20.0).unwrap())
            .collect()
    })
}

fn is_partition(c: &Clustering, n: usize) -> bool {
    let all: Vec<&str> = c.clusters().iter().flat_map(|k| k.ids()).collect();
    let set: BTreeSet<&str> = all.iter().copied().collect();
    all.len() == n && set.len() == n
}

fn stays() -> impl Strategy<Value = Vec<StayRecord>> {
    let base = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
    prop::collection::vec((0..12usize, 0..3usize, 0u64..200), 1..80).prop_map(move |raw| {
        raw.into_iter()
            .map(|(p, s, d)| StayRecord {
                profile_id: format!("q{p:02}"),
                shelter_id: format!("S{s}"),
                date: base + Days::new(d),
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn dice_matches_bit_loop(a in any::<u64>(), b in any::<u64>(), wide in any::<bool>()) {
        let m = if wide { 64 } else { 32 };
        let (a, b) = (a & mask(m), b & mask(m));
        let va = BloomVector::from_word(a, m);
        let vb = BloomVector::from_word(b, m);
        let d = dice(&va, &vb).ok();
        prop_assert_eq!(d, naive_dice(a, b, m));
        prop_assert_eq!(d, dice(&vb, &va).ok());
        prop_assert!(d.is_none_or(|d| (0.0..=1.0).contains(&d)));
    }

    #[test]
    fn dice_all_pools_counts(a in prop::array::uniform5(any::<u64>()), b in prop::array::uniform5(any::<u64>())) {
        let pa = profile("a".into(), a, 64);
        let pb = profile("b".into(), b, 64);
        let both: u32 = (0..NUM_FIELDS).map(|i| (a[i] & b[i]).count_ones()).sum();
        let total: u32 = (0..NUM_FIELDS).map(|i| a[i].count_ones() + b[i].count_ones()).sum();
        let expected = (total > 0).then(|| 2.0 * both as f64 / total as f64);
        prop_assert_eq!(dice_all(&pa, &pb).ok(), expected);
    }

    #[test]
    fn edit_distance_is_a_metric(s in "[a-c]{0,8}", t in "[a-c]{0,8}", u in "[a-c]{0,8}") {
        let st = edit_distance(&s, &t);
        prop_assert_eq!(st, edit_distance(&t, &s));
        prop_assert_eq!(edit_distance(&s, &s), 0);
        prop_assert_eq!(st == 0, s == t);
        prop_assert!(edit_distance(&s, &u) <= st + edit_distance(&t, &u));
        prop_assert!(st <= s.chars().count().max(t.chars().count()));
        prop_assert!(st >= s.chars().count().abs_diff(t.chars().count()));
    }

    #[test]
    fn compare_all_equals_brute_force(
        ps in profiles(40),
        workers in 1usize..5,
        block_size in 1usize..17,
        floor in prop::sample::select(vec![0.0, 0.3, 0.5, 0.75]),
    ) {
        let opts = CompareOptions { floor, workers, block_size };
        let got: Vec<(String, String, f64)> = compare_all(&ps, &opts)
            .unwrap()
            .into_iter()
            .map(|c| (c.id_a.to_string(), c.id_b.to_string(), c.features.d_all))
            .collect();
        let mut want = Vec::new();
        for (i, a) in ps.iter().enumerate() {
            for b in &ps[i + 1..] {
                // both-empty pairs score 0.0 in the feature pipeline
                let d = dice_all(a, b).unwrap_or(0.0);
                if d >= floor {
                    want.push((a.profile_id.clone(), b.profile_id.clone(), d));
                }
            }
        }
        want.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        prop_assert_eq!(got, want);
    }

    #[test]
    fn encoded_jsonl_round_trips(ps in profiles(20), narrow in any::<bool>()) {
        let m = if narrow { 32 } else { 64 };
        let ps: Vec<EncodedProfile> = ps
            .into_iter()
            .map(|p| profile(p.profile_id, p.fields.map(|f| f.word()), m))
            .collect();
        let text: String = ps.iter().map(|p| data_io::encoded_line(p) + "\n").collect();
        let back = data_io::parse_encoded("mem", text.as_bytes()).unwrap();
        prop_assert_eq!(back, ps);
    }

    #[test]
    fn pairs_csv_round_trips(ps in profiles(25)) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.csv");
        let pairs = compare_all(&ps, &CompareOptions { floor: 0.2, ..Default::default() }).unwrap();
        data_io::write_pairs(&path, &pairs).unwrap();
        let back = data_io::read_pairs(&path).unwrap();
        prop_assert_eq!(back.len(), pairs.len());
        for (x, y) in back.iter().zip(&pairs) {
            prop_assert_eq!(x.key(), y.key());
            prop_assert_eq!(x.features, data_io::round_features(&y.features));
        }
        // a second round trip is exact
        let again = dir.path().join("again.csv");
        data_io::write_pairs(&again, &back).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }

    #[test]
    fn clusters_csv_round_trips(es in edges(10)) {
        let c = merge_center_cluster(&ids(10), &es).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clusters.csv");
        data_io::write_clusters(&path, &c).unwrap();
        prop_assert_eq!(data_io::read_clusters(&path).unwrap(), c);
    }

    #[test]
    fn clusterings_partition_and_merge_coarsens(es in edges(9)) {
        let names = ids(9);
        let center = center_cluster(&names, &es).unwrap();
        let merged = merge_center_cluster(&names, &es).unwrap();
        prop_assert!(is_partition(&center, 9));
        prop_assert!(is_partition(&merged, 9));
        let owner = merged.membership();
        for k in center.clusters() {
            let homes: BTreeSet<usize> = k.ids().map(|id| owner[id]).collect();
            prop_assert_eq!(homes.len(), 1, "center cluster {} split by merge", k.id());
        }
        prop_assert!(merged.len() <= center.len());
    }

    #[test]
    fn identity_clustering_scores_one(sizes in prop::collection::vec(1usize..5, 1..10)) {
        let mut rows = Vec::new();
        let mut groups = Vec::new();
        for (g, &s) in sizes.iter().enumerate() {
            let members: Vec<String> = (0..s).map(|i| format!("g{g}m{i}")).collect();
            rows.extend(members.iter().map(|m| (format!("t{g}"), m.clone())));
            groups.push(members);
        }
        let truth = GroundTruth::from_assignments(rows).unwrap();
        let m = cluster_metrics(&truth, &Clustering::from_groups(groups).unwrap()).unwrap();
        prop_assert_eq!((m.mean_precision, m.mean_recall, m.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn merging_conserves_and_grows_usage(records in stays(), groups in prop::collection::vec(0..4usize, 12)) {
        let profile_ids: Vec<String> = (0..12).map(|p| format!("q{p:02}")).collect();
        let mut by_group: HashMap<usize, Vec<String>> = HashMap::new();
        for (id, g) in profile_ids.iter().zip(&groups) {
            by_group.entry(*g).or_default().push(id.clone());
        }
        let clustering = Clustering::from_groups(by_group.into_values()).unwrap();
        let owner = clustering.membership();
        let center_of = |p: &str| clustering.clusters()[owner[p]].id().to_string();

        let merged = merge_stays(&records, &clustering);
        let distinct: BTreeSet<(String, String, NaiveDate)> = records
            .iter()
            .map(|r| (center_of(&r.profile_id), r.shelter_id.clone(), r.date))
            .collect();
        let merged_total: usize = merged.values().map(Vec::len).sum();
        prop_assert_eq!(merged_total, distinct.len());

        let (before, _) = all_usage(&unmerged_stays(&records), Tenure::Exclusive);
        let (after, _) = all_usage(&merged, Tenure::Exclusive);
        let after: HashMap<&str, _> = after.iter().map(|u| (u.person_id.as_str(), u)).collect();
        for u in &before {
            let person = center_of(&u.person_id);
            let v = after[person.as_str()];
            prop_assert!(v.total_stays >= u.total_stays);
            prop_assert!(v.tenure_days >= u.tenure_days);
            prop_assert!(v.shelters_visited >= u.shelters_visited);
        }
    }
}
