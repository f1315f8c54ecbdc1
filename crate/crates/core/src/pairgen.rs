//! Pair enumeration: the all-pairs similarity join, labeling from ground
//! truth, and stratified splitting.
//!
//! [`compare_all`] sorts profiles by id, cuts the sorted list into fixed-size
//! blocks and evaluates every block pair `(i, j)` with `i <= j` as an
//! independent task. Hits are merged and sorted by `(id_a, id_b)`, so the
//! result does not depend on the worker count or task scheduling.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::encoder::{EncodedProfile, NUM_FIELDS};
use crate::error::{Error, Result};
use crate::similarity::{dice_all_words, features, features_from_words, FeatureVector};
use crate::truth::GroundTruth;

pub const DEFAULT_FLOOR: f64 = 0.5;
pub const DEFAULT_BLOCK_SIZE: usize = 2048;

/// Number of unordered pairs among `k` items.
pub fn pair_count(k: u64) -> u64 {
    if k < 2 {
        0
    } else {
        k / 2 * (k - 1) + (k % 2) * ((k - 1) / 2)
    }
}

/// A compared profile pair with `id_a < id_b`.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidatePair {
    pub id_a: Arc<str>,
    pub id_b: Arc<str>,
    pub features: FeatureVector,
    /// `true` for match.
    pub label: Option<bool>,
    pub confidence: Option<f64>,
}

impl CandidatePair {
    /// Builds a pair in canonical order.
    pub fn new(a: Arc<str>, b: Arc<str>, features: FeatureVector) -> Self {
        let (id_a, id_b) = if a <= b { (a, b) } else { (b, a) };
        Self {
            id_a,
            id_b,
            features,
            label: None,
            confidence: None,
        }
    }

    pub fn key(&self) -> (&str, &str) {
        (&self.id_a, &self.id_b)
    }
}

/// Labeled pairs plus a count of negatives that were never materialized
/// because their pooled Dice fell under the comparison floor.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LabeledDataset {
    pub pairs: Vec<CandidatePair>,
    pub implicit_negatives: u64,
}

impl LabeledDataset {
    pub fn new(pairs: Vec<CandidatePair>) -> Self {
        Self {
            pairs,
            implicit_negatives: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn positive_count(&self) -> u64 {
        self.pairs.iter().filter(|p| p.label == Some(true)).count() as u64
    }

    pub fn negative_count(&self) -> u64 {
        self.pairs.iter().filter(|p| p.label == Some(false)).count() as u64 + self.implicit_negatives
    }

    pub fn labels(&self) -> Vec<bool> {
        self.pairs.iter().map(|p| p.label.unwrap_or(false)).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledDataset {
        LabeledDataset::new(indices.iter().map(|&i| self.pairs[i].clone()).collect())
    }

    fn check_labeled(&self) -> Result<()> {
        if self.pairs.iter().any(|p| p.label.is_none()) {
            return Err(Error::Degenerate("dataset contains unlabeled pairs".into()));
        }
        Ok(())
    }

    fn class_indices(&self) -> (Vec<usize>, Vec<usize>) {
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (i, p) in self.pairs.iter().enumerate() {
            if p.label == Some(true) {
                pos.push(i);
            } else {
                neg.push(i);
            }
        }
        (pos, neg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompareOptions {
    pub floor: f64,
    pub workers: usize,
    pub block_size: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            floor: DEFAULT_FLOOR,
            workers: 0,
            block_size: DEFAULT_BLOCK_SIZE,
        }
    }
}

struct PackedProfiles {
    ids: Vec<Arc<str>>,
    words: Vec<[u64; NUM_FIELDS]>,
    weights: Vec<u32>,
}

fn pack(profiles: &[EncodedProfile]) -> Result<PackedProfiles> {
    if let Some(first) = profiles.first() {
        if let Some(bad) = profiles.iter().find(|p| p.m != first.m) {
            return Err(Error::MMismatch {
                expected: first.m,
                found: bad.m,
                profile_id: bad.profile_id.clone(),
            });
        }
    }
    let mut order: Vec<&EncodedProfile> = profiles.iter().collect();
    order.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
    if let Some(w) = order.windows(2).find(|w| w[0].profile_id == w[1].profile_id) {
        return Err(Error::DuplicateId(w[0].profile_id.clone()));
    }
    let words: Vec<[u64; NUM_FIELDS]> = order
        .iter()
        .map(|p| std::array::from_fn(|i| p.fields[i].word()))
        .collect();
    let weights = words
        .iter()
        .map(|w| w.iter().map(|x| x.count_ones()).sum())
        .collect();
    Ok(PackedProfiles {
        ids: order.iter().map(|p| Arc::from(p.profile_id.as_str())).collect(),
        words,
        weights,
    })
}

fn block_task(
    packed: &PackedProfiles,
    rows: std::ops::Range<usize>,
    cols: std::ops::Range<usize>,
    floor: f64,
) -> Vec<(u32, u32, FeatureVector)> {
    let mut hits = Vec::new();
    for a in rows {
        let start = cols.start.max(a + 1);
        let wa = &packed.words[a];
        for b in start..cols.end {
            let wb = &packed.words[b];
            // same arithmetic as the full feature computation, so the
            // prune never disagrees with the emitted d_all
            if dice_all_words(wa, wb, packed.weights[a], packed.weights[b]) >= floor {
                let (fv, _) = features_from_words(wa, wb);
                hits.push((a as u32, b as u32, fv));
            }
        }
    }
    hits
}

/// Every pair with pooled Dice `>= floor`, sorted by `(id_a, id_b)`.
pub fn compare_all(profiles: &[EncodedProfile], opts: &CompareOptions) -> Result<Vec<CandidatePair>> {
    if !(0.0..1.0).contains(&opts.floor) {
        return Err(Error::InvalidConfig(format!("floor must be in [0, 1), got {}", opts.floor)));
    }
    if opts.block_size == 0 {
        return Err(Error::InvalidConfig("block size must be positive".into()));
    }
    let packed = pack(profiles)?;
    let n = packed.ids.len();
    let blocks: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(opts.block_size)
        .map(|s| s..(s + opts.block_size).min(n))
        .collect();
    let tasks: Vec<(usize, usize)> = (0..blocks.len())
        .flat_map(|i| (i..blocks.len()).map(move |j| (i, j)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.workers)
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    let mut hits: Vec<(u32, u32, FeatureVector)> = pool.install(|| {
        let per_task: Vec<_> = tasks
            .par_iter()
            .map(|&(i, j)| block_task(&packed, blocks[i].clone(), blocks[j].clone(), opts.floor))
            .collect();
        let mut all: Vec<_> = per_task.into_iter().flatten().collect();
        all.par_sort_unstable_by_key(|h| (h.0, h.1));
        all
    });
    Ok(hits
        .drain(..)
        .map(|(a, b, fv)| CandidatePair {
            id_a: packed.ids[a as usize].clone(),
            id_b: packed.ids[b as usize].clone(),
            features: fv,
            label: None,
            confidence: None,
        })
        .collect())
}

/// Labels candidate pairs from ground truth and adds every within-cluster
/// pair that the comparison floor pruned away. Pairs never materialized are
/// counted in `implicit_negatives`.
pub fn label_pairs(
    candidates: Vec<CandidatePair>,
    profiles: &[EncodedProfile],
    truth: &GroundTruth,
) -> Result<LabeledDataset> {
    let by_id: std::collections::HashMap<&str, &EncodedProfile> =
        profiles.iter().map(|p| (p.profile_id.as_str(), p)).collect();
    for id in truth.clusters().iter().flat_map(|c| &c.members) {
        if !by_id.contains_key(id.as_str()) {
            return Err(Error::UnknownProfile(id.clone()));
        }
    }
    let membership = truth.membership();
    let same_cluster = |a: &str, b: &str| match (membership.get(a), membership.get(b)) {
        (Some(x), Some(y)) => x == y,
        _ => false,
    };

    let mut pairs = candidates;
    let present: HashSet<(Arc<str>, Arc<str>)> = pairs
        .iter()
        .map(|p| (p.id_a.clone(), p.id_b.clone()))
        .collect();
    for cluster in truth.clusters() {
        for (i, a) in cluster.members.iter().enumerate() {
            for b in &cluster.members[i + 1..] {
                let key: (Arc<str>, Arc<str>) = (Arc::from(a.as_str()), Arc::from(b.as_str()));
                if present.contains(&key) {
                    continue;
                }
                let (fv, _) = features(by_id[a.as_str()], by_id[b.as_str()])?;
                pairs.push(CandidatePair::new(key.0, key.1, fv));
            }
        }
    }
    for p in &mut pairs {
        p.label = Some(same_cluster(&p.id_a, &p.id_b));
    }
    pairs.sort_by(|x, y| x.key().cmp(&y.key()));
    let total = pair_count(profiles.len() as u64);
    Ok(LabeledDataset {
        implicit_negatives: total.saturating_sub(pairs.len() as u64),
        pairs,
    })
}

fn round_share(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64) + 0.5).floor() as usize
}

/// Per-class shuffled 70/30-style split; each class contributes
/// `floor(fraction * n_class + 0.5)` pairs to the training side. Pairs keep
/// their original relative order on both sides.
pub fn stratified_split(
    ds: &LabeledDataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset, LabeledDataset)> {
    ds.check_labeled()?;
    if !(0.0..=1.0).contains(&train_fraction) {
        return Err(Error::InvalidConfig(format!("train fraction {train_fraction}")));
    }
    if ds.positive_count() == 0 || ds.negative_count() == 0 {
        return Err(Error::Degenerate(format!(
            "{} positives and {} negatives",
            ds.positive_count(),
            ds.negative_count()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut pos, mut neg) = ds.class_indices();
    let mut in_train = vec![false; ds.len()];
    for class in [&mut pos, &mut neg] {
        class.shuffle(&mut rng);
        for &i in &class[..round_share(train_fraction, class.len())] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (p, &t) in ds.pairs.iter().zip(&in_train) {
        if t {
            train.push(p.clone());
        } else {
            test.push(p.clone());
        }
    }
    let implicit_train = round_share(train_fraction, ds.implicit_negatives as usize) as u64;
    Ok((
        LabeledDataset {
            pairs: train,
            implicit_negatives: implicit_train,
        },
        LabeledDataset {
            pairs: test,
            implicit_negatives: ds.implicit_negatives - implicit_train,
        },
    ))
}

/// Fold index per pair; within each class, fold sizes differ by at most one.
pub fn stratified_kfold(ds: &LabeledDataset, folds: usize, seed: u64) -> Result<Vec<usize>> {
    ds.check_labeled()?;
    if folds < 2 {
        return Err(Error::InvalidConfig(format!("need at least 2 folds, got {folds}")));
    }
    let (mut pos, mut neg) = ds.class_indices();
    if pos.len() < folds || neg.len() < folds {
        return Err(Error::Degenerate(format!(
            "{} positives and {} negatives cannot fill {folds} folds",
            pos.len(),
            neg.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0; ds.len()];
    for class in [&mut pos, &mut neg] {
        class.shuffle(&mut rng);
        for (rank, &i) in class.iter().enumerate() {
            assignment[i] = rank % folds;
        }
    }
    Ok(assignment)
}
