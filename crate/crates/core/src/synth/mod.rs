//! Synthetic duplicated corpora with ground truth.
//!
//! Every original profile becomes a cluster whose size is drawn from an
//! empirical cluster-size distribution. Each duplicate is a copy of the
//! original corrupted by an error pattern (per-field edit distances) drawn
//! independently from an empirical pattern distribution. Name edits are
//! random inserts, deletes and substitutions of lowercase letters; date
//! edits pick a valid value whose zero-padded rendering is exactly the
//! requested distance away.

mod roster;

use std::collections::{BTreeMap, HashMap, HashSet};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{
    normalize_field, render_day, render_month, render_year, Encoder, PlainProfile, NUM_FIELDS,
};
use crate::error::{Error, Result};
use crate::similarity::{dice, edit_distance};
use crate::truth::GroundTruth;

pub use roster::bundled_roster;
use roster::{YEAR_MAX, YEAR_MIN};

const SIZE_LABELS: [&str; 6] = ["1", "2", "3", "4", "5", ">5"];
const MAX_PATTERN_DRAWS: usize = 20;
const MAX_NAME_ATTEMPTS: usize = 64;

/// Manual-match cluster counts for sizes 1..=5 and >5, out of 326 clusters.
const MANUAL_SIZE_COUNTS: [u32; 6] = [60, 96, 53, 34, 29, 54];
const TAIL_SIZES: std::ops::RangeInclusive<usize> = 6..=10;
const TAIL_DECAY: f64 = 0.85;

/// Top-10 manual error patterns (first, last, day, month, year) with counts out of 775.
const MANUAL_TOP_PATTERNS: [([usize; NUM_FIELDS], u32); 10] = [
    ([0, 0, 0, 0, 0], 417),
    ([0, 1, 0, 0, 0], 30),
    ([3, 0, 0, 0, 0], 29),
    ([1, 0, 0, 0, 0], 21),
    ([0, 0, 1, 0, 0], 19),
    ([0, 5, 0, 0, 0], 17),
    ([0, 2, 0, 0, 0], 16),
    ([4, 0, 0, 0, 0], 16),
    ([0, 0, 0, 0, 1], 12),
    ([6, 0, 0, 0, 0], 12),
];
const MANUAL_PATTERN_TOTAL: u32 = 775;

/// Patterns sharing the unpublished remainder mass uniformly.
const REMAINDER_PATTERNS: [[usize; NUM_FIELDS]; 12] = [
    [2, 0, 0, 0, 0],
    [5, 0, 0, 0, 0],
    [0, 3, 0, 0, 0],
    [0, 4, 0, 0, 0],
    [0, 6, 0, 0, 0],
    [0, 0, 2, 0, 0],
    [0, 0, 0, 1, 0],
    [0, 0, 0, 2, 0],
    [0, 0, 0, 0, 2],
    [1, 1, 0, 0, 0],
    [0, 1, 1, 0, 0],
    [1, 0, 0, 0, 1],
];

/// Target share of duplicates with no errors.
pub const TARGET_IDENTICAL_SHARE: f64 = 417.0 / 775.0;

fn sample_index(cumulative: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    cumulative
        .iter()
        .position(|&c| u < c)
        .unwrap_or(cumulative.len() - 1)
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSizeDistribution {
    /// `(size, probability)` pairs, sizes ascending.
    buckets: Vec<(usize, f64)>,
}

impl ClusterSizeDistribution {
    pub fn new(mut buckets: Vec<(usize, f64)>) -> Result<Self> {
        buckets.sort_by_key(|b| b.0);
        let dist = Self { buckets };
        dist.validate()?;
        Ok(dist)
    }

    /// The manual-match distribution with the `>5` mass spread over sizes
    /// 6..=10 with geometrically decaying weights.
    pub fn manual_default() -> Self {
        let total: u32 = MANUAL_SIZE_COUNTS.iter().sum();
        let mut buckets: Vec<(usize, f64)> = (1..=5)
            .map(|s| (s, f64::from(MANUAL_SIZE_COUNTS[s - 1]) / f64::from(total)))
            .collect();
        let tail_mass = f64::from(MANUAL_SIZE_COUNTS[5]) / f64::from(total);
        let weights: Vec<f64> = (0..TAIL_SIZES.count())
            .map(|i| TAIL_DECAY.powi(i as i32))
            .collect();
        let norm: f64 = weights.iter().sum();
        buckets.extend(TAIL_SIZES.zip(&weights).map(|(s, w)| (s, tail_mass * w / norm)));
        Self { buckets }
    }

    pub fn point_mass(size: usize) -> Self {
        Self {
            buckets: vec![(size, 1.0)],
        }
    }

    pub fn buckets(&self) -> &[(usize, f64)] {
        &self.buckets
    }

    pub fn validate(&self) -> Result<()> {
        if self.buckets.is_empty() {
            return Err(Error::BadDistribution("no cluster-size buckets".into()));
        }
        let mut seen = HashSet::new();
        for &(size, p) in &self.buckets {
            if size == 0 {
                return Err(Error::BadDistribution("cluster size 0".into()));
            }
            if !seen.insert(size) {
                return Err(Error::BadDistribution(format!("size {size} listed twice")));
            }
            if !(0.0..=1.0).contains(&p) || p.is_nan() {
                return Err(Error::BadDistribution(format!("probability {p} for size {size}")));
            }
        }
        let sum: f64 = self.buckets.iter().map(|b| b.1).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadDistribution(format!("probabilities sum to {sum}")));
        }
        Ok(())
    }

    /// Shares of the 1, 2, 3, 4, 5 and >5 buckets.
    pub fn bucket_shares(&self) -> [f64; 6] {
        let mut shares = [0.0; 6];
        for &(size, p) in &self.buckets {
            shares[size.min(6) - 1] += p;
        }
        shares
    }

    fn sampler(&self) -> Vec<f64> {
        cumulative(self.buckets.iter().map(|b| b.1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorPattern {
    /// Edit distances for first, last, day, month, year.
    pub distances: [usize; NUM_FIELDS],
    pub probability: f64,
}

impl ErrorPattern {
    pub fn is_identical(&self) -> bool {
        self.distances.iter().all(|&d| d == 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternDistribution {
    patterns: Vec<ErrorPattern>,
}

impl PatternDistribution {
    pub fn new(patterns: Vec<ErrorPattern>) -> Result<Self> {
        let dist = Self { patterns };
        dist.validate()?;
        Ok(dist)
    }

    /// Top-10 manual patterns plus a uniform remainder bucket.
    pub fn manual_default() -> Self {
        let total = f64::from(MANUAL_PATTERN_TOTAL);
        let mut patterns: Vec<ErrorPattern> = MANUAL_TOP_PATTERNS
            .iter()
            .map(|&(distances, count)| ErrorPattern {
                distances,
                probability: f64::from(count) / total,
            })
            .collect();
        let top: u32 = MANUAL_TOP_PATTERNS.iter().map(|p| p.1).sum();
        let remainder = f64::from(MANUAL_PATTERN_TOTAL - top) / total;
        let share = remainder / REMAINDER_PATTERNS.len() as f64;
        patterns.extend(REMAINDER_PATTERNS.iter().map(|&distances| ErrorPattern {
            distances,
            probability: share,
        }));
        Self { patterns }
    }

    pub fn patterns(&self) -> &[ErrorPattern] {
        &self.patterns
    }

    pub fn validate(&self) -> Result<()> {
        if !self.patterns.iter().any(ErrorPattern::is_identical) {
            return Err(Error::BadDistribution("identical pattern (0,0,0,0,0) missing".into()));
        }
        if let Some(p) = self
            .patterns
            .iter()
            .find(|p| !(0.0..=1.0).contains(&p.probability) || p.probability.is_nan())
        {
            return Err(Error::BadDistribution(format!("pattern probability {}", p.probability)));
        }
        let sum: f64 = self.patterns.iter().map(|p| p.probability).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::BadDistribution(format!("pattern probabilities sum to {sum}")));
        }
        Ok(())
    }

    pub fn identical_share(&self) -> f64 {
        self.patterns
            .iter()
            .filter(|p| p.is_identical())
            .map(|p| p.probability)
            .sum()
    }

    fn sampler(&self) -> Vec<f64> {
        cumulative(self.patterns.iter().map(|p| p.probability))
    }
}

fn master_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One i.i.d. cluster size per original.
pub fn sample_cluster_sizes(
    n_originals: usize,
    dist: &ClusterSizeDistribution,
    seed: u64,
) -> Result<Vec<usize>> {
    dist.validate()?;
    if n_originals == 0 {
        return Err(Error::BadDistribution("no originals to sample for".into()));
    }
    let cumulative = dist.sampler();
    let mut rng = master_rng(seed, 0);
    Ok((0..n_originals)
        .map(|_| dist.buckets[sample_index(&cumulative, &mut rng)].0)
        .collect())
}

fn random_letter(rng: &mut impl Rng) -> char {
    char::from(b'a' + rng.random_range(0..26u8))
}

fn corrupt_name(name: &str, distance: usize, rng: &mut impl Rng) -> String {
    if distance == 0 {
        return name.to_string();
    }
    for _ in 0..MAX_NAME_ATTEMPTS {
        let mut chars: Vec<char> = name.chars().collect();
        for _ in 0..distance {
            match rng.random_range(0..3) {
                0 => {
                    let at = rng.random_range(0..=chars.len());
                    chars.insert(at, random_letter(rng));
                }
                1 if chars.len() > 1 => {
                    let at = rng.random_range(0..chars.len());
                    chars.remove(at);
                }
                _ if !chars.is_empty() => {
                    let at = rng.random_range(0..chars.len());
                    let old = chars[at];
                    let mut new = random_letter(rng);
                    while new == old {
                        new = random_letter(rng);
                    }
                    chars[at] = new;
                }
                _ => chars.push(random_letter(rng)),
            }
        }
        let candidate: String = chars.into_iter().collect();
        if edit_distance(name, &candidate) == distance {
            return candidate;
        }
    }
    // insertions alone always land exactly on the requested distance
    let mut chars: Vec<char> = name.chars().collect();
    for _ in 0..distance {
        let at = rng.random_range(0..=chars.len());
        chars.insert(at, random_letter(rng));
    }
    chars.into_iter().collect()
}

fn pick_value<T: Copy>(
    candidates: impl Iterator<Item = T>,
    render: impl Fn(T) -> String,
    original: &str,
    distance: usize,
    valid: impl Fn(T) -> bool,
    rng: &mut impl Rng,
) -> Option<T> {
    let feasible: Vec<T> = candidates
        .filter(|&v| valid(v) && edit_distance(&render(v), original) == distance)
        .collect();
    if feasible.is_empty() {
        None
    } else {
        Some(feasible[rng.random_range(0..feasible.len())])
    }
}

fn corrupt_with(
    original: &PlainProfile,
    pattern: &[usize; NUM_FIELDS],
    new_id: &str,
    rng: &mut impl Rng,
) -> Result<PlainProfile> {
    let [d_first, d_last, d_day, d_month, d_year] = *pattern;
    let first = corrupt_name(&normalize_field(&original.first_name), d_first, rng);
    let last = corrupt_name(&normalize_field(&original.last_name), d_last, rng);
    let (mut day, mut month, mut year) = (original.dob_day, original.dob_month, original.dob_year);
    let infeasible =
        |what: &str, d: usize| Error::PatternInfeasible(format!("{new_id}: {what} distance {d}"));
    let valid = |y: i32, m: u32, d: u32| NaiveDate::from_ymd_opt(y, m, d).is_some();
    if d_year > 0 {
        let orig = render_year(year);
        year = pick_value(YEAR_MIN..=YEAR_MAX, render_year, &orig, d_year, |y| valid(y, month, day), rng)
            .ok_or_else(|| infeasible("year", d_year))?;
    }
    if d_month > 0 {
        let orig = render_month(month);
        month = pick_value(1..=12u32, render_month, &orig, d_month, |m| valid(year, m, day), rng)
            .ok_or_else(|| infeasible("month", d_month))?;
    }
    if d_day > 0 {
        let orig = render_day(day);
        day = pick_value(1..=31u32, render_day, &orig, d_day, |d| valid(year, month, d), rng)
            .ok_or_else(|| infeasible("day", d_day))?;
    }
    Ok(PlainProfile {
        profile_id: new_id.to_string(),
        first_name: first,
        last_name: last,
        dob_day: day,
        dob_month: month,
        dob_year: year,
    })
}

/// A duplicate of `original` whose normalized fields are exactly `pattern`
/// edits away from the original's.
pub fn corrupt(
    original: &PlainProfile,
    pattern: &ErrorPattern,
    new_id: &str,
    seed: u64,
) -> Result<PlainProfile> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    corrupt_with(original, &pattern.distances, new_id, &mut rng)
}

/// Per-field edit distances between the normalized fields of two profiles.
pub fn field_distances(a: &PlainProfile, b: &PlainProfile) -> [usize; NUM_FIELDS] {
    let fa = a.normalized_fields();
    let fb = b.normalized_fields();
    std::array::from_fn(|i| edit_distance(&fa[i], &fb[i]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateRecord {
    pub profile_id: String,
    pub original_id: String,
    pub pattern: [usize; NUM_FIELDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucket {
    pub size: String,
    pub count: usize,
    pub share: f64,
    pub target_share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternCount {
    pub pattern: [usize; NUM_FIELDS],
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthStats {
    pub seed: u64,
    pub originals: usize,
    pub total_profiles: usize,
    pub duplicates: usize,
    pub positive_pairs: u64,
    pub size_histogram: Vec<SizeBucket>,
    pub identical_share: f64,
    pub target_identical_share: f64,
    pub pattern_resamples: usize,
    pub patterns: Vec<PatternCount>,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    /// Profiles sorted by id.
    pub profiles: Vec<PlainProfile>,
    /// Cluster id is the original's profile id.
    pub truth: GroundTruth,
    pub duplicates: Vec<DuplicateRecord>,
    pub stats: SynthStats,
}

fn size_histogram(sizes: impl Iterator<Item = usize>, target: [f64; 6]) -> Vec<SizeBucket> {
    let mut counts = [0usize; 6];
    for s in sizes {
        counts[s.clamp(1, 6) - 1] += 1;
    }
    let total: usize = counts.iter().sum();
    SIZE_LABELS
        .iter()
        .zip(counts)
        .zip(target)
        .map(|((label, count), target_share)| SizeBucket {
            size: label.to_string(),
            count,
            share: if total == 0 { 0.0 } else { count as f64 / total as f64 },
            target_share,
        })
        .collect()
}

fn pattern_counts(patterns: impl Iterator<Item = [usize; NUM_FIELDS]>) -> Vec<PatternCount> {
    let mut counts: BTreeMap<[usize; NUM_FIELDS], usize> = BTreeMap::new();
    for p in patterns {
        *counts.entry(p).or_default() += 1;
    }
    let total: usize = counts.values().sum();
    let mut rows: Vec<PatternCount> = counts
        .into_iter()
        .map(|(pattern, count)| PatternCount {
            pattern,
            count,
            share: count as f64 / total as f64,
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.pattern.cmp(&b.pattern)));
    rows
}

/// Expands each original into a cluster of itself plus corrupted duplicates.
pub fn generate_corpus(
    originals: &[PlainProfile],
    size_dist: &ClusterSizeDistribution,
    pattern_dist: &PatternDistribution,
    seed: u64,
) -> Result<SynthCorpus> {
    pattern_dist.validate()?;
    let mut ids = HashSet::with_capacity(originals.len());
    for p in originals {
        p.validate()?;
        if normalize_field(&p.first_name).is_empty() || normalize_field(&p.last_name).is_empty() {
            return Err(Error::InvalidProfile(format!("{}: empty name field", p.profile_id)));
        }
        if !ids.insert(p.profile_id.as_str()) {
            return Err(Error::DuplicateId(p.profile_id.clone()));
        }
    }
    let sizes = sample_cluster_sizes(originals.len(), size_dist, seed)?;
    let pattern_sampler = pattern_dist.sampler();

    let clusters: Vec<(Vec<PlainProfile>, Vec<DuplicateRecord>, usize)> = originals
        .par_iter()
        .zip(&sizes)
        .enumerate()
        .map(|(i, (original, &size))| {
            let mut rng = master_rng(seed, i as u64 + 1);
            let mut members = vec![PlainProfile {
                first_name: normalize_field(&original.first_name),
                last_name: normalize_field(&original.last_name),
                ..original.clone()
            }];
            let mut records = Vec::with_capacity(size - 1);
            let mut resamples = 0;
            for j in 0..size - 1 {
                let new_id = format!("{}-dup-{j}", original.profile_id);
                let mut draws = 0;
                let dup = loop {
                    let pattern =
                        &pattern_dist.patterns[sample_index(&pattern_sampler, &mut rng)];
                    match corrupt_with(original, &pattern.distances, &new_id, &mut rng) {
                        Ok(dup) => break (dup, pattern.distances),
                        Err(e) => {
                            draws += 1;
                            resamples += 1;
                            if draws >= MAX_PATTERN_DRAWS {
                                return Err(e);
                            }
                        }
                    }
                };
                records.push(DuplicateRecord {
                    profile_id: new_id,
                    original_id: original.profile_id.clone(),
                    pattern: dup.1,
                });
                members.push(dup.0);
            }
            Ok((members, records, resamples))
        })
        .collect::<Result<_>>()?;

    let mut profiles = Vec::with_capacity(sizes.iter().sum());
    let mut duplicates = Vec::new();
    let mut truth_rows = Vec::new();
    let mut resamples = 0;
    for (members, records, r) in clusters {
        let cluster_id = members[0].profile_id.clone();
        for m in &members {
            truth_rows.push((cluster_id.clone(), m.profile_id.clone()));
        }
        profiles.extend(members);
        duplicates.extend(records);
        resamples += r;
    }
    profiles.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
    // rejects generated ids that collide with an original
    let truth = GroundTruth::from_assignments(truth_rows)?;

    let stats = SynthStats {
        seed,
        originals: originals.len(),
        total_profiles: profiles.len(),
        duplicates: duplicates.len(),
        positive_pairs: truth.positive_pairs(),
        size_histogram: size_histogram(sizes.iter().copied(), size_dist.bucket_shares()),
        identical_share: share_identical(duplicates.iter().map(|d| d.pattern)),
        target_identical_share: pattern_dist.identical_share(),
        pattern_resamples: resamples,
        patterns: pattern_counts(duplicates.iter().map(|d| d.pattern)),
    };
    Ok(SynthCorpus {
        profiles,
        truth,
        duplicates,
        stats,
    })
}

fn share_identical(patterns: impl Iterator<Item = [usize; NUM_FIELDS]>) -> f64 {
    let (identical, total) = patterns.fold((0usize, 0usize), |(i, t), p| {
        (i + usize::from(p.iter().all(|&d| d == 0)), t + 1)
    });
    if total == 0 {
        0.0
    } else {
        identical as f64 / total as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatternRow {
    pub pattern: [usize; NUM_FIELDS],
    pub count: usize,
    pub share: f64,
    /// Mean per-field Dice of duplicates with this pattern.
    pub mean_dice: [f64; NUM_FIELDS],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub clusters: usize,
    pub profiles: usize,
    pub duplicates: usize,
    pub size_histogram: Vec<SizeBucket>,
    /// Largest absolute gap between realized and target size-bucket shares.
    pub max_size_share_gap: f64,
    pub identical_share: f64,
    pub target_identical_share: f64,
    pub patterns: Vec<PatternRow>,
}

/// Recomputes the size histogram and the (edit distance, Dice) pattern table
/// from the corpus itself. Each duplicate is compared with the cluster
/// member whose id equals the cluster id.
pub fn validate_corpus(
    profiles: &[PlainProfile],
    truth: &GroundTruth,
    encoder: &Encoder,
    targets: (&ClusterSizeDistribution, &PatternDistribution),
) -> Result<ValidationReport> {
    let by_id: HashMap<&str, &PlainProfile> =
        profiles.iter().map(|p| (p.profile_id.as_str(), p)).collect();
    let lookup = |id: &str| {
        by_id
            .get(id)
            .copied()
            .ok_or_else(|| Error::UnknownProfile(id.to_string()))
    };
    let mut pairs = Vec::new();
    for cluster in truth.clusters() {
        let original = lookup(&cluster.id)?;
        for member in cluster.members.iter().filter(|m| **m != cluster.id) {
            pairs.push((original, lookup(member)?));
        }
    }
    let measured: Vec<([usize; NUM_FIELDS], [f64; NUM_FIELDS])> = pairs
        .par_iter()
        .map(|(a, b)| {
            let ea = encoder.encode_profile(a);
            let eb = encoder.encode_profile(b);
            let dices = std::array::from_fn(|i| dice(&ea.fields[i], &eb.fields[i]).unwrap_or(0.0));
            (field_distances(a, b), dices)
        })
        .collect();

    let mut grouped: BTreeMap<[usize; NUM_FIELDS], (usize, [f64; NUM_FIELDS])> = BTreeMap::new();
    for (pattern, dices) in &measured {
        let entry = grouped.entry(*pattern).or_insert((0, [0.0; NUM_FIELDS]));
        entry.0 += 1;
        for (acc, d) in entry.1.iter_mut().zip(dices) {
            *acc += d;
        }
    }
    let total = measured.len();
    let mut rows: Vec<PatternRow> = grouped
        .into_iter()
        .map(|(pattern, (count, sums))| PatternRow {
            pattern,
            count,
            share: count as f64 / total as f64,
            mean_dice: sums.map(|s| s / count as f64),
        })
        .collect();
    rows.sort_by(|a, b| b.count.cmp(&a.count).then(a.pattern.cmp(&b.pattern)));

    let histogram = size_histogram(
        truth.clusters().iter().map(|c| c.members.len()),
        targets.0.bucket_shares(),
    );
    let max_gap = histogram
        .iter()
        .map(|b| (b.share - b.target_share).abs())
        .fold(0.0, f64::max);
    Ok(ValidationReport {
        clusters: truth.len(),
        profiles: profiles.len(),
        duplicates: total,
        size_histogram: histogram,
        max_size_share_gap: max_gap,
        identical_share: share_identical(measured.iter().map(|m| m.0)),
        target_identical_share: targets.1.identical_share(),
        patterns: rows,
    })
}
