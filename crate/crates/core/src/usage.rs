//! Shelter utilization on linked data: episodes, stays, tenure, shelters
//! visited, and heavy-user cohorts.
//!
//! Stays are re-keyed from profiles to persons (clusters) and exact
//! `(person, shelter, date)` duplicates are dropped. An episode is a maximal
//! run of stays whose consecutive dates are fewer than 30 days apart.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{Days, NaiveDate};
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{median_sorted, Clustering};
use crate::error::{Error, Result};

/// Gap in days that starts a new episode.
pub const EPISODE_GAP_DAYS: i64 = 30;
pub const MIN_COHORT_PERSONS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct StayRecord {
    pub profile_id: String,
    pub shelter_id: String,
    pub date: NaiveDate,
}

/// One deduplicated stay of a person.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Stay {
    pub date: NaiveDate,
    pub shelter_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Episode {
    pub person_id: String,
    pub start: NaiveDate,
    pub end: NaiveDate,
    pub stays: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PersonUsage {
    pub person_id: String,
    pub total_stays: usize,
    pub tenure_days: i64,
    pub shelters_visited: usize,
    pub episodes: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tenure {
    /// `last - first`; a single-day user has tenure 0.
    #[default]
    Exclusive,
    /// `last - first + 1`.
    Inclusive,
}

/// Sorted, deduplicated stays per person id.
pub type PersonStays = BTreeMap<String, Vec<Stay>>;

/// Re-keys stays to cluster ids; profiles outside the clustering are their
/// own persons.
pub fn merge_stays(stays: &[StayRecord], clustering: &Clustering) -> PersonStays {
    let membership = clustering.membership();
    let mut sets: BTreeMap<String, BTreeSet<Stay>> = BTreeMap::new();
    for s in stays {
        let person = match membership.get(s.profile_id.as_str()) {
            Some(&c) => clustering.clusters()[c].id(),
            None => s.profile_id.as_str(),
        };
        sets.entry(person.to_string()).or_default().insert(Stay {
            date: s.date,
            shelter_id: s.shelter_id.clone(),
        });
    }
    sets.into_iter().map(|(k, v)| (k, v.into_iter().collect())).collect()
}

/// Stays grouped per profile, with no merging.
pub fn unmerged_stays(stays: &[StayRecord]) -> PersonStays {
    merge_stays(stays, &Clustering::default())
}

pub fn episodes(person_id: &str, stays: &[Stay]) -> Vec<Episode> {
    let mut dates: Vec<NaiveDate> = stays.iter().map(|s| s.date).collect();
    dates.sort_unstable();
    let mut out: Vec<Episode> = Vec::new();
    for d in dates {
        match out.last_mut() {
            Some(ep) if (d - ep.end).num_days() < EPISODE_GAP_DAYS => {
                ep.end = d;
                ep.stays += 1;
            }
            _ => out.push(Episode {
                person_id: person_id.to_string(),
                start: d,
                end: d,
                stays: 1,
            }),
        }
    }
    out
}

pub fn usage(person_id: &str, stays: &[Stay], tenure: Tenure) -> Result<PersonUsage> {
    let first = stays.iter().map(|s| s.date).min().ok_or(Error::EmptyStays)?;
    let last = stays.iter().map(|s| s.date).max().ok_or(Error::EmptyStays)?;
    let unique: BTreeSet<&Stay> = stays.iter().collect();
    let shelters: BTreeSet<&str> = stays.iter().map(|s| s.shelter_id.as_str()).collect();
    let span = (last - first).num_days();
    Ok(PersonUsage {
        person_id: person_id.to_string(),
        total_stays: unique.len(),
        tenure_days: match tenure {
            Tenure::Exclusive => span,
            Tenure::Inclusive => span + 1,
        },
        shelters_visited: shelters.len(),
        episodes: episodes(person_id, stays).len(),
    })
}

/// Usage and episodes for every person, in person-id order.
pub fn all_usage(persons: &PersonStays, tenure: Tenure) -> (Vec<PersonUsage>, Vec<Episode>) {
    let per_person: Vec<(PersonUsage, Vec<Episode>)> = persons
        .par_iter()
        .filter(|(_, stays)| !stays.is_empty())
        .map(|(id, stays)| {
            let u = usage(id, stays, tenure).expect("non-empty stays");
            (u, episodes(id, stays))
        })
        .collect();
    let mut usages = Vec::with_capacity(per_person.len());
    let mut eps = Vec::new();
    for (u, e) in per_person {
        usages.push(u);
        eps.extend(e);
    }
    (usages, eps)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub median: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        Some(Self {
            mean: v.iter().sum::<f64>() / v.len() as f64,
            median: median_sorted(&v),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopCohort {
    pub percent: f64,
    /// Smallest metric value admitted to the cohort.
    pub threshold: f64,
    pub persons: usize,
    pub mean: f64,
    pub median: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub all: Summary,
    pub top: Option<TopCohort>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub persons: usize,
    /// Set when there are too few persons for a top cohort.
    pub too_small: bool,
    pub metrics: Vec<MetricReport>,
}

pub const METRICS: [&str; 4] = ["total_stays", "tenure_days", "shelters_visited", "episodes"];

fn metric_value(u: &PersonUsage, metric: &str) -> f64 {
    match metric {
        "total_stays" => u.total_stays as f64,
        "tenure_days" => u.tenure_days as f64,
        "shelters_visited" => u.shelters_visited as f64,
        "episodes" => u.episodes as f64,
        _ => unreachable!("unknown metric {metric}"),
    }
}

/// Persons whose value is at least the `ceil(n * percent / 100)`-th largest
/// value, ties included.
pub fn top_cohort(values: &[f64], percent: f64) -> Option<TopCohort> {
    if values.is_empty() {
        return None;
    }
    let mut desc = values.to_vec();
    desc.sort_by(|a, b| b.total_cmp(a));
    let k = ((values.len() as f64 * percent / 100.0).ceil() as usize).clamp(1, values.len());
    let threshold = desc[k - 1];
    let cohort: Vec<f64> = desc.into_iter().take_while(|&v| v >= threshold).collect();
    let s = Summary::of(&cohort)?;
    Some(TopCohort {
        percent,
        threshold,
        persons: cohort.len(),
        mean: s.mean,
        median: s.median,
    })
}

pub fn cohort_report(usages: &[PersonUsage], percent: f64) -> Result<CohortReport> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidConfig(format!("cohort percent {percent}")));
    }
    if usages.is_empty() {
        return Err(Error::EmptyStays);
    }
    let too_small = usages.len() < MIN_COHORT_PERSONS;
    if too_small {
        log::warn!(
            "{} persons is below {MIN_COHORT_PERSONS}; reporting the full cohort only",
            usages.len()
        );
    }
    let metrics = METRICS
        .iter()
        .map(|&m| {
            let values: Vec<f64> = usages.iter().map(|u| metric_value(u, m)).collect();
            MetricReport {
                metric: m.to_string(),
                all: Summary::of(&values).expect("non-empty"),
                top: if too_small { None } else { top_cohort(&values, percent) },
            }
        })
        .collect();
    Ok(CohortReport {
        persons: usages.len(),
        too_small,
        metrics,
    })
}

/// Episode count per episode length in stays, ascending by length.
pub fn episode_length_histogram(episodes: &[Episode]) -> Vec<(usize, usize)> {
    let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
    for e in episodes {
        *counts.entry(e.stays).or_default() += 1;
    }
    counts.into_iter().collect()
}

/// Power-of-two buckets `[2^k, 2^(k+1))` of a length histogram, for log plots.
pub fn log2_buckets(hist: &[(usize, usize)]) -> Vec<(usize, usize, usize)> {
    let mut buckets: BTreeMap<u32, usize> = BTreeMap::new();
    for &(len, count) in hist {
        *buckets.entry(len.max(1).ilog2()).or_default() += count;
    }
    buckets
        .into_iter()
        .map(|(k, c)| (1usize << k, (1usize << (k + 1)) - 1, c))
        .collect()
}

/// Utilization report of one clustering (or of the unmerged profiles).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UsageReport {
    pub clustering: String,
    pub tenure: Tenure,
    pub distinct_stays: usize,
    pub episodes: usize,
    pub cohorts: CohortReport,
}

pub fn usage_report(
    name: &str,
    persons: &PersonStays,
    tenure: Tenure,
    percent: f64,
) -> Result<(UsageReport, Vec<(usize, usize)>)> {
    let (usages, eps) = all_usage(persons, tenure);
    let report = UsageReport {
        clustering: name.to_string(),
        tenure,
        distinct_stays: usages.iter().map(|u| u.total_stays).sum(),
        episodes: eps.len(),
        cohorts: cohort_report(&usages, percent)?,
    };
    Ok((report, episode_length_histogram(&eps)))
}

/// Synthetic stays with a mix of one-off, episodic and chronic users.
pub fn demo_stays(profile_ids: &[String], shelters: usize, start: NaiveDate, days: u64, seed: u64) -> Vec<StayRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shelter_ids: Vec<String> = (0..shelters.max(1)).map(|i| format!("S{:02}", i + 1)).collect();
    let days = days.max(1);
    let mut out = Vec::new();
    for id in profile_ids {
        let kind: f64 = rng.random();
        let (episodes, max_len) = if kind < 0.6 {
            (1, 3)
        } else if kind < 0.9 {
            (rng.random_range(2..=5), 20)
        } else {
            (rng.random_range(1..=3), 300)
        };
        let home = shelter_ids.choose(&mut rng).unwrap();
        for _ in 0..episodes {
            let mut day = rng.random_range(0..days);
            let len = rng.random_range(1..=max_len);
            for _ in 0..len {
                if day >= days {
                    break;
                }
                let shelter = if rng.random_bool(0.8) {
                    home
                } else {
                    shelter_ids.choose(&mut rng).unwrap()
                };
                out.push(StayRecord {
                    profile_id: id.clone(),
                    shelter_id: shelter.clone(),
                    date: start + Days::new(day),
                });
                day += if rng.random_bool(0.85) { 1 } else { rng.random_range(2..40) };
            }
        }
    }
    out.sort();
    out.dedup();
    out
}

/// Per-profile usage keyed by profile id, for comparisons against merged output.
pub fn usage_by_id(usages: &[PersonUsage]) -> HashMap<&str, &PersonUsage> {
    usages.iter().map(|u| (u.person_id.as_str(), u)).collect()
}
