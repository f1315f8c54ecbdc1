//! Pairwise confusion metrics and cluster-level precision and recall.
//!
//! Each ground-truth cluster `g` is mapped to the estimated cluster `f(g)`
//! sharing the most profiles with it (ties: smaller cluster, then smaller
//! cluster id). Per-cluster precision is `|f(g) ∩ g| / |f(g)|` and recall is
//! `|f(g) ∩ g| / |g|`; aggregates are unweighted means over ground-truth
//! clusters and F1 is the harmonic mean of the two means.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::cluster::{ClusterStats, Clustering, SizeBucketCount};
use crate::error::{Error, Result};
use crate::truth::GroundTruth;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PairMetrics {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when no pair was predicted a match, so precision is 0 by convention.
    pub precision_undefined: bool,
    /// Set when no pair is a true match, so recall is 0 by convention.
    pub recall_undefined: bool,
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

impl PairMetrics {
    pub fn from_counts(tp: u64, fp: u64, fn_: u64, tn: u64) -> Self {
        let predicted = tp + fp;
        let actual = tp + fn_;
        let precision = if predicted > 0 {
            tp as f64 / predicted as f64
        } else {
            0.0
        };
        let recall = if actual > 0 { tp as f64 / actual as f64 } else { 0.0 };
        Self {
            tp,
            fp,
            fn_,
            tn,
            precision,
            recall,
            f1: harmonic(precision, recall),
            precision_undefined: predicted == 0,
            recall_undefined: actual == 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Adds pairs that were never materialized; all are predicted and
    /// labeled non-matches.
    pub fn with_implicit_negatives(self, n: u64) -> Self {
        Self::from_counts(self.tp, self.fp, self.fn_, self.tn + n)
    }
}

pub fn pair_metrics(predictions: &[bool], labels: &[bool]) -> Result<PairMetrics> {
    if predictions.len() != labels.len() {
        return Err(Error::MisalignedInputs(predictions.len(), labels.len()));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (&p, &l) in predictions.iter().zip(labels) {
        match (p, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(PairMetrics::from_counts(tp, fp, fn_, tn))
}

/// Estimated cluster that best overlaps `g`, with the overlap size.
/// `None` when no estimated cluster contains a profile of `g`.
pub fn best_overlap_map<S: AsRef<str>>(
    g: &[S],
    estimated: &Clustering,
    membership: &HashMap<&str, usize>,
) -> Option<(usize, usize)> {
    let mut overlap: HashMap<usize, usize> = HashMap::new();
    for id in g {
        if let Some(&c) = membership.get(id.as_ref()) {
            *overlap.entry(c).or_default() += 1;
        }
    }
    let clusters = estimated.clusters();
    overlap
        .into_iter()
        .min_by(|&(ca, na), &(cb, nb)| {
            nb.cmp(&na)
                .then_with(|| clusters[ca].len().cmp(&clusters[cb].len()))
                .then_with(|| clusters[ca].id().cmp(clusters[cb].id()))
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterScore {
    pub truth_id: String,
    pub mapped_to: Option<String>,
    pub overlap: usize,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterMetrics {
    pub per_cluster: Vec<ClusterScore>,
    pub mean_precision: f64,
    pub mean_recall: f64,
    pub f1: f64,
}

/// Scores `estimated` against `truth`; every truth profile must be clustered.
pub fn cluster_metrics(truth: &GroundTruth, estimated: &Clustering) -> Result<ClusterMetrics> {
    let membership = estimated.membership();
    if let Some(missing) = truth
        .clusters()
        .iter()
        .flat_map(|g| &g.members)
        .find(|id| !membership.contains_key(id.as_str()))
    {
        return Err(Error::UnknownProfile(missing.clone()));
    }
    let per_cluster: Vec<ClusterScore> = truth
        .clusters()
        .iter()
        .map(|g| match best_overlap_map(&g.members, estimated, &membership) {
            Some((c, overlap)) => {
                let f = &estimated.clusters()[c];
                ClusterScore {
                    truth_id: g.id.clone(),
                    mapped_to: Some(f.id().to_string()),
                    overlap,
                    precision: overlap as f64 / f.len() as f64,
                    recall: overlap as f64 / g.members.len() as f64,
                }
            }
            None => ClusterScore {
                truth_id: g.id.clone(),
                mapped_to: None,
                overlap: 0,
                precision: 0.0,
                recall: 0.0,
            },
        })
        .collect();
    let n = per_cluster.len().max(1) as f64;
    let mean_precision = per_cluster.iter().map(|s| s.precision).sum::<f64>() / n;
    let mean_recall = per_cluster.iter().map(|s| s.recall).sum::<f64>() / n;
    Ok(ClusterMetrics {
        f1: harmonic(mean_precision, mean_recall),
        per_cluster,
        mean_precision,
        mean_recall,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    pub model: String,
    pub dataset: String,
    pub hyperparameters: Option<serde_json::Value>,
    #[serde(flatten)]
    pub metrics: PairMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRow {
    pub clustering: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub truth_clusters: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceRow {
    pub clustering: String,
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramRow {
    pub clustering: String,
    pub sizes: Vec<SizeBucketCount>,
}

/// Pairwise, cluster, confidence and size tables of one evaluation run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairwise: Vec<PairwiseRow>,
    pub cluster: Vec<ClusterRow>,
    pub confidence: Vec<ConfidenceRow>,
    pub cluster_sizes: Vec<HistogramRow>,
}

impl EvalReport {
    pub fn add_clustering(&mut self, name: &str, metrics: &ClusterMetrics, stats: &ClusterStats) {
        self.cluster.push(ClusterRow {
            clustering: name.to_string(),
            precision: metrics.mean_precision,
            recall: metrics.mean_recall,
            f1: metrics.f1,
            truth_clusters: metrics.per_cluster.len(),
        });
        self.confidence.push(ConfidenceRow {
            clustering: name.to_string(),
            mean: stats.confidence.as_ref().map(|c| c.mean),
            median: stats.confidence.as_ref().map(|c| c.median),
            min: stats.confidence.as_ref().map(|c| c.min),
        });
        self.cluster_sizes.push(HistogramRow {
            clustering: name.to_string(),
            sizes: stats.sizes.clone(),
        });
    }
}
