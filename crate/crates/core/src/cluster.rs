//! CENTER and MERGE-CENTER clustering of the link graph.
//!
//! Both algorithms scan edges once in [`sort_edges`] order. CENTER turns the
//! smaller endpoint of an edge between two unassigned profiles into a new
//! center and lets later edges attach unassigned profiles to existing
//! centers. MERGE-CENTER runs the same assignment and additionally merges the
//! clusters of two assigned endpoints when at least one endpoint is a center
//! of its original CENTER cluster; the earliest-created center survives.
//! Every MERGE-CENTER cluster is therefore a union of CENTER clusters.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// An accepted link with `id_a < id_b` and weight in `(0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEdge {
    pub id_a: String,
    pub id_b: String,
    pub weight: f64,
}

impl LinkEdge {
    pub fn new(a: impl Into<String>, b: impl Into<String>, weight: f64) -> Result<Self> {
        let (a, b) = (a.into(), b.into());
        if a == b {
            return Err(Error::InvalidIds(format!("self-link on `{a}`")));
        }
        if !(weight > 0.0 && weight <= 1.0) {
            return Err(Error::InvalidConfig(format!("link weight {weight} outside (0, 1]")));
        }
        let (id_a, id_b) = if a < b { (a, b) } else { (b, a) };
        Ok(Self { id_a, id_b, weight })
    }
}

/// Descending weight, then ascending `(id_a, id_b)`.
pub fn edge_order(x: &LinkEdge, y: &LinkEdge) -> Ordering {
    y.weight
        .total_cmp(&x.weight)
        .then_with(|| x.id_a.cmp(&y.id_a))
        .then_with(|| x.id_b.cmp(&y.id_b))
}

pub fn sort_edges(edges: &mut [LinkEdge]) {
    edges.sort_by(edge_order);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub profile_id: String,
    /// Weight of the edge that attached this profile; `None` for singletons.
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub center: String,
    /// Sorted by profile id; includes the center.
    pub members: Vec<Member>,
}

impl Cluster {
    pub fn id(&self) -> &str {
        &self.center
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.members.iter().map(|m| m.profile_id.as_str())
    }
}

/// A partition of profiles into centered clusters, sorted by cluster id.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Clustering {
    clusters: Vec<Cluster>,
}

impl Clustering {
    /// Validates and sorts clusters; every profile must appear once.
    pub fn new(mut clusters: Vec<Cluster>) -> Result<Self> {
        let mut seen = HashSet::new();
        for c in &mut clusters {
            c.members.sort_by(|a, b| a.profile_id.cmp(&b.profile_id));
            if !c.members.iter().any(|m| m.profile_id == c.center) {
                return Err(Error::InvalidConfig(format!("center `{}` is not a member of its cluster", c.center)));
            }
            for m in &c.members {
                if !seen.insert(m.profile_id.clone()) {
                    return Err(Error::DuplicateId(m.profile_id.clone()));
                }
            }
        }
        clusters.sort_by(|a, b| a.center.cmp(&b.center));
        Ok(Self { clusters })
    }

    /// Clusters without confidences, centered on their smallest member.
    pub fn from_groups<I, G, S>(groups: I) -> Result<Self>
    where
        I: IntoIterator<Item = G>,
        G: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let clusters = groups
            .into_iter()
            .filter_map(|g| {
                let mut ids: Vec<String> = g.into_iter().map(Into::into).collect();
                ids.sort();
                let center = ids.first()?.clone();
                Some(Cluster {
                    center,
                    members: ids
                        .into_iter()
                        .map(|profile_id| Member {
                            profile_id,
                            confidence: None,
                        })
                        .collect(),
                })
            })
            .collect();
        Self::new(clusters)
    }

    pub fn singletons<S: Into<String>>(ids: impl IntoIterator<Item = S>) -> Result<Self> {
        Self::from_groups(ids.into_iter().map(|id| [id]))
    }

    pub fn clusters(&self) -> &[Cluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn profile_count(&self) -> usize {
        self.clusters.iter().map(Cluster::len).sum()
    }

    /// Profile id to cluster index.
    pub fn membership(&self) -> HashMap<&str, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.ids().map(move |id| (id, i)))
            .collect()
    }

    /// Member id sets, in cluster order.
    pub fn groups(&self) -> Vec<Vec<&str>> {
        self.clusters.iter().map(|c| c.ids().collect()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Algorithm {
    Center,
    MergeCenter,
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(Algorithm::Center),
            "merge-center" => Ok(Algorithm::MergeCenter),
            other => Err(Error::InvalidConfig(format!("unknown clustering algorithm `{other}`"))),
        }
    }
}

pub fn run(algorithm: Algorithm, profiles: &[String], edges: &[LinkEdge]) -> Result<Clustering> {
    match algorithm {
        Algorithm::Center => center_cluster(profiles, edges),
        Algorithm::MergeCenter => merge_center_cluster(profiles, edges),
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum State {
    Unassigned,
    Center(usize),
    Member(usize),
}

struct Scan<'a> {
    ids: Vec<&'a str>,
    state: Vec<State>,
    confidence: Vec<Option<f64>>,
    /// Center node of each sub-cluster, in creation order.
    centers: Vec<usize>,
}

/// Sorted edges as node-index pairs, after endpoint and duplicate checks.
fn indexed_edges<'a>(profiles: &'a [String], edges: &[LinkEdge]) -> Result<(Vec<&'a str>, Vec<(usize, usize, f64)>)> {
    let mut ids: Vec<&str> = profiles.iter().map(String::as_str).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0].to_string()));
    }
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut sorted: Vec<&LinkEdge> = edges.iter().collect();
    sorted.sort_by(|x, y| edge_order(x, y));
    let mut out = Vec::with_capacity(sorted.len());
    let mut seen = HashSet::with_capacity(sorted.len());
    for e in sorted {
        let a = *index
            .get(e.id_a.as_str())
            .ok_or_else(|| Error::UnknownEndpoint(e.id_a.clone()))?;
        let b = *index
            .get(e.id_b.as_str())
            .ok_or_else(|| Error::UnknownEndpoint(e.id_b.clone()))?;
        let (a, b) = if a < b { (a, b) } else { (b, a) };
        if a == b {
            return Err(Error::InvalidIds(format!("self-link on `{}`", e.id_a)));
        }
        if !seen.insert((a, b)) {
            return Err(Error::DuplicateId(format!("{},{}", e.id_a, e.id_b)));
        }
        out.push((a, b, e.weight));
    }
    Ok((ids, out))
}

impl<'a> Scan<'a> {
    fn new(ids: Vec<&'a str>) -> Self {
        let n = ids.len();
        Self {
            ids,
            state: vec![State::Unassigned; n],
            confidence: vec![None; n],
            centers: Vec::new(),
        }
    }

    /// CENTER step; returns true when the edge changed any assignment.
    /// Node indices follow id order, so `a` is the smaller endpoint.
    fn step(&mut self, a: usize, b: usize, w: f64) -> bool {
        match (self.state[a], self.state[b]) {
            (State::Unassigned, State::Unassigned) => {
                let c = self.centers.len();
                self.centers.push(a);
                self.state[a] = State::Center(c);
                self.state[b] = State::Member(c);
                self.confidence[a] = Some(w);
                self.confidence[b] = Some(w);
                true
            }
            (State::Center(c), State::Unassigned) => {
                self.state[b] = State::Member(c);
                self.confidence[b] = Some(w);
                true
            }
            (State::Unassigned, State::Center(c)) => {
                self.state[a] = State::Member(c);
                self.confidence[a] = Some(w);
                true
            }
            _ => false,
        }
    }

    fn sub_cluster(&self, node: usize) -> Option<usize> {
        match self.state[node] {
            State::Unassigned => None,
            State::Center(c) | State::Member(c) => Some(c),
        }
    }

    fn into_clustering(self, mut group_of: impl FnMut(usize) -> usize) -> Result<Clustering> {
        let mut groups: BTreeMap<usize, Vec<Member>> = BTreeMap::new();
        let mut singles = Vec::new();
        for (node, id) in self.ids.iter().enumerate() {
            let member = Member {
                profile_id: id.to_string(),
                confidence: self.confidence[node],
            };
            match self.sub_cluster(node) {
                Some(c) => groups.entry(group_of(c)).or_default().push(member),
                None => singles.push(member),
            }
        }
        let mut clusters: Vec<Cluster> = groups
            .into_iter()
            .map(|(root, members)| Cluster {
                center: self.ids[self.centers[root]].to_string(),
                members,
            })
            .collect();
        clusters.extend(singles.into_iter().map(|m| Cluster {
            center: m.profile_id.clone(),
            members: vec![m],
        }));
        Clustering::new(clusters)
    }
}

pub fn center_cluster(profiles: &[String], edges: &[LinkEdge]) -> Result<Clustering> {
    let (ids, edges) = indexed_edges(profiles, edges)?;
    let mut scan = Scan::new(ids);
    for (a, b, w) in edges {
        scan.step(a, b, w);
    }
    scan.into_clustering(|c| c)
}

pub fn merge_center_cluster(profiles: &[String], edges: &[LinkEdge]) -> Result<Clustering> {
    let (ids, edges) = indexed_edges(profiles, edges)?;
    let mut scan = Scan::new(ids);
    let mut uf = UnionFind::new(0);
    for (a, b, w) in edges {
        if scan.step(a, b, w) {
            if uf.len() < scan.centers.len() {
                uf.push();
            }
            continue;
        }
        let (Some(ca), Some(cb)) = (scan.sub_cluster(a), scan.sub_cluster(b)) else {
            continue;
        };
        let either_center = matches!(scan.state[a], State::Center(_)) || matches!(scan.state[b], State::Center(_));
        let (ra, rb) = (uf.find(ca), uf.find(cb));
        if ra == rb || !either_center {
            continue;
        }
        // roots are sub-cluster indices, so the smaller one is older
        let (keep, absorbed) = if ra < rb { (ra, rb) } else { (rb, ra) };
        uf.attach(absorbed, keep);
        scan.confidence[scan.centers[absorbed]] = Some(w);
    }
    scan.into_clustering(|c| uf.find(c))
}

/// Union-find over `0..n` with explicit parent choice.
#[derive(Debug, Clone)]
pub(crate) struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    pub(crate) fn new(n: usize) -> Self {
        Self {
            parent: (0..n).collect(),
        }
    }

    pub(crate) fn len(&self) -> usize {
        self.parent.len()
    }

    pub(crate) fn push(&mut self) -> usize {
        self.parent.push(self.parent.len());
        self.parent.len() - 1
    }

    pub(crate) fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Makes root `child` point at root `parent`.
    pub(crate) fn attach(&mut self, child: usize, parent: usize) {
        self.parent[child] = parent;
    }

    /// Joins the sets of `a` and `b`, keeping the smaller root.
    pub(crate) fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

/// Connected components of the link graph, for audits only.
pub fn transitive_closure(profiles: &[String], edges: &[LinkEdge]) -> Result<Clustering> {
    let (ids, edges) = indexed_edges(profiles, edges)?;
    let mut uf = UnionFind::new(ids.len());
    for (a, b, _) in edges {
        uf.union(a, b);
    }
    let mut groups: BTreeMap<usize, Vec<&str>> = BTreeMap::new();
    for (i, id) in ids.iter().enumerate() {
        groups.entry(uf.find(i)).or_default().push(id);
    }
    Clustering::from_groups(groups.into_values())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeBucketCount {
    pub size: String,
    pub count: usize,
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceSummary {
    pub count: usize,
    pub mean: f64,
    pub median: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub clusters: usize,
    pub profiles: usize,
    /// Buckets `1`..`5` and `>5`.
    pub sizes: Vec<SizeBucketCount>,
    /// Over non-center members; `None` when there are none.
    pub confidence: Option<ConfidenceSummary>,
}

pub const SIZE_BUCKETS: [&str; 6] = ["1", "2", "3", "4", "5", ">5"];

pub(crate) fn size_bucket(len: usize) -> usize {
    len.clamp(1, 6) - 1
}

pub fn size_histogram(sizes: impl IntoIterator<Item = usize>) -> Vec<SizeBucketCount> {
    let mut counts = [0usize; 6];
    for s in sizes {
        counts[size_bucket(s)] += 1;
    }
    let total: usize = counts.iter().sum();
    SIZE_BUCKETS
        .iter()
        .zip(counts)
        .map(|(label, count)| SizeBucketCount {
            size: label.to_string(),
            count,
            percent: if total == 0 {
                0.0
            } else {
                100.0 * count as f64 / total as f64
            },
        })
        .collect()
}

pub(crate) fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

pub fn cluster_stats(c: &Clustering) -> ClusterStats {
    let mut conf: Vec<f64> = c
        .clusters()
        .iter()
        .flat_map(|cl| {
            cl.members
                .iter()
                .filter(move |m| m.profile_id != cl.center)
                .filter_map(|m| m.confidence)
        })
        .collect();
    conf.sort_by(f64::total_cmp);
    let confidence = (!conf.is_empty()).then(|| ConfidenceSummary {
        count: conf.len(),
        mean: conf.iter().sum::<f64>() / conf.len() as f64,
        median: median_sorted(&conf),
        min: conf[0],
    });
    ClusterStats {
        clusters: c.len(),
        profiles: c.profile_count(),
        sizes: size_histogram(c.clusters().iter().map(Cluster::len)),
        confidence,
    }
}
