//! Ground-truth partitions of profiles into latent persons.

use std::collections::{BTreeMap, HashMap};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TruthCluster {
    pub id: String,
    /// Sorted member profile IDs.
    pub members: Vec<String>,
}

/// A partition of profile IDs, ordered by cluster id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    clusters: Vec<TruthCluster>,
}

impl GroundTruth {
    /// Builds a partition from `(cluster_id, profile_id)` rows.
    pub fn from_assignments<I, S, T>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        let mut seen: HashMap<String, ()> = HashMap::new();
        for (cluster, profile) in rows {
            let profile = profile.into();
            if seen.insert(profile.clone(), ()).is_some() {
                return Err(Error::DuplicateId(profile));
            }
            groups.entry(cluster.into()).or_default().push(profile);
        }
        let clusters = groups
            .into_iter()
            .map(|(id, mut members)| {
                members.sort();
                TruthCluster { id, members }
            })
            .collect();
        Ok(Self { clusters })
    }

    pub fn clusters(&self) -> &[TruthCluster] {
        &self.clusters
    }

    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn profile_count(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    /// Profile id to cluster index.
    pub fn membership(&self) -> HashMap<&str, usize> {
        self.clusters
            .iter()
            .enumerate()
            .flat_map(|(i, c)| c.members.iter().map(move |m| (m.as_str(), i)))
            .collect()
    }

    /// Number of within-cluster unordered pairs.
    pub fn positive_pairs(&self) -> u64 {
        self.clusters
            .iter()
            .map(|c| {
                let n = c.members.len() as u64;
                n * n.saturating_sub(1) / 2
            })
            .sum()
    }

    /// `(cluster_id, profile_id)` rows sorted by cluster then profile.
    pub fn rows(&self) -> impl Iterator<Item = (&str, &str)> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(move |m| (c.id.as_str(), m.as_str())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_sorted_partition() {
        let t = GroundTruth::from_assignments([("b", "b2"), ("a", "a1"), ("b", "b1")]).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!(t.clusters()[1].members, ["b1", "b2"]);
        assert_eq!(t.positive_pairs(), 1);
        assert_eq!(t.membership()["b2"], 1);
        let rows: Vec<_> = t.rows().collect();
        assert_eq!(rows, [("a", "a1"), ("b", "b1"), ("b", "b2")]);
    }

    #[test]
    fn rejects_profile_in_two_clusters() {
        let err = GroundTruth::from_assignments([("a", "x"), ("b", "x")]).unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "x"));
    }
}
