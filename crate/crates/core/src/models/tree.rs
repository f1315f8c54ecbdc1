//! CART classification tree on Gini impurity.
//!
//! Growth is best-first: the leaf whose best split yields the largest
//! weighted impurity decrease is split next, until `max_leaf_nodes` leaves
//! exist or no split improves impurity. The grown tree is then pruned by
//! minimal cost-complexity at `ccp_alpha`. Rows go left when
//! `x[feature] <= threshold`; thresholds are midpoints between adjacent
//! distinct values. Equal decreases prefer the lower feature index, then the
//! smaller threshold.

use serde::{Deserialize, Serialize};

use crate::encoder::NUM_FIELDS;
use crate::error::{Error, Result};

use super::Row;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeParams {
    pub max_leaf_nodes: usize,
    pub ccp_alpha: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_leaf_nodes: 6,
            ccp_alpha: 1e-5,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_leaf_nodes < 2 {
            return Err(Error::InvalidConfig(format!(
                "max_leaf_nodes must be at least 2, got {}",
                self.max_leaf_nodes
            )));
        }
        if !(self.ccp_alpha >= 0.0 && self.ccp_alpha.is_finite()) {
            return Err(Error::InvalidConfig(format!("ccp_alpha must be >= 0, got {}", self.ccp_alpha)));
        }
        Ok(())
    }
}

/// Node of a flattened tree; children are indices into the node list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        probability: f64,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeModel {
    pub params: TreeParams,
    pub training_digest: Option<String>,
    nodes: Option<Vec<TreeNode>>,
}

#[derive(Debug, Clone)]
struct Split {
    gain: f64,
    feature: usize,
    threshold: f64,
}

#[derive(Debug)]
struct GrowNode {
    rows: Vec<u32>,
    positives: usize,
    split: Option<Split>,
    children: Option<(usize, usize)>,
    feature: usize,
    threshold: f64,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

/// Best split of `rows`, with gain weighted by the node's share of `total`.
fn best_split(x: &[Row], y: &[bool], rows: &[u32], positives: usize, total: usize) -> Option<Split> {
    let n = rows.len();
    if n < 2 || positives == 0 || positives == n {
        return None;
    }
    let parent = gini(positives, n) * n as f64;
    let mut best: Option<Split> = None;
    let mut sorted: Vec<(f64, bool)> = Vec::with_capacity(n);
    for feature in 0..NUM_FIELDS {
        sorted.clear();
        sorted.extend(rows.iter().map(|&r| (x[r as usize][feature], y[r as usize])));
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left_pos = 0;
        for i in 0..n - 1 {
            left_pos += usize::from(sorted[i].1);
            if sorted[i].0 == sorted[i + 1].0 {
                continue;
            }
            let left_n = i + 1;
            let right_n = n - left_n;
            let children =
                gini(left_pos, left_n) * left_n as f64 + gini(positives - left_pos, right_n) * right_n as f64;
            let gain = (parent - children) / total as f64;
            if gain <= 0.0 {
                continue;
            }
            if best.as_ref().is_none_or(|b| gain > b.gain) {
                best = Some(Split {
                    gain,
                    feature,
                    threshold: sorted[i].0 + (sorted[i + 1].0 - sorted[i].0) / 2.0,
                });
            }
        }
    }
    best
}

impl TreeModel {
    pub fn new(params: TreeParams) -> Self {
        Self {
            params,
            training_digest: None,
            nodes: None,
        }
    }

    pub(crate) fn from_parts(params: TreeParams, nodes: Vec<TreeNode>, training_digest: Option<String>) -> Result<Self> {
        validate_nodes(&nodes)?;
        Ok(Self {
            params,
            training_digest,
            nodes: Some(nodes),
        })
    }

    pub fn nodes(&self) -> Result<&[TreeNode]> {
        self.nodes.as_deref().ok_or(Error::Untrained)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes
            .iter()
            .flatten()
            .filter(|n| matches!(n, TreeNode::Leaf { .. }))
            .count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], i: usize) -> usize {
            match nodes[i] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        self.nodes.as_deref().map_or(0, |n| walk(n, 0))
    }

    pub fn fit(&mut self, x: &[Row], y: &[bool]) -> Result<()> {
        self.params.validate()?;
        if x.len() != y.len() {
            return Err(Error::MisalignedInputs(x.len(), y.len()));
        }
        if x.is_empty() {
            return Err(Error::Degenerate("empty training data".into()));
        }
        let total = x.len();
        let root_rows: Vec<u32> = (0..total as u32).collect();
        let root_pos = y.iter().filter(|&&v| v).count();
        let mut grow = vec![GrowNode {
            split: best_split(x, y, &root_rows, root_pos, total),
            rows: root_rows,
            positives: root_pos,
            children: None,
            feature: 0,
            threshold: 0.0,
        }];
        let mut leaves = 1;
        while leaves < self.params.max_leaf_nodes {
            // earliest-created leaf wins equal gains
            let mut pick: Option<usize> = None;
            for (i, node) in grow.iter().enumerate() {
                if node.children.is_some() {
                    continue;
                }
                if let Some(s) = &node.split {
                    if pick.is_none_or(|p| s.gain > grow[p].split.as_ref().unwrap().gain) {
                        pick = Some(i);
                    }
                }
            }
            let Some(i) = pick else { break };
            let split = grow[i].split.take().unwrap();
            let rows = std::mem::take(&mut grow[i].rows);
            let (left, right): (Vec<u32>, Vec<u32>) =
                rows.iter().partition(|&&r| x[r as usize][split.feature] <= split.threshold);
            let mut child = |rows: Vec<u32>| {
                let positives = rows.iter().filter(|&&r| y[r as usize]).count();
                grow.push(GrowNode {
                    split: best_split(x, y, &rows, positives, total),
                    rows,
                    positives,
                    children: None,
                    feature: 0,
                    threshold: 0.0,
                });
                grow.len() - 1
            };
            let l = child(left);
            let r = child(right);
            grow[i].children = Some((l, r));
            grow[i].feature = split.feature;
            grow[i].threshold = split.threshold;
            grow[i].rows = rows;
            leaves += 1;
        }
        prune(&mut grow, self.params.ccp_alpha, total);
        self.nodes = Some(flatten(&grow));
        Ok(())
    }

    pub fn predict_proba(&self, row: &Row) -> Result<f64> {
        let nodes = self.nodes()?;
        let mut i = 0;
        loop {
            match nodes[i] {
                TreeNode::Leaf { probability } => return Ok(probability),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if row[feature] <= threshold { left } else { right },
            }
        }
    }
}

/// Weighted impurity `n_t / N * gini_t` of a node.
fn node_risk(node: &GrowNode, total: usize) -> f64 {
    gini(node.positives, node.rows.len()) * node.rows.len() as f64 / total as f64
}

fn subtree(grow: &[GrowNode], i: usize, total: usize) -> (f64, usize) {
    match grow[i].children {
        None => (node_risk(&grow[i], total), 1),
        Some((l, r)) => {
            let (rl, nl) = subtree(grow, l, total);
            let (rr, nr) = subtree(grow, r, total);
            (rl + rr, nl + nr)
        }
    }
}

/// Repeatedly collapses the weakest link while its effective alpha is at
/// most `alpha`.
fn prune(grow: &mut [GrowNode], alpha: f64, total: usize) {
    loop {
        let mut weakest: Option<(f64, usize)> = None;
        for i in 0..grow.len() {
            if grow[i].children.is_none() || !reachable(grow, i) {
                continue;
            }
            let (risk, leaves) = subtree(grow, i, total);
            let effective = (node_risk(&grow[i], total) - risk) / (leaves - 1) as f64;
            if weakest.is_none_or(|(a, _)| effective < a) {
                weakest = Some((effective, i));
            }
        }
        match weakest {
            Some((a, i)) if a <= alpha => grow[i].children = None,
            _ => return,
        }
    }
}

fn reachable(grow: &[GrowNode], target: usize) -> bool {
    let mut stack = vec![0];
    while let Some(i) = stack.pop() {
        if i == target {
            return true;
        }
        if let Some((l, r)) = grow[i].children {
            stack.push(l);
            stack.push(r);
        }
    }
    false
}

fn flatten(grow: &[GrowNode]) -> Vec<TreeNode> {
    fn emit(grow: &[GrowNode], i: usize, out: &mut Vec<TreeNode>) -> usize {
        let slot = out.len();
        out.push(TreeNode::Leaf { probability: 0.0 });
        out[slot] = match grow[i].children {
            None => TreeNode::Leaf {
                probability: grow[i].positives as f64 / grow[i].rows.len() as f64,
            },
            Some((l, r)) => {
                let left = emit(grow, l, out);
                let right = emit(grow, r, out);
                TreeNode::Split {
                    feature: grow[i].feature,
                    threshold: grow[i].threshold,
                    left,
                    right,
                }
            }
        };
        slot
    }
    let mut out = Vec::new();
    emit(grow, 0, &mut out);
    out
}

fn validate_nodes(nodes: &[TreeNode]) -> Result<()> {
    if nodes.is_empty() {
        return Err(Error::Untrained);
    }
    let mut seen = vec![false; nodes.len()];
    let mut stack = vec![0];
    while let Some(i) = stack.pop() {
        if i >= nodes.len() || seen[i] {
            return Err(Error::InvalidConfig("tree nodes do not form a tree".into()));
        }
        seen[i] = true;
        match nodes[i] {
            TreeNode::Leaf { probability } if !(0.0..=1.0).contains(&probability) => {
                return Err(Error::InvalidConfig(format!("leaf probability {probability}")));
            }
            TreeNode::Split { feature, .. } if feature >= NUM_FIELDS => {
                return Err(Error::InvalidConfig(format!("split feature {feature}")));
            }
            TreeNode::Split { left, right, .. } => {
                stack.push(left);
                stack.push(right);
            }
            TreeNode::Leaf { .. } => {}
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::InvalidConfig("unreachable tree nodes".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn row(v: f64) -> Row {
        [v, 0.5, 0.5, 0.5, 0.5]
    }

    #[test]
    fn pure_input_is_single_leaf() {
        let x: Vec<Row> = (0..10).map(|i| row(f64::from(i) / 10.0)).collect();
        let mut t = TreeModel::new(TreeParams::default());
        t.fit(&x, &[true; 10]).unwrap();
        assert_eq!(t.nodes().unwrap(), [TreeNode::Leaf { probability: 1.0 }]);
    }

    #[test]
    fn separable_feature_gives_one_split() {
        let values = [0.1, 0.3, 0.5, 0.7, 0.8, 0.85, 0.9, 1.0];
        let x: Vec<Row> = values.iter().map(|&v| row(v)).collect();
        let y: Vec<bool> = values.iter().map(|&v| v >= 0.8).collect();
        let mut t = TreeModel::new(TreeParams::default());
        t.fit(&x, &y).unwrap();
        assert_eq!(t.depth(), 1);
        match t.nodes().unwrap()[0] {
            TreeNode::Split { feature, threshold, .. } => {
                assert_eq!(feature, 0);
                assert!((threshold - 0.75).abs() < 1e-12);
            }
            _ => panic!("expected a split"),
        }
        for (r, &l) in x.iter().zip(&y) {
            assert_eq!(t.predict_proba(r).unwrap() >= 0.5, l);
        }
    }

    /// Exhaustive oracle for the root split on small random sets.
    #[test]
    fn root_split_matches_exhaustive_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.random_range(4..30);
            let x: Vec<Row> = (0..n)
                .map(|_| std::array::from_fn(|_| f64::from(rng.random_range(0..8u8)) / 8.0))
                .collect();
            let y: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
            let pos = y.iter().filter(|&&v| v).count();
            if pos == 0 || pos == n {
                continue;
            }
            let mut best = (f64::INFINITY, 0, 0.0);
            for f in 0..NUM_FIELDS {
                for k in 0..8 {
                    let thr = (f64::from(k) + 0.5) / 8.0;
                    let (mut ln, mut lp, mut rn, mut rp) = (0, 0, 0, 0);
                    for (r, &l) in x.iter().zip(&y) {
                        if r[f] <= thr {
                            ln += 1;
                            lp += usize::from(l);
                        } else {
                            rn += 1;
                            rp += usize::from(l);
                        }
                    }
                    if ln == 0 || rn == 0 {
                        continue;
                    }
                    let imp = gini(lp, ln) * ln as f64 + gini(rp, rn) * rn as f64;
                    if imp < best.0 - 1e-12 {
                        best = (imp, f, thr);
                    }
                }
            }
            let rows: Vec<u32> = (0..n as u32).collect();
            let split = best_split(&x, &y, &rows, pos, n);
            let parent = gini(pos, n) * n as f64;
            if parent - best.0 <= 1e-12 {
                assert!(split.is_none());
                continue;
            }
            let s = split.unwrap();
            assert!((s.gain * n as f64 - (parent - best.0)).abs() < 1e-9);
            assert_eq!(s.feature, best.1);
            // midpoints of observed values land inside the oracle's gap
            let mut lo = -1.0f64;
            let mut hi = 2.0f64;
            for r in &x {
                let v = r[s.feature];
                if v <= best.2 {
                    lo = lo.max(v);
                } else {
                    hi = hi.min(v);
                }
            }
            assert!(s.threshold > lo && s.threshold < hi);
        }
    }

    #[test]
    fn leaf_bound_and_consistent_paths() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for max_leaf_nodes in [2, 5, 6] {
            let x: Vec<Row> = (0..400).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
            let y: Vec<bool> = x.iter().map(|r| r[0] + r[1] * 0.5 > 0.8 || rng.random_bool(0.05)).collect();
            let mut t = TreeModel::new(TreeParams {
                max_leaf_nodes,
                ccp_alpha: 0.0,
            });
            t.fit(&x, &y).unwrap();
            assert!(t.leaf_count() <= max_leaf_nodes);
            assert_eq!(t.leaf_count(), max_leaf_nodes);
            check_paths(t.nodes().unwrap(), 0, [f64::NEG_INFINITY; NUM_FIELDS], [f64::INFINITY; NUM_FIELDS]);
        }
    }

    fn check_paths(nodes: &[TreeNode], i: usize, lo: Row, hi: Row) {
        if let TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } = nodes[i]
        {
            assert!(threshold > lo[feature] && threshold < hi[feature]);
            let mut h = hi;
            h[feature] = threshold;
            check_paths(nodes, left, lo, h);
            let mut l = lo;
            l[feature] = threshold;
            check_paths(nodes, right, l, hi);
        }
    }

    #[test]
    fn pruning_removes_weak_splits() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Row> = (0..500).map(|_| std::array::from_fn(|_| rng.random::<f64>())).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] > 0.5).collect();
        let mut noisy = y.clone();
        noisy[7] = !noisy[7];
        noisy[100] = !noisy[100];
        let fit = |alpha: f64| {
            let mut t = TreeModel::new(TreeParams {
                max_leaf_nodes: 6,
                ccp_alpha: alpha,
            });
            t.fit(&x, &noisy).unwrap();
            t.leaf_count()
        };
        assert!(fit(0.0) > 2);
        assert_eq!(fit(0.01), 2);
        assert_eq!(fit(1.0), 1);
    }

    #[test]
    fn rejects_malformed_node_lists() {
        let cyclic = vec![TreeNode::Split {
            feature: 0,
            threshold: 0.5,
            left: 0,
            right: 0,
        }];
        assert!(TreeModel::from_parts(TreeParams::default(), cyclic, None).is_err());
        assert!(TreeModel::from_parts(TreeParams::default(), vec![], None).is_err());
    }
}
