//! Axis-aligned binary trees and their greedy growth.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// A tree node. Internal nodes carry `feature`, `threshold` and child
/// indices; leaves carry only `leaf_value`. Samples with
/// `x[feature] <= threshold` go left.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub feature: Option<usize>,
    pub threshold: Option<f64>,
    pub left: Option<usize>,
    pub right: Option<usize>,
    pub leaf_value: Option<f64>,
}

impl Node {
    pub fn leaf(value: f64) -> Self {
        Self {
            feature: None,
            threshold: None,
            left: None,
            right: None,
            leaf_value: Some(value),
        }
    }

    pub fn split(feature: usize, threshold: f64, left: usize, right: usize) -> Self {
        Self {
            feature: Some(feature),
            threshold: Some(threshold),
            left: Some(left),
            right: Some(right),
            leaf_value: None,
        }
    }
}

/// Nodes in preorder; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf value reached by `x`.
    ///
    /// # Panics
    ///
    /// On a malformed tree; see [`Tree::validate`].
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match (node.feature, node.threshold, node.left, node.right) {
                (Some(f), Some(t), Some(l), Some(r)) => i = if x[f] <= t { l } else { r },
                _ => return node.leaf_value.expect("leaf node has a value"),
            }
        }
    }

    /// Structural check: every node is either a complete split pointing
    /// forward to existing nodes, or a leaf with a finite value.
    pub fn validate(&self, n_features: usize) -> Result<(), String> {
        if self.nodes.is_empty() {
            return Err("empty tree".into());
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match (node.feature, node.threshold, node.left, node.right, node.leaf_value) {
                (Some(f), Some(t), Some(l), Some(r), None) => {
                    if f >= n_features {
                        return Err(format!("node {i}: feature {f} out of range"));
                    }
                    if !t.is_finite() {
                        return Err(format!("node {i}: non-finite threshold"));
                    }
                    if l <= i || r <= i || l >= self.nodes.len() || r >= self.nodes.len() {
                        return Err(format!("node {i}: bad child index"));
                    }
                }
                (None, None, None, None, Some(v)) if v.is_finite() => {}
                _ => return Err(format!("node {i}: neither a split nor a leaf")),
            }
        }
        Ok(())
    }

    pub fn split_features(&self) -> impl Iterator<Item = usize> + '_ {
        self.nodes.iter().filter_map(|n| n.feature)
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match (t.nodes[i].left, t.nodes[i].right) {
                (Some(l), Some(r)) => 1 + go(t, l).max(go(t, r)),
                _ => 0,
            }
        }
        go(self, 0)
    }
}

/// Additive per-sample statistics a split criterion works on: gradient and
/// hessian for boosting, positive weight and weight for Gini.
pub(crate) type Stat = (f64, f64);

fn add(a: Stat, b: Stat) -> Stat {
    (a.0 + b.0, a.1 + b.1)
}

pub(crate) struct Grower<'a, R, G, L> {
    pub x: &'a [R],
    pub stats: &'a [Stat],
    pub max_depth: usize,
    /// Gain of splitting `parent` into `(left, right)`.
    pub gain: G,
    pub leaf: L,
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl<'a, R, G, L> Grower<'a, R, G, L>
where
    R: AsRef<[f64]> + Sync,
    G: Fn(Stat, Stat, Stat) -> f64 + Sync,
    L: Fn(Stat) -> f64 + Sync,
{
    /// Grow from `rows` (repeats allowed), asking `features` for the
    /// candidate set of every node in preorder.
    pub fn grow(&self, rows: Vec<usize>, features: &mut dyn FnMut() -> Vec<usize>) -> Tree {
        let mut nodes = Vec::new();
        self.node(rows, 0, features, &mut nodes);
        Tree { nodes }
    }

    fn node(
        &self,
        rows: Vec<usize>,
        depth: usize,
        features: &mut dyn FnMut() -> Vec<usize>,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let id = nodes.len();
        let total = rows.iter().fold((0.0, 0.0), |acc, &r| add(acc, self.stats[r]));
        nodes.push(Node::leaf((self.leaf)(total)));
        if depth >= self.max_depth || rows.len() < 2 {
            return id;
        }
        let Some(best) = self.best_split(&rows, total, &features()) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[r].as_ref()[best.feature] <= best.threshold);
        let l = self.node(left, depth + 1, features, nodes);
        let r = self.node(right, depth + 1, features, nodes);
        nodes[id] = Node::split(best.feature, best.threshold, l, r);
        id
    }

    fn best_split(&self, rows: &[usize], total: Stat, features: &[usize]) -> Option<Candidate> {
        let per_feature: Vec<Option<Candidate>> = features
            .par_iter()
            .map(|&f| self.best_for_feature(rows, total, f))
            .collect();
        // Features arrive ascending; strict improvement keeps the lowest
        // feature (and, within it, the lowest threshold) on ties.
        per_feature.into_iter().flatten().fold(None, |best, c| match best {
            Some(b) if b.gain >= c.gain => Some(b),
            _ => Some(c),
        })
    }

    fn best_for_feature(&self, rows: &[usize], total: Stat, f: usize) -> Option<Candidate> {
        let mut col: Vec<(f64, Stat)> = rows.iter().map(|&r| (self.x[r].as_ref()[f], self.stats[r])).collect();
        col.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = (0.0, 0.0);
        let mut best: Option<Candidate> = None;
        for i in 0..col.len() - 1 {
            left = add(left, col[i].1);
            let (a, b) = (col[i].0, col[i + 1].0);
            if a == b {
                continue;
            }
            let right = (total.0 - left.0, total.1 - left.1);
            let gain = (self.gain)(total, left, right);
            if gain > 0.0 && best.as_ref().is_none_or(|c| gain > c.gain) {
                let mid = a + (b - a) / 2.0;
                let threshold = if mid < b { mid } else { a };
                best = Some(Candidate { gain, feature: f, threshold });
            }
        }
        best
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> Tree {
        Tree {
            nodes: vec![Node::split(0, 0.5, 1, 2), Node::leaf(-1.0), Node::leaf(2.0)],
        }
    }

    #[test]
    fn evaluation_follows_threshold() {
        let t = stump();
        assert_eq!(t.evaluate(&[0.5]), -1.0);
        assert_eq!(t.evaluate(&[0.50001]), 2.0);
        assert_eq!(t.depth(), 1);
        assert!(t.validate(1).is_ok());
        assert!(t.validate(0).is_err());
    }

    #[test]
    fn malformed_trees_are_rejected() {
        let mut t = stump();
        t.nodes[0].left = Some(0);
        assert!(t.validate(1).is_err());
        let mut t = stump();
        t.nodes[1].feature = Some(0);
        assert!(t.validate(1).is_err());
        assert!(Tree { nodes: vec![] }.validate(1).is_err());
    }

    #[test]
    fn node_json_shape() {
        let json = serde_json::to_string(&stump()).unwrap();
        assert!(json.starts_with(r#"[{"feature":0,"threshold":0.5,"left":1,"right":2,"leaf_value":null}"#), "{json}");
    }

    #[test]
    fn grower_picks_lowest_feature_on_ties() {
        // Features 0 and 1 are identical; both separate perfectly.
        let x = vec![vec![0.0, 0.0], vec![1.0, 1.0], vec![2.0, 2.0], vec![3.0, 3.0]];
        let stats: Vec<Stat> = vec![(0.0, 1.0), (0.0, 1.0), (1.0, 1.0), (1.0, 1.0)];
        let grower = Grower {
            x: &x,
            stats: &stats,
            max_depth: 1,
            gain: |p: Stat, l: Stat, r: Stat| {
                let gini = |s: Stat| if s.1 > 0.0 { 2.0 * s.0 * (s.1 - s.0) / s.1 } else { 0.0 };
                gini(p) - gini(l) - gini(r)
            },
            leaf: |s: Stat| s.0 / s.1,
        };
        let tree = grower.grow((0..4).collect(), &mut || vec![0, 1]);
        assert_eq!(tree.nodes[0], Node::split(0, 1.5, 1, 2));
        assert_eq!(tree.nodes[1].leaf_value, Some(0.0));
        assert_eq!(tree.nodes[2].leaf_value, Some(1.0));
    }
}
