use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::Matrix;

/// A node of a classification tree. Children always have larger indices
/// than their parent; the root is node 0.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Training rows (full training set, not the bootstrap) reaching this node.
        cover: f64,
    },
    Leaf {
        /// Class counts of the bootstrap rows that reached the leaf.
        counts: Vec<u32>,
        /// Majority class, lowest index on ties.
        vote: usize,
        cover: f64,
    },
}

impl Node {
    pub fn cover(&self) -> f64 {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover,
        }
    }

    fn set_cover(&mut self, c: f64) {
        match self {
            Node::Split { cover, .. } | Node::Leaf { cover, .. } => *cover = c,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Index of the leaf that `x` falls into. Rows go left when
    /// `x[feature] <= threshold`.
    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { .. } => return i,
            }
        }
    }

    #[inline]
    pub fn vote(&self, x: &[f64]) -> usize {
        match &self.nodes[self.leaf_index(x)] {
            Node::Leaf { vote, .. } => *vote,
            Node::Split { .. } => unreachable!("leaf_index returns a leaf"),
        }
    }

    pub fn depth(&self) -> usize {
        fn go(t: &Tree, i: usize) -> usize {
            match &t.nodes[i] {
                Node::Split { left, right, .. } => 1 + go(t, *left).max(go(t, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        go(self, 0)
    }

    pub fn uses_feature(&self, f: usize) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n, Node::Split { feature, .. } if *feature == f))
    }

    /// Recomputes node covers by routing every row of `x` through the tree.
    pub fn set_covers(&mut self, x: &Matrix) {
        let mut covers = vec![0.0; self.nodes.len()];
        for r in 0..x.rows() {
            let row = x.row(r);
            let mut i = 0;
            loop {
                covers[i] += 1.0;
                match &self.nodes[i] {
                    Node::Split {
                        feature,
                        threshold,
                        left,
                        right,
                        ..
                    } => i = if row[*feature] <= *threshold { *left } else { *right },
                    Node::Leaf { .. } => break,
                }
            }
        }
        for (n, c) in self.nodes.iter_mut().zip(covers) {
            n.set_cover(c);
        }
    }
}

/// Best split of one node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitChoice {
    pub feature: usize,
    pub threshold: f64,
    /// Weighted Gini impurity times node size: `sum_side (n_s - sum_c n_sc^2 / n_s)`.
    pub score: f64,
}

/// Gini impurity of a node times its size, from integer class counts.
#[inline]
pub fn gini_score(n: u64, sum_sq: u64) -> f64 {
    if n == 0 {
        0.0
    } else {
        n as f64 - sum_sq as f64 / n as f64
    }
}

/// Threshold halfway between two consecutive distinct values, kept strictly
/// below the upper one.
#[inline]
pub fn midpoint(lo: f64, hi: f64) -> f64 {
    let mid = lo + (hi - lo) / 2.0;
    if mid < hi {
        mid
    } else {
        lo
    }
}

pub(crate) struct Grower<'a> {
    pub x: &'a Matrix,
    pub y: &'a [usize],
    pub n_classes: usize,
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    pub mtry: usize,
    /// Feature indices sorted by feature name. Candidate features are drawn
    /// and scanned in this order so that reordering columns (with their
    /// names) leaves the grown trees unchanged.
    pub feature_order: Vec<usize>,
}

impl Grower<'_> {
    pub fn grow<R: Rng>(&self, mut sample: Vec<usize>, rng: &mut R) -> Tree {
        let mut nodes = Vec::new();
        let mut buf = Vec::with_capacity(sample.len());
        self.build(&mut sample, 0, rng, &mut nodes, &mut buf);
        let mut tree = Tree { nodes };
        tree.set_covers(self.x);
        tree
    }

    fn leaf(&self, idx: &[usize]) -> Node {
        let mut counts = vec![0u32; self.n_classes];
        for &i in idx {
            counts[self.y[i]] += 1;
        }
        let vote = argmax_counts(&counts);
        Node::Leaf {
            counts,
            vote,
            cover: 0.0,
        }
    }

    fn build<R: Rng>(
        &self,
        idx: &mut [usize],
        depth: usize,
        rng: &mut R,
        nodes: &mut Vec<Node>,
        buf: &mut Vec<(f64, usize)>,
    ) -> usize {
        let me = nodes.len();
        let pure = idx.iter().all(|&i| self.y[i] == self.y[idx[0]]);
        let at_depth = self.max_depth.is_some_and(|d| depth >= d);
        if pure || at_depth || idx.len() < 2 * self.min_leaf {
            nodes.push(self.leaf(idx));
            return me;
        }
        let d = self.x.cols();
        let features: Vec<usize> = if self.mtry >= d {
            self.feature_order.clone()
        } else {
            let mut pos = rand::seq::index::sample(rng, d, self.mtry).into_vec();
            pos.sort_unstable();
            pos.into_iter().map(|p| self.feature_order[p]).collect()
        };
        let Some(split) = best_split(self.x, self.y, self.n_classes, idx, &features, self.min_leaf, buf) else {
            nodes.push(self.leaf(idx));
            return me;
        };
        // Partition in place: rows with x <= threshold first.
        let mut lo = 0;
        for k in 0..idx.len() {
            if self.x[(idx[k], split.feature)] <= split.threshold {
                idx.swap(lo, k);
                lo += 1;
            }
        }
        nodes.push(Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left: 0,
            right: 0,
            cover: 0.0,
        });
        let (l, r) = idx.split_at_mut(lo);
        let left = self.build(l, depth + 1, rng, nodes, buf);
        let right = self.build(r, depth + 1, rng, nodes, buf);
        if let Node::Split {
            left: nl, right: nr, ..
        } = &mut nodes[me]
        {
            *nl = left;
            *nr = right;
        }
        me
    }
}

pub(crate) fn argmax_counts(counts: &[u32]) -> usize {
    let mut best = 0;
    for (c, &n) in counts.iter().enumerate() {
        if n > counts[best] {
            best = c;
        }
    }
    best
}

/// Exhaustive search over midpoints of consecutive distinct values for the
/// split minimizing weighted Gini impurity. Both children must hold at least
/// `min_leaf` rows. Ties keep the first candidate in the order of `features`,
/// then ascending threshold.
pub fn best_split(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
    buf: &mut Vec<(f64, usize)>,
) -> Option<SplitChoice> {
    let n = idx.len();
    let mut total = vec![0u64; n_classes];
    for &i in idx {
        total[y[i]] += 1;
    }
    let total_sq: u64 = total.iter().map(|c| c * c).sum();
    let mut best: Option<SplitChoice> = None;
    let mut left = vec![0u64; n_classes];
    for &f in features {
        buf.clear();
        buf.extend(idx.iter().map(|&i| (x[(i, f)], y[i])));
        buf.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        if buf[0].0 == buf[n - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|c| *c = 0);
        let mut left_sq = 0u64;
        let mut right_sq = total_sq;
        for k in 0..n - 1 {
            let c = buf[k].1;
            left_sq += 2 * left[c] + 1;
            right_sq -= 2 * (total[c] - left[c]) - 1;
            left[c] += 1;
            let n_left = k + 1;
            if buf[k].0 == buf[k + 1].0 || n_left < min_leaf || n - n_left < min_leaf {
                continue;
            }
            let score = gini_score(n_left as u64, left_sq) + gini_score((n - n_left) as u64, right_sq);
            if best.is_none_or(|b| score < b.score) {
                best = Some(SplitChoice {
                    feature: f,
                    threshold: midpoint(buf[k].0, buf[k + 1].0),
                    score,
                });
            }
        }
    }
    best
}
