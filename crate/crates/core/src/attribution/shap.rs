use rayon::prelude::*;
use serde::Serialize;

use super::AttributionError;
use crate::forest::{Forest, ForestError, Node, Tree};
use crate::Matrix;

/// Shapley contributions for a batch of instances.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ShapTensor {
    pub n_instances: usize,
    pub n_features: usize,
    pub n_classes: usize,
    /// Row-major `[instance][feature][class]`.
    pub values: Vec<f64>,
    /// Expected predicted probability per class over the background rows.
    pub base_values: Vec<f64>,
}

impl ShapTensor {
    #[inline]
    pub fn get(&self, instance: usize, feature: usize, class: usize) -> f64 {
        self.values[(instance * self.n_features + feature) * self.n_classes + class]
    }

    /// `[feature][class]` block of one instance.
    pub fn instance(&self, i: usize) -> &[f64] {
        let w = self.n_features * self.n_classes;
        &self.values[i * w..(i + 1) * w]
    }

    /// `base + sum of contributions` for one instance and class.
    pub fn reconstruct(&self, instance: usize, class: usize) -> f64 {
        self.base_values[class] + (0..self.n_features).map(|f| self.get(instance, f, class)).sum::<f64>()
    }
}

#[derive(Clone, Copy, Debug, Default)]
struct PathElement {
    feature: isize,
    zero_fraction: f64,
    one_fraction: f64,
    pweight: f64,
}

fn extend_path(path: &mut [PathElement], unique_depth: usize, zero: f64, one: f64, feature: isize) {
    path[unique_depth] = PathElement {
        feature,
        zero_fraction: zero,
        one_fraction: one,
        pweight: if unique_depth == 0 { 1.0 } else { 0.0 },
    };
    let denom = (unique_depth + 1) as f64;
    for i in (0..unique_depth).rev() {
        path[i + 1].pweight += one * path[i].pweight * (i + 1) as f64 / denom;
        path[i].pweight = zero * path[i].pweight * (unique_depth - i) as f64 / denom;
    }
}

fn unwind_path(path: &mut [PathElement], unique_depth: usize, path_index: usize) {
    let one = path[path_index].one_fraction;
    let zero = path[path_index].zero_fraction;
    let denom = (unique_depth + 1) as f64;
    let mut next_one_portion = path[unique_depth].pweight;
    for i in (0..unique_depth).rev() {
        if one != 0.0 {
            let tmp = path[i].pweight;
            path[i].pweight = next_one_portion * denom / ((i + 1) as f64 * one);
            next_one_portion = tmp - path[i].pweight * zero * (unique_depth - i) as f64 / denom;
        } else {
            path[i].pweight = path[i].pweight * denom / (zero * (unique_depth - i) as f64);
        }
    }
    for i in path_index..unique_depth {
        path[i].feature = path[i + 1].feature;
        path[i].zero_fraction = path[i + 1].zero_fraction;
        path[i].one_fraction = path[i + 1].one_fraction;
    }
}

/// Total permutation weight of the path with element `path_index` removed.
fn unwound_path_sum(path: &[PathElement], unique_depth: usize, path_index: usize) -> f64 {
    let one = path[path_index].one_fraction;
    let zero = path[path_index].zero_fraction;
    let denom = (unique_depth + 1) as f64;
    let mut next_one_portion = path[unique_depth].pweight;
    let mut total = 0.0;
    for i in (0..unique_depth).rev() {
        if one != 0.0 {
            let tmp = next_one_portion * denom / ((i + 1) as f64 * one);
            total += tmp;
            next_one_portion = path[i].pweight - tmp * zero * (unique_depth - i) as f64 / denom;
        } else {
            total += path[i].pweight / zero / ((unique_depth - i) as f64 / denom);
        }
    }
    total
}

struct Walker<'a, F: Fn(usize) -> (usize, f64)> {
    tree: &'a Tree,
    x: &'a [f64],
    leaf_value: F,
    n_classes: usize,
    phi: &'a mut [f64],
}

impl<F: Fn(usize) -> (usize, f64)> Walker<'_, F> {
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        buf: &mut [PathElement],
        offset: usize,
        node: usize,
        mut unique_depth: usize,
        zero: f64,
        one: f64,
        feature: isize,
    ) {
        // Each level works on its own copy of the parent path, laid out after it.
        let (parent, rest) = buf.split_at_mut(offset + unique_depth + 1);
        let path = &mut rest[..unique_depth + 1];
        path[..unique_depth].copy_from_slice(&parent[offset..offset + unique_depth]);
        extend_path(path, unique_depth, zero, one, feature);
        let next_offset = offset + unique_depth + 1;
        match &self.tree.nodes[node] {
            Node::Leaf { .. } => {
                let (class, value) = (self.leaf_value)(node);
                for i in 1..=unique_depth {
                    let w = unwound_path_sum(path, unique_depth, i);
                    let el = path[i];
                    self.phi[el.feature as usize * self.n_classes + class] +=
                        w * (el.one_fraction - el.zero_fraction) * value;
                }
            }
            &Node::Split {
                feature: split,
                threshold,
                left,
                right,
                cover,
            } => {
                let (hot, cold) = if self.x[split] <= threshold {
                    (left, right)
                } else {
                    (right, left)
                };
                let hot_zero = self.tree.nodes[hot].cover() / cover;
                let cold_zero = self.tree.nodes[cold].cover() / cover;
                let (mut in_zero, mut in_one) = (1.0, 1.0);
                if let Some(k) = (0..=unique_depth).find(|&k| path[k].feature == split as isize) {
                    in_zero = path[k].zero_fraction;
                    in_one = path[k].one_fraction;
                    unwind_path(path, unique_depth, k);
                    unique_depth -= 1;
                }
                let f = split as isize;
                self.recurse(buf, next_offset, hot, unique_depth + 1, hot_zero * in_zero, in_one, f);
                self.recurse(buf, next_offset, cold, unique_depth + 1, cold_zero * in_zero, 0.0, f);
            }
        }
    }
}

/// Adds one tree's path-dependent Shapley values for `x` into `phi`
/// (`[feature][class]`). `leaf_value(node)` gives the class a leaf pays out to
/// and the amount. Node covers weight the unseen branches.
pub fn tree_shap_single<F>(tree: &Tree, x: &[f64], n_classes: usize, leaf_value: F, phi: &mut [f64])
where
    F: Fn(usize) -> (usize, f64),
{
    let depth = tree.depth();
    let mut buf = vec![PathElement::default(); (depth + 2) * (depth + 3) / 2 + 1];
    let mut w = Walker {
        tree,
        x,
        leaf_value,
        n_classes,
        phi,
    };
    w.recurse(&mut buf, 0, 0, 0, 1.0, 1.0, -1);
}

fn vote_of(tree: &Tree, node: usize) -> usize {
    match &tree.nodes[node] {
        Node::Leaf { vote, .. } => *vote,
        Node::Split { .. } => unreachable!("leaf expected"),
    }
}

/// Cover-weighted mean of one-hot leaf votes, i.e. the mean vote fraction
/// over the background rows.
fn base_values(forest: &Forest) -> Vec<f64> {
    let mut base = vec![0.0; forest.n_classes()];
    let n_trees = forest.trees.len() as f64;
    for t in &forest.trees {
        let root = t.nodes[0].cover();
        for n in &t.nodes {
            if let Node::Leaf { vote, cover, .. } = n {
                base[*vote] += cover / root / n_trees;
            }
        }
    }
    base
}

/// Exact Shapley values of the forest's vote-fraction output for every row of `x`.
pub fn tree_shap(forest: &Forest, x: &Matrix) -> Result<ShapTensor, AttributionError> {
    if x.cols() != forest.n_features {
        return Err(ForestError::DimensionMismatch {
            expected: forest.n_features,
            actual: x.cols(),
        }
        .into());
    }
    if forest.background_size == 0 || forest.trees.iter().any(|t| t.nodes[0].cover() <= 0.0) {
        return Err(AttributionError::EmptyBackground);
    }
    let (d, k) = (forest.n_features, forest.n_classes());
    let scale = 1.0 / forest.trees.len() as f64;
    let rows: Vec<Vec<f64>> = (0..x.rows())
        .into_par_iter()
        .map(|i| {
            let mut phi = vec![0.0; d * k];
            for t in &forest.trees {
                tree_shap_single(t, x.row(i), k, |node| (vote_of(t, node), scale), &mut phi);
            }
            phi
        })
        .collect();
    Ok(ShapTensor {
        n_instances: x.rows(),
        n_features: d,
        n_classes: k,
        values: rows.concat(),
        base_values: base_values(forest),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::{train_forest, ForestParams};

    fn split(feature: usize, threshold: f64, left: usize, right: usize, cover: f64) -> Node {
        Node::Split {
            feature,
            threshold,
            left,
            right,
            cover,
        }
    }

    fn leaf(vote: usize, cover: f64) -> Node {
        let mut counts = vec![0; 2];
        counts[vote] = 1;
        Node::Leaf { counts, vote, cover }
    }

    #[test]
    fn stump_credits_its_feature() {
        let tree = Tree {
            nodes: vec![split(0, 0.5, 1, 2, 10.0), leaf(0, 3.0), leaf(1, 7.0)],
        };
        let mut phi = vec![0.0; 3 * 2];
        tree_shap_single(&tree, &[0.9, 5.0, -1.0], 2, |n| (vote_of(&tree, n), 1.0), &mut phi);
        // f(x) = class 1; base is 0.3 for class 0 and 0.7 for class 1.
        assert!((phi[1] - 0.3).abs() < 1e-15);
        assert!((phi[0] + 0.3).abs() < 1e-15);
        assert!(phi[2..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn repeated_feature_on_a_path() {
        // x0 split twice; x1 once.
        let tree = Tree {
            nodes: vec![
                split(0, 0.5, 1, 4, 10.0),
                split(1, 0.5, 2, 3, 6.0),
                leaf(0, 2.0),
                leaf(1, 4.0),
                split(0, 0.8, 5, 6, 4.0),
                leaf(1, 1.0),
                leaf(0, 3.0),
            ],
        };
        for x in [[0.2, 0.1], [0.2, 0.9], [0.6, 0.0], [0.9, 0.9]] {
            let mut phi = vec![0.0; 2 * 2];
            tree_shap_single(&tree, &x, 2, |n| (vote_of(&tree, n), 1.0), &mut phi);
            let vote = tree.vote(&x);
            let base1 = (4.0 + 1.0) / 10.0;
            let f1 = if vote == 1 { 1.0 } else { 0.0 };
            assert!((base1 + phi[1] + phi[3] - f1).abs() < 1e-12);
        }
    }

    #[test]
    fn forest_local_accuracy_and_dummy() {
        let rows: Vec<[f64; 3]> = (0..80).map(|i| [(i % 10) as f64, (i / 10) as f64, 0.0]).collect();
        let y: Vec<usize> = (0..80).map(|i| usize::from((i % 10) + (i / 10) > 8)).collect();
        let x = Matrix::from_rows(&rows);
        let mut p = ForestParams::new(3);
        p.n_trees = 20;
        let names: Vec<String> = vec!["a".into(), "b".into(), "c".into()];
        let f = train_forest(&x, &y, &["n".into(), "p".into()], &names, &p).unwrap();
        let shap = tree_shap(&f, &x).unwrap();
        let proba = f.predict_proba_matrix(&x).unwrap();
        let mean1: f64 = (0..80).map(|i| proba[(i, 1)]).sum::<f64>() / 80.0;
        assert!((shap.base_values[1] - mean1).abs() < 1e-12);
        for i in 0..80 {
            for c in 0..2 {
                assert!((shap.reconstruct(i, c) - proba[(i, c)]).abs() < 1e-12);
                assert_eq!(shap.get(i, 2, c), 0.0);
            }
        }
    }
}
