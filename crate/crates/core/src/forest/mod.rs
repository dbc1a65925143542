//! Random forest classifier over CART trees.
//!
//! Each tree is grown on a bootstrap sample with a fresh random subset of
//! features considered at every split. A tree votes the majority class of
//! the leaf a row lands in; the forest's probability for a class is the
//! fraction of trees voting for it.

mod cv;
mod metrics;
pub mod tree;

pub use cv::{cross_validate, stratified_folds, CvReport};
pub use metrics::{confusion_matrix, macro_f1, per_class_f1, row_normalize};
pub use tree::{Node, Tree};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::stream_rng;
use crate::Matrix;

/// Version of the serialized forest document.
pub const FOREST_FORMAT_VERSION: u32 = 1;

const TREE_STREAM: u64 = 0x7472_6565;

#[derive(Debug, Error, PartialEq)]
pub enum ForestError {
    #[error("expected {expected} features, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("{rows} rows but {labels} labels")]
    LabelCount { rows: usize, labels: usize },
    #[error("feature matrix contains NaN or infinite values")]
    NonFinite,
    #[error("training labels contain a single class; need at least two")]
    SingleClass,
    #[error("label {label} is outside the {n_classes} known classes")]
    UnknownLabel { label: usize, n_classes: usize },
    #[error("invalid forest parameters: {0}")]
    InvalidParams(String),
    #[error("cross validation needs at least 2 folds, got {0}")]
    TooFewFolds(usize),
    #[error("unsupported forest format version {0}")]
    UnsupportedVersion(u32),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    /// `None` grows until purity or `min_leaf`.
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    /// `None` means `ceil(sqrt(d))`.
    #[serde(default)]
    pub n_features_per_split: Option<usize>,
    /// Draw an equal number of rows from every class for each bootstrap.
    #[serde(default)]
    pub balanced_bootstrap: bool,
    pub seed: u64,
}

fn default_trees() -> usize {
    500
}

fn default_min_leaf() -> usize {
    1
}

impl ForestParams {
    pub fn new(seed: u64) -> Self {
        Self {
            n_trees: default_trees(),
            max_depth: None,
            min_leaf: default_min_leaf(),
            n_features_per_split: None,
            balanced_bootstrap: false,
            seed,
        }
    }

    pub fn resolved_mtry(&self, n_features: usize) -> usize {
        self.n_features_per_split
            .unwrap_or_else(|| (n_features as f64).sqrt().ceil() as usize)
            .clamp(1, n_features.max(1))
    }

    fn validate(&self, n_features: usize) -> Result<(), ForestError> {
        let bad = |m: &str| Err(ForestError::InvalidParams(m.to_string()));
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive");
        }
        if self.max_depth == Some(0) {
            return bad("max_depth must be positive");
        }
        if let Some(m) = self.n_features_per_split {
            if m == 0 || m > n_features {
                return bad("n_features_per_split must be within 1..=n_features");
            }
        }
        if n_features == 0 {
            return bad("no features");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub format_version: u32,
    pub params: ForestParams,
    pub n_features: usize,
    pub n_features_per_split: usize,
    pub feature_names: Vec<String>,
    pub classes: Vec<String>,
    /// Rows of the training set; node covers are counted over it.
    pub background_size: usize,
    pub trees: Vec<Tree>,
}

fn validate_xy(x: &Matrix, y: &[usize], n_classes: usize) -> Result<(), ForestError> {
    if x.rows() != y.len() {
        return Err(ForestError::LabelCount {
            rows: x.rows(),
            labels: y.len(),
        });
    }
    if x.has_non_finite() {
        return Err(ForestError::NonFinite);
    }
    if let Some(&label) = y.iter().find(|&&l| l >= n_classes) {
        return Err(ForestError::UnknownLabel { label, n_classes });
    }
    Ok(())
}

/// Row indices of the bootstrap sample for one tree. The returned RNG is
/// the tree's stream positioned after the draws.
pub fn bootstrap_sample(
    params: &ForestParams,
    y: &[usize],
    n_classes: usize,
    tree_index: usize,
) -> (Vec<usize>, rand_chacha::ChaCha8Rng) {
    let mut rng = stream_rng(params.seed, &[TREE_STREAM, tree_index as u64]);
    let n = y.len();
    let sample = if params.balanced_bootstrap {
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
        for (i, &c) in y.iter().enumerate() {
            by_class[c].push(i);
        }
        let present: Vec<&Vec<usize>> = by_class.iter().filter(|v| !v.is_empty()).collect();
        let per_class = n.div_ceil(present.len());
        let mut s = Vec::with_capacity(per_class * present.len());
        for members in present {
            for _ in 0..per_class {
                s.push(members[rng.random_range(0..members.len())]);
            }
        }
        s
    } else {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    };
    (sample, rng)
}

/// Trains a forest. `y[i]` indexes into `classes`.
pub fn train_forest(
    x: &Matrix,
    y: &[usize],
    classes: &[String],
    feature_names: &[String],
    params: &ForestParams,
) -> Result<Forest, ForestError> {
    validate_xy(x, y, classes.len())?;
    params.validate(x.cols())?;
    if feature_names.len() != x.cols() {
        return Err(ForestError::DimensionMismatch {
            expected: x.cols(),
            actual: feature_names.len(),
        });
    }
    if y.iter().all(|&c| c == y[0]) {
        return Err(ForestError::SingleClass);
    }
    let mtry = params.resolved_mtry(x.cols());
    let mut feature_order: Vec<usize> = (0..x.cols()).collect();
    feature_order.sort_by(|&a, &b| feature_names[a].cmp(&feature_names[b]).then(a.cmp(&b)));
    let grower = tree::Grower {
        x,
        y,
        n_classes: classes.len(),
        max_depth: params.max_depth,
        min_leaf: params.min_leaf,
        mtry,
        feature_order,
    };
    let trees: Vec<Tree> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let (sample, mut rng) = bootstrap_sample(params, y, classes.len(), t);
            grower.grow(sample, &mut rng)
        })
        .collect();
    Ok(Forest {
        format_version: FOREST_FORMAT_VERSION,
        params: params.clone(),
        n_features: x.cols(),
        n_features_per_split: mtry,
        feature_names: feature_names.to_vec(),
        classes: classes.to_vec(),
        background_size: x.rows(),
        trees,
    })
}

impl Forest {
    pub fn n_classes(&self) -> usize {
        self.classes.len()
    }

    fn check_width(&self, width: usize) -> Result<(), ForestError> {
        if width != self.n_features {
            return Err(ForestError::DimensionMismatch {
                expected: self.n_features,
                actual: width,
            });
        }
        Ok(())
    }

    /// Integer vote counts per class.
    pub fn votes(&self, x: &[f64]) -> Result<Vec<u32>, ForestError> {
        self.check_width(x.len())?;
        let mut votes = vec![0u32; self.n_classes()];
        for t in &self.trees {
            votes[t.vote(x)] += 1;
        }
        Ok(votes)
    }

    /// Fraction of trees voting for each class.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, ForestError> {
        let n = self.trees.len() as f64;
        Ok(self.votes(x)?.into_iter().map(|v| f64::from(v) / n).collect())
    }

    pub fn predict_proba_matrix(&self, x: &Matrix) -> Result<Matrix, ForestError> {
        self.check_width(x.cols())?;
        let rows: Vec<Vec<f64>> = (0..x.rows())
            .into_par_iter()
            .map(|i| self.predict_proba(x.row(i)).expect("width checked"))
            .collect();
        Ok(Matrix::from_rows(&rows))
    }

    /// Class with the most votes, lowest index on ties.
    pub fn predict(&self, x: &[f64]) -> Result<usize, ForestError> {
        Ok(tree::argmax_counts(&self.votes(x)?))
    }

    pub fn predict_matrix(&self, x: &Matrix) -> Result<Vec<usize>, ForestError> {
        self.check_width(x.cols())?;
        Ok((0..x.rows())
            .into_par_iter()
            .map(|i| self.predict(x.row(i)).expect("width checked"))
            .collect())
    }

    /// Whether any tree splits on feature `f`.
    pub fn uses_feature(&self, f: usize) -> bool {
        self.trees.iter().any(|t| t.uses_feature(f))
    }

    /// Rewrites feature indices so the forest reads columns reordered by
    /// `perm`, where new column `j` holds old column `perm[j]`.
    pub fn permute_features(&self, perm: &[usize]) -> Forest {
        let mut inverse = vec![0; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inverse[old] = new;
        }
        let mut out = self.clone();
        for t in &mut out.trees {
            for n in &mut t.nodes {
                if let Node::Split { feature, .. } = n {
                    *feature = inverse[*feature];
                }
            }
        }
        out.feature_names = perm.iter().map(|&o| self.feature_names[o].clone()).collect();
        out
    }

    pub fn to_json(&self) -> serde_json::Result<String> {
        serde_json::to_string(self)
    }

    pub fn from_json(s: &str) -> Result<Forest, Box<dyn std::error::Error + Send + Sync>> {
        let f: Forest = serde_json::from_str(s)?;
        if f.format_version != FOREST_FORMAT_VERSION {
            return Err(Box::new(ForestError::UnsupportedVersion(f.format_version)));
        }
        Ok(f)
    }
}
