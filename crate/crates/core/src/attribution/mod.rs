//! Feature attribution for trained forests: permutation importance, exact
//! path-dependent TreeSHAP, per-cluster profiles and rank trajectories.

mod permutation;
mod profile;
mod shap;

pub use permutation::{permutation_importance, PermutationReport};
pub use profile::{
    cluster_shap_profile, global_shap_importance, rank_crossovers, rank_timeseries, ClusterProfile, FeatureScore,
    RankTrajectory, WeeklyRanking, LOW_CONFIDENCE_F1,
};
pub use shap::{tree_shap, tree_shap_single, ShapTensor};

use thiserror::Error;

use crate::forest::ForestError;

#[derive(Debug, Error, PartialEq)]
pub enum AttributionError {
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error("forest has no background rows")]
    EmptyBackground,
    #[error("{instances} instances but {labels} labels")]
    LabelCount { instances: usize, labels: usize },
    #[error("no weekly rankings supplied")]
    NoWeeks,
}

/// Feature indices ordered by descending score; ties keep the lower index.
pub fn rank_by_score(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}
