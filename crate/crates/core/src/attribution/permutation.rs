use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use super::{rank_by_score, AttributionError};
use crate::forest::{macro_f1, Forest};
use crate::rng::stream_rng;
use crate::Matrix;

const PERMUTE_STREAM: u64 = 0x7065_726d;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PermutationReport {
    pub feature_names: Vec<String>,
    pub baseline_f1: f64,
    /// Mean macro-F1 drop per feature; may be negative.
    pub importance: Vec<f64>,
    /// Sample standard deviation of the drop across repeats.
    pub sd: Vec<f64>,
    pub n_repeats: usize,
}

impl PermutationReport {
    /// Feature indices by descending importance.
    pub fn ranking(&self) -> Vec<usize> {
        rank_by_score(&self.importance)
    }
}

/// Macro-F1 drop when each column is shuffled, averaged over `n_repeats`
/// shuffles seeded by `(seed, feature, repeat)`.
pub fn permutation_importance(
    forest: &Forest,
    x: &Matrix,
    y: &[usize],
    n_repeats: usize,
    seed: u64,
) -> Result<PermutationReport, AttributionError> {
    if x.rows() != y.len() {
        return Err(AttributionError::LabelCount {
            instances: x.rows(),
            labels: y.len(),
        });
    }
    let k = forest.n_classes();
    let baseline = macro_f1(y, &forest.predict_matrix(x)?, k);
    let n_repeats = n_repeats.max(1);
    let per_feature: Vec<(f64, f64)> = (0..x.cols())
        .into_par_iter()
        .map(|f| {
            if !forest.uses_feature(f) {
                return (0.0, 0.0);
            }
            let column = x.column(f);
            let mut row = vec![0.0; x.cols()];
            let drops: Vec<f64> = (0..n_repeats)
                .map(|r| {
                    let mut rng = stream_rng(seed, &[PERMUTE_STREAM, f as u64, r as u64]);
                    let mut shuffled = column.clone();
                    shuffled.shuffle(&mut rng);
                    let pred: Vec<usize> = (0..x.rows())
                        .map(|i| {
                            row.copy_from_slice(x.row(i));
                            row[f] = shuffled[i];
                            forest.predict(&row).expect("width checked")
                        })
                        .collect();
                    baseline - macro_f1(y, &pred, k)
                })
                .collect();
            let mean = drops.iter().sum::<f64>() / n_repeats as f64;
            let sd = if n_repeats > 1 {
                (drops.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (n_repeats - 1) as f64).sqrt()
            } else {
                0.0
            };
            (mean, sd)
        })
        .collect();
    Ok(PermutationReport {
        feature_names: forest.feature_names.clone(),
        baseline_f1: baseline,
        importance: per_feature.iter().map(|p| p.0).collect(),
        sd: per_feature.iter().map(|p| p.1).collect(),
        n_repeats,
    })
}
