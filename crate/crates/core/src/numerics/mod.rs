//! PCA, Pearson correlation and multicollinearity filtering.

mod correlation;
mod eigen;
mod pca;

pub use correlation::{multicollinearity_filter, pearson_matrix, CorrelationMatrix, DroppedFeature, FilterResult};
pub use eigen::{symmetric_eigen, SymmetricEigen};
pub use pca::{fit_pca, PcaModel};

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum NumericsError {
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("every column is constant; nothing to decompose")]
    NoVariance,
    #[error("target variance {0} must lie in (0, 1]")]
    InvalidTarget(f64),
    #[error("expected {expected} columns, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("input contains a non-finite value")]
    NonFinite,
    #[error("{names} names for {cols} columns")]
    NameCount { names: usize, cols: usize },
}

/// Column means and population standard deviations.
pub(crate) fn column_moments(data: &crate::Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = data.rows() as f64;
    let mut mean = vec![0.0; data.cols()];
    for i in 0..data.rows() {
        for (m, v) in mean.iter_mut().zip(data.row(i)) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; data.cols()];
    for i in 0..data.rows() {
        for ((s, v), m) in var.iter_mut().zip(data.row(i)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let sd = var.into_iter().map(|s| (s / n).sqrt()).collect();
    (mean, sd)
}
