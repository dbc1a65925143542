use serde::{Deserialize, Serialize};

use super::{column_moments, symmetric_eigen, NumericsError};
use crate::Matrix;

const EIGEN_TOL: f64 = 1e-12;

/// Correlation-form PCA: inputs are standardized before decomposition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    /// Number of columns the model was fit on.
    pub n_fields: usize,
    /// Indices of the non-constant input columns that enter the projection.
    pub kept_fields: Vec<usize>,
    /// Input columns dropped because their variance is zero.
    pub dropped_fields: Vec<usize>,
    /// Mean of each kept field.
    pub mean: Vec<f64>,
    /// Population standard deviation of each kept field.
    pub scale: Vec<f64>,
    /// Kept fields x retained components; columns are orthonormal.
    pub components: Matrix,
    /// Explained-variance ratio of every component of the full
    /// decomposition, nonincreasing; sums to 1.
    pub explained_variance_ratio: Vec<f64>,
}

impl PcaModel {
    pub fn n_components(&self) -> usize {
        self.components.cols()
    }

    pub fn retained_ratio(&self) -> f64 {
        self.explained_variance_ratio[..self.n_components()].iter().sum()
    }

    fn standardize(&self, data: &Matrix) -> Result<Matrix, NumericsError> {
        if data.cols() != self.n_fields {
            return Err(NumericsError::DimensionMismatch {
                expected: self.n_fields,
                actual: data.cols(),
            });
        }
        let mut z = data.select_columns(&self.kept_fields);
        for i in 0..z.rows() {
            for (j, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
        Ok(z)
    }

    /// Standardizes `data` with the fitted moments and projects it onto the
    /// retained components.
    pub fn transform(&self, data: &Matrix) -> Result<Matrix, NumericsError> {
        Ok(self.standardize(data)?.matmul(&self.components))
    }

    /// Maps component scores back into standardized field space.
    pub fn inverse_transform_standardized(&self, scores: &Matrix) -> Matrix {
        scores.matmul(&self.components.transpose())
    }
}

/// Fits PCA and keeps the smallest number of components whose cumulative
/// explained-variance ratio reaches `target_variance`.
pub fn fit_pca(data: &Matrix, target_variance: f64) -> Result<PcaModel, NumericsError> {
    if !(target_variance > 0.0 && target_variance <= 1.0) {
        return Err(NumericsError::InvalidTarget(target_variance));
    }
    if data.rows() < 2 {
        return Err(NumericsError::TooFewRows(data.rows()));
    }
    if data.has_non_finite() {
        return Err(NumericsError::NonFinite);
    }
    let (mean, sd) = column_moments(data);
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..data.cols()).partition(|&j| sd[j] > 0.0);
    if kept.is_empty() {
        return Err(NumericsError::NoVariance);
    }
    let mut model = PcaModel {
        n_fields: data.cols(),
        mean: kept.iter().map(|&j| mean[j]).collect(),
        scale: kept.iter().map(|&j| sd[j]).collect(),
        kept_fields: kept,
        dropped_fields: dropped,
        components: Matrix::zeros(0, 0),
        explained_variance_ratio: Vec::new(),
    };
    let z = model.standardize(data)?;
    let n = z.rows() as f64;
    let mut corr = z.transpose().matmul(&z);
    let p = corr.rows();
    for i in 0..p {
        for j in 0..p {
            corr[(i, j)] /= n;
        }
    }
    let eig = symmetric_eigen(&corr, EIGEN_TOL);
    let values: Vec<f64> = eig.values.iter().map(|v| v.max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let ratios: Vec<f64> = values.iter().map(|v| v / total).collect();
    let mut cum = 0.0;
    let mut retained = ratios.len();
    for (i, r) in ratios.iter().enumerate() {
        cum += r;
        if cum >= target_variance - 1e-12 {
            retained = i + 1;
            break;
        }
    }
    model.components = eig.vectors.select_columns(&(0..retained).collect::<Vec<_>>());
    model.explained_variance_ratio = ratios;
    Ok(model)
}
