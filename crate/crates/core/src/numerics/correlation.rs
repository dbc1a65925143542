use std::collections::BTreeSet;

use serde::Serialize;

use super::{column_moments, NumericsError};
use crate::Matrix;

/// Pearson correlation matrix with feature names.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationMatrix {
    pub features: Vec<String>,
    pub r: Matrix,
    /// Constant columns; their off-diagonal entries are reported as 0.
    pub zero_variance: Vec<String>,
}

impl CorrelationMatrix {
    pub fn get(&self, a: &str, b: &str) -> Option<f64> {
        let i = self.features.iter().position(|f| f == a)?;
        let j = self.features.iter().position(|f| f == b)?;
        Some(self.r[(i, j)])
    }

    /// Writes the square matrix as CSV with a leading `feature` column.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["feature".to_string()];
        header.extend(self.features.iter().cloned());
        out.write_record(&header)?;
        for (i, f) in self.features.iter().enumerate() {
            let mut rec = vec![f.clone()];
            rec.extend(self.r.row(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Pearson correlation of every column pair, computed from z-scores.
pub fn pearson_matrix(data: &Matrix, names: &[String]) -> Result<CorrelationMatrix, NumericsError> {
    if data.rows() < 2 {
        return Err(NumericsError::TooFewRows(data.rows()));
    }
    if names.len() != data.cols() {
        return Err(NumericsError::NameCount {
            names: names.len(),
            cols: data.cols(),
        });
    }
    if data.has_non_finite() {
        return Err(NumericsError::NonFinite);
    }
    let p = data.cols();
    let n = data.rows() as f64;
    let (mean, sd) = column_moments(data);
    let mut z = data.clone();
    for i in 0..z.rows() {
        for (j, v) in z.row_mut(i).iter_mut().enumerate() {
            *v = if sd[j] > 0.0 { (*v - mean[j]) / sd[j] } else { 0.0 };
        }
    }
    let mut r = z.transpose().matmul(&z);
    for i in 0..p {
        for j in 0..p {
            r[(i, j)] = if i == j {
                1.0
            } else if sd[i] > 0.0 && sd[j] > 0.0 {
                (r[(i, j)] / n).clamp(-1.0, 1.0)
            } else {
                0.0
            };
        }
    }
    // Symmetrize exactly.
    for i in 0..p {
        for j in i + 1..p {
            r[(j, i)] = r[(i, j)];
        }
    }
    Ok(CorrelationMatrix {
        features: names.to_vec(),
        r,
        zero_variance: (0..p).filter(|&j| sd[j] <= 0.0).map(|j| names[j].clone()).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DroppedFeature {
    pub name: String,
    /// The feature it was too correlated with.
    pub partner: String,
    pub r: f64,
    /// Mean |r| of the dropped feature against the features remaining at the time.
    pub mean_abs_r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterResult {
    /// Surviving features in their original order.
    pub kept: Vec<String>,
    /// Dropped features in the order they were removed.
    pub dropped: Vec<DroppedFeature>,
}

/// Greedy multicollinearity filter.
///
/// Pairs with `|r| > threshold` are visited by decreasing `|r|`. When both
/// members are still present, the one with the larger mean `|r|` against the
/// remaining features is dropped; ties drop the lexicographically larger name.
pub fn multicollinearity_filter(corr: &CorrelationMatrix, threshold: f64) -> FilterResult {
    let p = corr.features.len();
    let names = &corr.features;
    let mut pairs: Vec<(usize, usize, f64)> = Vec::new();
    for i in 0..p {
        for j in i + 1..p {
            let r = corr.r[(i, j)];
            if r.abs() > threshold {
                pairs.push((i, j, r));
            }
        }
    }
    pairs.sort_by(|a, b| {
        b.2.abs()
            .total_cmp(&a.2.abs())
            .then_with(|| (&names[a.0], &names[a.1]).cmp(&(&names[b.0], &names[b.1])))
    });

    let mut present: BTreeSet<usize> = (0..p).collect();
    let mut dropped = Vec::new();
    let mean_abs = |f: usize, present: &BTreeSet<usize>| {
        let others: Vec<f64> = present
            .iter()
            .filter(|&&g| g != f)
            .map(|&g| corr.r[(f, g)].abs())
            .collect();
        if others.is_empty() {
            0.0
        } else {
            others.iter().sum::<f64>() / others.len() as f64
        }
    };
    for (i, j, r) in pairs {
        if !(present.contains(&i) && present.contains(&j)) {
            continue;
        }
        let (mi, mj) = (mean_abs(i, &present), mean_abs(j, &present));
        let (drop, keep, m) = if mi > mj || (mi == mj && names[i] > names[j]) {
            (i, j, mi)
        } else {
            (j, i, mj)
        };
        present.remove(&drop);
        dropped.push(DroppedFeature {
            name: names[drop].clone(),
            partner: names[keep].clone(),
            r,
            mean_abs_r: m,
        });
    }
    FilterResult {
        kept: present.into_iter().map(|i| names[i].clone()).collect(),
        dropped,
    }
}
