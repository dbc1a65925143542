//! Fisher-Jenks natural breaks.
//!
//! Values are sorted and collapsed into runs of equal values, then an exact
//! `O(k m^2)` dynamic program over the `m` distinct values finds the
//! contiguous partition with the least within-class sum of squared
//! deviations. Equal values are never split across classes.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::county::CountyId;

#[derive(Debug, Error, PartialEq)]
pub enum BreaksError {
    #[error("k must be at least 1")]
    ZeroClasses,
    #[error("cannot form {k} classes from {n} values")]
    TooManyClasses { k: usize, n: usize },
    #[error("cannot form {k} classes from {distinct} distinct values")]
    DegenerateClasses { k: usize, distinct: usize },
    #[error("values must be finite")]
    NonFinite,
    #[error("invalid k range [{lo}, {hi}]")]
    InvalidRange { lo: usize, hi: usize },
}

/// Optimal classification of a value population into `k` classes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BreaksResult {
    pub k: usize,
    /// `k - 1` strictly ascending cut values. Each cut is the smallest value
    /// of the class above it.
    pub boundaries: Vec<f64>,
    pub class_means: Vec<f64>,
    pub class_sizes: Vec<usize>,
    /// Total squared deviation from the global mean.
    pub sdam: f64,
    /// Optimal within-class squared deviation.
    pub sdcm: f64,
    /// Goodness of variance fit, `(sdam - sdcm) / sdam`.
    pub gvf: f64,
    pub min: f64,
    pub max: f64,
}

/// Cluster label `C1..Ck`; `C1` holds the lowest values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClusterLabel(pub u8);

impl ClusterLabel {
    /// Zero-based class index.
    pub fn index(self) -> usize {
        usize::from(self.0) - 1
    }

    pub fn from_index(i: usize) -> Self {
        ClusterLabel(u8::try_from(i + 1).expect("fewer than 255 classes"))
    }

    pub fn parse(s: &str) -> Option<Self> {
        let n: u8 = s.trim().strip_prefix('C')?.parse().ok()?;
        (n >= 1).then_some(ClusterLabel(n))
    }
}

impl fmt::Display for ClusterLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClusterAssignment {
    pub labels: BTreeMap<CountyId, ClusterLabel>,
    /// Counties whose value fell outside the fitted `[min, max]` and were
    /// clamped into the nearest class.
    pub clamped: Vec<CountyId>,
}

/// Runs of equal values in sorted order, with prefix sums over the runs.
struct Runs {
    values: Vec<f64>,
    counts: Vec<usize>,
    /// Prefix sums over runs (length m + 1), of count, centered sum and
    /// centered sum of squares.
    n: Vec<f64>,
    s1: Vec<f64>,
    s2: Vec<f64>,
}

impl Runs {
    fn new(sorted: &[f64]) -> Self {
        let mut values: Vec<f64> = Vec::new();
        let mut counts: Vec<usize> = Vec::new();
        for &v in sorted {
            if values.last() == Some(&v) {
                *counts.last_mut().expect("nonempty") += 1;
            } else {
                values.push(v);
                counts.push(1);
            }
        }
        let center = sorted.iter().sum::<f64>() / sorted.len() as f64;
        let m = values.len();
        let (mut n, mut s1, mut s2) = (vec![0.0; m + 1], vec![0.0; m + 1], vec![0.0; m + 1]);
        for r in 0..m {
            let c = counts[r] as f64;
            let d = values[r] - center;
            n[r + 1] = n[r] + c;
            s1[r + 1] = s1[r] + c * d;
            s2[r + 1] = s2[r] + c * d * d;
        }
        Self {
            values,
            counts,
            n,
            s1,
            s2,
        }
    }

    /// Within-class squared deviation of runs `a..=b`.
    #[inline]
    fn cost(&self, a: usize, b: usize) -> f64 {
        let n = self.n[b + 1] - self.n[a];
        let s1 = self.s1[b + 1] - self.s1[a];
        let s2 = self.s2[b + 1] - self.s2[a];
        (s2 - s1 * s1 / n).max(0.0)
    }
}

/// DP tables for every class count up to `k_max`.
struct Table {
    /// `back[k][j]`: first run of the last class in the best `k+1`-class
    /// partition of runs `0..=j`.
    back: Vec<Vec<usize>>,
}

fn solve(runs: &Runs, k_max: usize) -> Table {
    let m = runs.values.len();
    let mut prev: Vec<f64> = (0..m).map(|j| runs.cost(0, j)).collect();
    let mut back = vec![vec![0; m]];
    for k in 1..k_max {
        let mut cur = vec![f64::INFINITY; m];
        let mut arg = vec![0; m];
        for j in k..m {
            let mut best = f64::INFINITY;
            let mut best_i = k;
            for i in k..=j {
                let c = prev[i - 1] + runs.cost(i, j);
                if c < best {
                    best = c;
                    best_i = i;
                }
            }
            cur[j] = best;
            arg[j] = best_i;
        }
        back.push(arg);
        prev = cur;
    }
    Table { back }
}

fn squared_deviation(values: &[f64]) -> f64 {
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| (v - mean) * (v - mean)).sum()
}

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>, BreaksError> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(BreaksError::NonFinite);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted)
}

fn check_k(k: usize, n: usize, distinct: usize) -> Result<(), BreaksError> {
    if k == 0 {
        return Err(BreaksError::ZeroClasses);
    }
    if k > n {
        return Err(BreaksError::TooManyClasses { k, n });
    }
    if k > distinct {
        return Err(BreaksError::DegenerateClasses { k, distinct });
    }
    Ok(())
}

/// Reads the `k`-class solution out of the DP table and scores it with
/// direct two-pass sums so that singleton classes contribute exactly zero.
fn extract(sorted: &[f64], runs: &Runs, table: &Table, k: usize, sdam: f64) -> BreaksResult {
    let m = runs.values.len();
    // first run of each class
    let mut starts = vec![0; k];
    let mut j = m - 1;
    for c in (1..k).rev() {
        let i = table.back[c][j];
        starts[c] = i;
        j = i - 1;
    }
    let mut offset = 0;
    let mut class_means = Vec::with_capacity(k);
    let mut class_sizes = Vec::with_capacity(k);
    let mut sdcm = 0.0;
    for c in 0..k {
        let end_run = if c + 1 < k { starts[c + 1] } else { m };
        let size: usize = runs.counts[starts[c]..end_run].iter().sum();
        let members = &sorted[offset..offset + size];
        offset += size;
        class_means.push(members.iter().sum::<f64>() / size as f64);
        class_sizes.push(size);
        sdcm += squared_deviation(members);
    }
    let gvf = if sdam > 0.0 { (sdam - sdcm) / sdam } else { 1.0 };
    BreaksResult {
        k,
        boundaries: starts[1..].iter().map(|&r| runs.values[r]).collect(),
        class_means,
        class_sizes,
        sdam,
        sdcm,
        gvf,
        min: sorted[0],
        max: sorted[sorted.len() - 1],
    }
}

/// Optimal `k`-class natural breaks.
pub fn jenks_breaks(values: &[f64], k: usize) -> Result<BreaksResult, BreaksError> {
    let sorted = sorted_finite(values)?;
    let runs = if sorted.is_empty() {
        None
    } else {
        Some(Runs::new(&sorted))
    };
    let distinct = runs.as_ref().map_or(0, |r| r.values.len());
    check_k(k, sorted.len(), distinct)?;
    let runs = runs.expect("k >= 1 implies data");
    let table = solve(&runs, k);
    Ok(extract(&sorted, &runs, &table, k, squared_deviation(&sorted)))
}

/// Breaks for every `k` in `k_lo..=k_hi` from one DP pass.
pub fn jenks_range(values: &[f64], k_lo: usize, k_hi: usize) -> Result<Vec<BreaksResult>, BreaksError> {
    if k_lo == 0 || k_lo > k_hi {
        return Err(BreaksError::InvalidRange { lo: k_lo, hi: k_hi });
    }
    let sorted = sorted_finite(values)?;
    let runs = (!sorted.is_empty()).then(|| Runs::new(&sorted));
    let distinct = runs.as_ref().map_or(0, |r| r.values.len());
    check_k(k_hi, sorted.len(), distinct)?;
    let runs = runs.expect("data");
    let table = solve(&runs, k_hi);
    let sdam = squared_deviation(&sorted);
    Ok((k_lo..=k_hi)
        .map(|k| extract(&sorted, &runs, &table, k, sdam))
        .collect())
}

/// `(k, GVF)` for every `k` in the range.
pub fn gvf_curve(values: &[f64], k_lo: usize, k_hi: usize) -> Result<Vec<(usize, f64)>, BreaksError> {
    Ok(jenks_range(values, k_lo, k_hi)?
        .into_iter()
        .map(|b| (b.k, b.gvf))
        .collect())
}

/// Class of a single value: lower-inclusive, upper-exclusive intervals,
/// with the top class closed above.
pub fn classify(value: f64, breaks: &BreaksResult) -> ClusterLabel {
    let idx = breaks.boundaries.iter().filter(|&&b| value >= b).count();
    ClusterLabel::from_index(idx)
}

/// Labels every county by the class its value falls in.
pub fn assign_clusters(vhb_by_county: &BTreeMap<CountyId, f64>, breaks: &BreaksResult) -> ClusterAssignment {
    let mut out = ClusterAssignment::default();
    for (c, &v) in vhb_by_county {
        if v < breaks.min || v > breaks.max {
            log::warn!("{c}: value {v} outside fitted range, clamped");
            out.clamped.push(c.clone());
        }
        out.labels.insert(c.clone(), classify(v, breaks));
    }
    out
}

/// Writes `fips,vhb,cluster`.
pub fn write_assignment_csv<W: std::io::Write>(
    w: W,
    vhb_by_county: &BTreeMap<CountyId, f64>,
    assignment: &ClusterAssignment,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fips", "vhb", "cluster"])?;
    for (c, label) in &assignment.labels {
        let v = vhb_by_county.get(c).map(f64::to_string).unwrap_or_default();
        out.write_record([c.to_string(), v, label.to_string()])?;
    }
    out.flush()?;
    Ok(())
}

/// Reads `fips,vhb,cluster` rows.
pub fn read_assignment_csv<R: std::io::Read>(r: R) -> Result<(BTreeMap<CountyId, f64>, ClusterAssignment), csv::Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut vhb = BTreeMap::new();
    let mut assignment = ClusterAssignment::default();
    for rec in rdr.records() {
        let rec = rec?;
        let (Ok(c), Some(label)) = (CountyId::parse(&rec[0]), ClusterLabel::parse(&rec[2])) else {
            continue;
        };
        if let Ok(v) = rec[1].parse::<f64>() {
            vhb.insert(c.clone(), v);
        }
        assignment.labels.insert(c, label);
    }
    Ok((vhb, assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn two_class_split() {
        let b = jenks_breaks(&[1.0, 2.0, 4.0, 8.0, 9.0], 2).unwrap();
        assert_eq!(b.boundaries, vec![8.0]);
        assert_eq!(b.class_sizes, vec![3, 2]);
        // Brute force over all 4 contiguous splits of [1,2,4,8,9].
        let sorted = [1.0, 2.0, 4.0, 8.0, 9.0];
        let best = (1..5)
            .map(|s| squared_deviation(&sorted[..s]) + squared_deviation(&sorted[s..]))
            .fold(f64::INFINITY, f64::min);
        assert!((b.sdcm - best).abs() < 1e-12);
    }

    #[test]
    fn extremes_of_k() {
        let v = [3.0, 1.0, 7.0, 2.0];
        let one = jenks_breaks(&v, 1).unwrap();
        assert_eq!(one.gvf, 0.0);
        assert!(one.boundaries.is_empty());
        let all = jenks_breaks(&v, 4).unwrap();
        assert_eq!(all.gvf, 1.0);
        assert_eq!(all.boundaries, vec![2.0, 3.0, 7.0]);
    }

    #[test]
    fn errors() {
        assert_eq!(
            jenks_breaks(&[1.0, 2.0], 3),
            Err(BreaksError::TooManyClasses { k: 3, n: 2 })
        );
        assert_eq!(
            jenks_breaks(&[1.0, 1.0, 2.0], 3),
            Err(BreaksError::DegenerateClasses { k: 3, distinct: 2 })
        );
        assert_eq!(jenks_breaks(&[1.0], 0), Err(BreaksError::ZeroClasses));
        assert_eq!(jenks_breaks(&[f64::NAN, 1.0], 1), Err(BreaksError::NonFinite));
    }

    #[test]
    fn duplicates_stay_together() {
        let b = jenks_breaks(&[1.0, 1.0, 1.0, 1.1, 5.0, 5.0], 2).unwrap();
        assert_eq!(b.boundaries, vec![5.0]);
        let b = jenks_breaks(&[1.0, 2.0, 2.0, 2.0, 3.0], 3).unwrap();
        assert_eq!(b.class_sizes, vec![1, 3, 1]);
    }

    #[test]
    fn boundary_value_goes_up() {
        let b = jenks_breaks(&[1.0, 2.0, 4.0, 8.0, 9.0], 2).unwrap();
        assert_eq!(classify(8.0, &b), ClusterLabel(2));
        assert_eq!(classify(1.0, &b), ClusterLabel(1));
        assert_eq!(classify(9.0, &b), ClusterLabel(2));
        assert_eq!(classify(7.999, &b), ClusterLabel(1));
    }

    #[test]
    fn assignment_clamps_and_orders() {
        let values = [0.80, 0.82, 0.85, 0.9, 0.91, 0.97, 0.975];
        let b = jenks_breaks(&values, 3).unwrap();
        let map: BTreeMap<CountyId, f64> = [("01001", 0.5), ("01003", 0.99), ("01005", 0.9)]
            .into_iter()
            .map(|(c, v)| (CountyId::parse(c).unwrap(), v))
            .collect();
        let a = assign_clusters(&map, &b);
        assert_eq!(a.clamped.len(), 2);
        assert_eq!(a.labels[&CountyId::parse("01001").unwrap()], ClusterLabel(1));
        assert_eq!(a.labels[&CountyId::parse("01003").unwrap()], ClusterLabel(3));
        assert!(b.class_means.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(ClusterLabel(3).to_string(), "C3");
        assert_eq!(ClusterLabel::parse("C3"), Some(ClusterLabel(3)));
    }

    proptest! {
        #[test]
        fn gvf_curve_is_nondecreasing(values in prop::collection::vec(0.0f64..1.0, 50)) {
            let curve = gvf_curve(&values, 1, 10).unwrap();
            prop_assert_eq!(curve[0].1, 0.0);
            for w in curve.windows(2) {
                prop_assert!(w[1].1 >= w[0].1 - 1e-12, "{:?}", w);
            }
            // Per-k DP gives the same numbers as the shared table.
            for (k, g) in &curve {
                let single = jenks_breaks(&values, *k).unwrap();
                prop_assert_eq!(single.gvf, *g);
            }
        }

        #[test]
        fn affine_invariance(values in prop::collection::vec(-5.0f64..5.0, 8..30), a in 0.5f64..4.0, shift in -3.0f64..3.0, k in 2usize..5) {
            let b = jenks_breaks(&values, k).unwrap();
            let mapped: Vec<f64> = values.iter().map(|v| a * v + shift).collect();
            let bm = jenks_breaks(&mapped, k).unwrap();
            prop_assert_eq!(&b.class_sizes, &bm.class_sizes);
            for (x, y) in b.boundaries.iter().zip(&bm.boundaries) {
                prop_assert!((a * x + shift - y).abs() < 1e-9);
            }
            prop_assert!((b.gvf - bm.gvf).abs() < 1e-9);
        }
    }
}
