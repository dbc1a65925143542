use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::{rank_by_score, AttributionError, ShapTensor};
use crate::Matrix;

/// Weeks whose mean macro F1 falls below this are flagged as low confidence.
pub const LOW_CONFIDENCE_F1: f64 = 0.6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FeatureScore {
    pub feature: usize,
    pub name: String,
    /// Mean |phi| over the cluster's instances, for the cluster's class.
    pub mean_abs: f64,
    /// Mean signed phi over the same instances.
    pub mean_signed: f64,
    /// Mean raw feature value over the same instances.
    pub mean_value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClusterProfile {
    pub class: usize,
    pub n_instances: usize,
    pub top: Vec<FeatureScore>,
}

/// Mean |phi| per feature, each instance scored against `classes[i]`
/// (normally its predicted class).
pub fn global_shap_importance(shap: &ShapTensor, classes: &[usize]) -> Vec<f64> {
    let mut imp = vec![0.0; shap.n_features];
    for (i, &c) in classes.iter().enumerate() {
        for (f, v) in imp.iter_mut().enumerate() {
            *v += shap.get(i, f, c).abs();
        }
    }
    let n = classes.len().max(1) as f64;
    imp.iter_mut().for_each(|v| *v /= n);
    imp
}

/// Per-class profiles over instances grouped by `groups[i]` (predicted class).
/// Features are ranked by total |phi| for the group's class; the first
/// `top_n` are kept. Classes without instances are omitted and reported in
/// the returned warnings.
pub fn cluster_shap_profile(
    shap: &ShapTensor,
    x: &Matrix,
    groups: &[usize],
    feature_names: &[String],
    top_n: usize,
) -> Result<(Vec<ClusterProfile>, Vec<String>), AttributionError> {
    if groups.len() != shap.n_instances || x.rows() != shap.n_instances {
        return Err(AttributionError::LabelCount {
            instances: shap.n_instances,
            labels: groups.len(),
        });
    }
    let mut profiles = Vec::new();
    let mut warnings = Vec::new();
    for c in 0..shap.n_classes {
        let members: Vec<usize> = (0..groups.len()).filter(|&i| groups[i] == c).collect();
        if members.is_empty() {
            warnings.push(format!("class {} has no instances; profile omitted", c + 1));
            continue;
        }
        let m = members.len() as f64;
        let mean = |g: &dyn Fn(usize) -> f64| members.iter().map(|&i| g(i)).sum::<f64>() / m;
        let abs: Vec<f64> = (0..shap.n_features)
            .map(|f| mean(&|i| shap.get(i, f, c).abs()))
            .collect();
        let top = rank_by_score(&abs)
            .into_iter()
            .take(top_n)
            .map(|f| FeatureScore {
                feature: f,
                name: feature_names[f].clone(),
                mean_abs: abs[f],
                mean_signed: mean(&|i| shap.get(i, f, c)),
                mean_value: mean(&|i| x[(i, f)]),
            })
            .collect();
        profiles.push(ClusterProfile {
            class: c,
            n_instances: members.len(),
            top,
        });
    }
    Ok((profiles, warnings))
}

/// One week's ranking of features, most important first.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct WeeklyRanking {
    pub week: u8,
    pub mean_f1: f64,
    pub ranking: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RankTrajectory {
    pub weeks: Vec<u8>,
    /// 1-based rank per week; `None` where the feature was absent.
    pub ranks: BTreeMap<String, Vec<Option<usize>>>,
    pub low_confidence: BTreeSet<u8>,
}

/// Rank of every selected feature in every week. An empty selection tracks
/// all features seen in any week.
pub fn rank_timeseries(weekly: &[WeeklyRanking], selected: &[String]) -> Result<RankTrajectory, AttributionError> {
    if weekly.is_empty() {
        return Err(AttributionError::NoWeeks);
    }
    let mut weekly: Vec<&WeeklyRanking> = weekly.iter().collect();
    weekly.sort_by_key(|w| w.week);
    let features: BTreeSet<String> = if selected.is_empty() {
        weekly.iter().flat_map(|w| w.ranking.iter().cloned()).collect()
    } else {
        selected.iter().cloned().collect()
    };
    let ranks = features
        .into_iter()
        .map(|f| {
            let traj = weekly
                .iter()
                .map(|w| w.ranking.iter().position(|r| *r == f).map(|p| p + 1))
                .collect();
            (f, traj)
        })
        .collect();
    Ok(RankTrajectory {
        weeks: weekly.iter().map(|w| w.week).collect(),
        ranks,
        low_confidence: weekly
            .iter()
            .filter(|w| w.mean_f1 < LOW_CONFIDENCE_F1)
            .map(|w| w.week)
            .collect(),
    })
}

/// Weeks at which the order of features `a` and `b` flips relative to the
/// previous week where both were ranked.
pub fn rank_crossovers(traj: &RankTrajectory, a: &str, b: &str) -> Vec<u8> {
    let (Some(ra), Some(rb)) = (traj.ranks.get(a), traj.ranks.get(b)) else {
        return Vec::new();
    };
    let mut out = Vec::new();
    let mut prev: Option<bool> = None;
    for (i, &w) in traj.weeks.iter().enumerate() {
        if let (Some(x), Some(y)) = (ra[i], rb[i]) {
            let a_ahead = x < y;
            if prev.is_some_and(|p| p != a_ahead) {
                out.push(w);
            }
            prev = Some(a_ahead);
        }
    }
    out
}
