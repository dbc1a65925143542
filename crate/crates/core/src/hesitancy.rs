//! Behavioral hesitancy metric.
//!
//! For cumulative vaccinated fractions `q`, the share of the previously
//! unvaccinated who got vaccinated over the last `lag` weeks is
//!
//! ```text
//! delta_t = (q_t - q_{t-lag}) / (1 - q_{t-lag})
//! ```
//!
//! and the behavioral hesitancy is its complement,
//! `VHb_t = 1 - delta_t = (1 - q_t) / (1 - q_{t-lag})`.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::county::{CountyId, VaccinationSeries, WeekIndex};

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("lag must be a positive number of weeks, got {0}")]
    InvalidLag(i64),
    #[error("window [{lo}, {hi}] is empty or reversed")]
    InvalidWindow { lo: u32, hi: u32 },
    #[error("county {0}: no weeks in the window have data")]
    EmptySeries(CountyId),
    #[error("county {0} has no positive population weight")]
    MissingPopulation(CountyId),
}

/// Inclusive week window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Window {
    pub lo: u32,
    pub hi: u32,
}

impl Window {
    pub fn new(lo: u32, hi: u32) -> Result<Self, MetricError> {
        if lo == 0 || lo > hi || hi > 53 {
            return Err(MetricError::InvalidWindow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    pub fn contains(&self, w: WeekIndex) -> bool {
        (self.lo..=self.hi).contains(&w.get())
    }

    pub fn weeks(&self) -> impl Iterator<Item = WeekIndex> {
        (self.lo..=self.hi).map(|w| WeekIndex::new(w).expect("validated window"))
    }
}

impl Default for Window {
    fn default() -> Self {
        Self { lo: 4, hi: 43 }
    }
}

/// Per-week hesitancy for one county.
#[derive(Clone, Debug, PartialEq)]
pub struct HesitancySeries {
    pub county: CountyId,
    pub lag: u32,
    pub vhb: BTreeMap<WeekIndex, f64>,
    pub delta: BTreeMap<WeekIndex, f64>,
    /// Window weeks where `q_{t-lag} = 1`, so the ratio is undefined.
    pub saturated: BTreeSet<WeekIndex>,
    /// Window weeks lacking either the `t` or the `t - lag` observation.
    pub unobserved: BTreeSet<WeekIndex>,
}

impl HesitancySeries {
    pub fn get(&self, week: WeekIndex) -> Option<f64> {
        self.vhb.get(&week).copied()
    }
}

/// Computes `delta` and `VHb` for every week of `window`.
pub fn compute_delta(series: &VaccinationSeries, lag: i64, window: Window) -> Result<HesitancySeries, MetricError> {
    if lag < 1 {
        return Err(MetricError::InvalidLag(lag));
    }
    let lag = u32::try_from(lag).map_err(|_| MetricError::InvalidLag(lag))?;
    let mut out = HesitancySeries {
        county: series.county.clone(),
        lag,
        vhb: BTreeMap::new(),
        delta: BTreeMap::new(),
        saturated: BTreeSet::new(),
        unobserved: BTreeSet::new(),
    };
    let mut any_data = false;
    for t in window.weeks() {
        let now = series.q.get(&t).copied();
        let before = t.checked_sub(lag).and_then(|p| series.q.get(&p).copied());
        any_data |= now.is_some();
        match (now, before) {
            (Some(_), Some(prev)) if prev >= 1.0 => {
                out.saturated.insert(t);
            }
            (Some(q), Some(prev)) => {
                let vhb = (1.0 - q) / (1.0 - prev);
                out.vhb.insert(t, vhb);
                out.delta.insert(t, 1.0 - vhb);
            }
            _ => {
                out.unobserved.insert(t);
            }
        }
    }
    if !any_data {
        return Err(MetricError::EmptySeries(series.county.clone()));
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    #[default]
    Population,
    Unweighted,
}

/// Per-week mean of county `VHb` over the counties defined that week.
///
/// Weeks with no defined county are omitted.
pub fn national_aggregate(
    all: &[HesitancySeries],
    populations: &BTreeMap<CountyId, f64>,
    aggregation: Aggregation,
) -> Result<BTreeMap<WeekIndex, f64>, MetricError> {
    let mut acc: BTreeMap<WeekIndex, (f64, f64)> = BTreeMap::new();
    for s in all {
        let weight = match aggregation {
            Aggregation::Unweighted => 1.0,
            Aggregation::Population => match populations.get(&s.county) {
                Some(&p) if p > 0.0 => p,
                _ => return Err(MetricError::MissingPopulation(s.county.clone())),
            },
        };
        for (&w, &v) in &s.vhb {
            let e = acc.entry(w).or_insert((0.0, 0.0));
            e.0 += weight * v;
            e.1 += weight;
        }
    }
    Ok(acc
        .into_iter()
        .filter(|(_, (_, wsum))| *wsum > 0.0)
        .map(|(w, (num, den))| (w, num / den))
        .collect())
}

/// Writes `fips,week,delta,vhb,defined_flag` rows for every window week of
/// every series, restricted to `only_week` when given.
pub fn write_csv<W: std::io::Write>(
    w: W,
    all: &[HesitancySeries],
    window: Window,
    only_week: Option<WeekIndex>,
) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["fips", "week", "delta", "vhb", "defined_flag"])?;
    for s in all {
        for t in window.weeks() {
            if only_week.is_some_and(|o| o != t) {
                continue;
            }
            match (s.delta.get(&t), s.vhb.get(&t)) {
                (Some(d), Some(v)) => out.write_record([
                    s.county.to_string(),
                    t.to_string(),
                    d.to_string(),
                    v.to_string(),
                    "1".into(),
                ])?,
                _ => out.write_record([
                    s.county.to_string(),
                    t.to_string(),
                    String::new(),
                    String::new(),
                    "0".into(),
                ])?,
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads defined `(fips, week) -> vhb` values back from [`write_csv`] output.
pub fn read_csv<R: std::io::Read>(r: R) -> Result<BTreeMap<(CountyId, WeekIndex), f64>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        if &rec[4] != "1" {
            continue;
        }
        let (Ok(c), Some(w), Ok(v)) = (
            CountyId::parse(&rec[0]),
            rec[1].parse::<u32>().ok().and_then(|w| WeekIndex::new(w).ok()),
            rec[3].parse::<f64>(),
        ) else {
            continue;
        };
        out.insert((c, w), v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn id(s: &str) -> CountyId {
        CountyId::parse(s).unwrap()
    }

    fn w(n: u32) -> WeekIndex {
        WeekIndex::new(n).unwrap()
    }

    fn two_point(prev: f64, now: f64) -> HesitancySeries {
        let s = VaccinationSeries {
            county: id("01001"),
            q: [(w(22), prev), (w(23), now)].into_iter().collect(),
        };
        compute_delta(&s, 1, Window::new(23, 23).unwrap()).unwrap()
    }

    #[test]
    fn worked_examples() {
        let a = two_point(0.60, 0.70);
        assert!((a.vhb[&w(23)] - 0.75).abs() < 1e-12);
        assert!((a.delta[&w(23)] - 0.25).abs() < 1e-12);
        let b = two_point(0.70, 0.80);
        assert!((b.vhb[&w(23)] - 2.0 / 3.0).abs() < 1e-12);
        assert!((b.delta[&w(23)] - 1.0 / 3.0).abs() < 1e-12);
        // Same baseline, double the uptake.
        let c = two_point(0.60, 0.80);
        assert!((c.vhb[&w(23)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn no_change_means_full_hesitancy() {
        let s = two_point(0.4, 0.4);
        assert_eq!(s.vhb[&w(23)], 1.0);
        assert_eq!(s.delta[&w(23)], 0.0);
    }

    #[test]
    fn saturated_baseline_is_flagged() {
        let s = two_point(1.0, 1.0);
        assert!(s.vhb.is_empty());
        assert!(s.saturated.contains(&w(23)));
    }

    #[test]
    fn parameter_errors() {
        let s = VaccinationSeries {
            county: id("01001"),
            q: [(w(5), 0.1)].into_iter().collect(),
        };
        assert_eq!(compute_delta(&s, 0, Window::default()), Err(MetricError::InvalidLag(0)));
        assert_eq!(
            compute_delta(&s, -2, Window::default()),
            Err(MetricError::InvalidLag(-2))
        );
        assert_eq!(
            compute_delta(&s, 1, Window::new(30, 40).unwrap()),
            Err(MetricError::EmptySeries(id("01001")))
        );
        assert!(Window::new(10, 4).is_err());
    }

    #[test]
    fn aggregates() {
        let mk = |fips: &str, v: f64| HesitancySeries {
            county: id(fips),
            lag: 1,
            vhb: [(w(10), v)].into_iter().collect(),
            delta: [(w(10), 1.0 - v)].into_iter().collect(),
            saturated: BTreeSet::new(),
            unobserved: BTreeSet::new(),
        };
        let pops: BTreeMap<CountyId, f64> = [(id("01001"), 100.0), (id("01003"), 300.0)].into_iter().collect();
        let both = [mk("01001", 0.8), mk("01003", 0.9)];
        let agg = national_aggregate(&both, &pops, Aggregation::Population).unwrap();
        assert!((agg[&w(10)] - 0.875).abs() < 1e-12);

        let one = [mk("01001", 0.8)];
        let agg = national_aggregate(&one, &pops, Aggregation::Population).unwrap();
        assert_eq!(agg[&w(10)], 0.8);

        let eq = [mk("01001", 0.7), mk("01003", 0.9)];
        let agg = national_aggregate(&eq, &pops, Aggregation::Unweighted).unwrap();
        assert!((agg[&w(10)] - 0.8).abs() < 1e-12);

        let none: BTreeMap<CountyId, f64> = BTreeMap::new();
        assert!(national_aggregate(&one, &none, Aggregation::Population).is_err());
    }

    fn monotone_series() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..0.2, 6..20).prop_map(|incs| {
            let mut q = 0.0f64;
            incs.into_iter()
                .map(|d| {
                    q = (q + d).min(0.999);
                    q
                })
                .collect()
        })
    }

    fn series_of(qs: &[f64]) -> VaccinationSeries {
        VaccinationSeries {
            county: id("01001"),
            q: qs.iter().enumerate().map(|(i, &v)| (w(i as u32 + 1), v)).collect(),
        }
    }

    proptest! {
        #[test]
        fn bounded_and_complementary(qs in monotone_series()) {
            let n = qs.len() as u32;
            let h = compute_delta(&series_of(&qs), 1, Window::new(1, n).unwrap()).unwrap();
            for (t, v) in &h.vhb {
                let d = h.delta[t];
                prop_assert!((0.0..=1.0).contains(v));
                prop_assert!((0.0..=1.0 + 1e-15).contains(&d) && d >= -1e-15);
                prop_assert!((v + d - 1.0).abs() < 1e-15);
            }
        }

        #[test]
        fn telescopes(qs in monotone_series(), lag in 1u32..3) {
            let n = qs.len() as u32;
            let s = series_of(&qs);
            let h = compute_delta(&s, lag as i64, Window::new(1, n).unwrap()).unwrap();
            let h2 = compute_delta(&s, 2 * lag as i64, Window::new(1, n).unwrap()).unwrap();
            for (t, v2) in &h2.vhb {
                let mid = t.checked_sub(lag).unwrap();
                if let (Some(a), Some(b)) = (h.get(*t), h.get(mid)) {
                    prop_assert!((a * b - v2).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn decreasing_in_current_uptake(prev in 0.0f64..0.95, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let lo = prev + (1.0 - prev) * a.min(b);
            let hi = prev + (1.0 - prev) * a.max(b);
            prop_assume!(hi - lo > 1e-9);
            prop_assert!(two_point(prev, hi).vhb[&w(23)] < two_point(prev, lo).vhb[&w(23)]);
        }

        #[test]
        fn higher_baseline_same_gain_is_less_hesitant(p1 in 0.0f64..0.8, gap in 0.01f64..0.1, gain in 0.001f64..0.1) {
            let p2 = p1 + gap;
            prop_assume!(p2 + gain < 1.0);
            prop_assert!(two_point(p2, p2 + gain).vhb[&w(23)] < two_point(p1, p1 + gain).vhb[&w(23)]);
        }
    }
}
