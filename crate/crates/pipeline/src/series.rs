//! Multi-week runs and cross-week aggregates.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use vhb_core::attribution::{rank_crossovers, rank_timeseries, WeeklyRanking, LOW_CONFIDENCE_F1};
use vhb_core::county::{CountyId, VaccinationSeries, WeekIndex};
use vhb_core::hesitancy::{compute_delta, national_aggregate, Aggregation, Window};

use crate::artifacts::{fmt_f64, hash_directory, ArtifactWriter};
use crate::config::RunConfig;
use crate::error::PipelineError;
use crate::run::{class_names, load_imputed_panel, metric_series, read_population, run_week, RunOptions, WeekOutcome};
use crate::text_stage::{self, TEXT_FEATURES};
use crate::validate::{validate_external, ValidationReport};

pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesOutcome {
    pub weeks: Vec<WeekOutcome>,
    pub validation: Vec<ValidationReport>,
    pub manifest: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct SeriesManifest<'a> {
    config_hash: String,
    crate_version: &'static str,
    weeks: Vec<u32>,
    seeds: &'a crate::config::Seeds,
    files: &'a BTreeMap<String, String>,
}

/// Runs every week of the window (in parallel) and writes the cross-week
/// aggregates and a manifest hashing every file of the output directory.
pub fn run_series(cfg: &RunConfig, opts: RunOptions) -> Result<SeriesOutcome, PipelineError> {
    let weeks: Vec<u32> = cfg.weeks().collect();
    if weeks.len() < 2 {
        return Err(PipelineError::Config(
            "a series needs a window of at least 2 weeks".into(),
        ));
    }
    let mut out = ArtifactWriter::new(&cfg.output_dir)?;
    if cfg.text.is_some() && !(opts.reuse && out.exists(TEXT_FEATURES)) {
        text_stage::run_text(cfg)?;
    }
    let results: Vec<Result<WeekOutcome, PipelineError>> = weeks.par_iter().map(|&w| run_week(cfg, w, opts)).collect();
    let mut outcomes = Vec::with_capacity(results.len());
    for r in results {
        outcomes.push(r?);
    }

    let first = WeekIndex::new(cfg.window.0).map_err(|e| PipelineError::Config(e.to_string()))?;
    let (panel, _) = load_imputed_panel(cfg, &[], first)?;
    let series = metric_series(&panel, cfg.metric_mode);

    write_rank_trajectories(cfg, &outcomes, &mut out)?;
    write_cluster_trend(cfg, &series, &outcomes, &mut out)?;
    write_national(cfg, &series, &mut out)?;
    write_cv_summary(&outcomes, &mut out)?;
    let validation = write_validation(cfg, &outcomes, &mut out)?;

    let mut files = hash_directory(&cfg.output_dir)?;
    files.remove(MANIFEST);
    let manifest = SeriesManifest {
        config_hash: cfg.hash(),
        crate_version: env!("CARGO_PKG_VERSION"),
        weeks: weeks.clone(),
        seeds: &cfg.seeds,
        files: &files,
    };
    out.write_json(MANIFEST, &manifest)?;
    Ok(SeriesOutcome {
        weeks: outcomes,
        validation,
        manifest: files,
    })
}

fn week_u8(w: u32) -> u8 {
    u8::try_from(w).expect("weeks are at most 53")
}

/// Long-format ranks per scope (`global` and every predicted cluster).
fn write_rank_trajectories(
    cfg: &RunConfig,
    outcomes: &[WeekOutcome],
    out: &mut ArtifactWriter,
) -> Result<(), PipelineError> {
    let mut scopes: BTreeMap<String, Vec<WeeklyRanking>> = BTreeMap::new();
    for o in outcomes {
        let (Some(global), Some(f1)) = (&o.shap_ranking, o.mean_f1) else {
            continue;
        };
        scopes.entry("global".into()).or_default().push(WeeklyRanking {
            week: week_u8(o.week),
            mean_f1: f1,
            ranking: global.clone(),
        });
        for (cluster, ranking) in &o.cluster_rankings {
            scopes.entry(cluster.clone()).or_default().push(WeeklyRanking {
                week: week_u8(o.week),
                mean_f1: f1,
                ranking: ranking.clone(),
            });
        }
    }
    let mut rows = Vec::new();
    let mut crossings = Vec::new();
    for (scope, weekly) in &scopes {
        let traj = rank_timeseries(weekly, &cfg.tracked_features).map_err(|e| PipelineError::stage("series", e))?;
        for (feature, ranks) in &traj.ranks {
            for (w, r) in traj.weeks.iter().zip(ranks) {
                rows.push(vec![
                    scope.clone(),
                    feature.clone(),
                    w.to_string(),
                    r.map(|r| r.to_string()).unwrap_or_default(),
                    u8::from(traj.low_confidence.contains(w)).to_string(),
                ]);
            }
        }
        let tracked = &cfg.tracked_features;
        for (i, a) in tracked.iter().enumerate() {
            for b in &tracked[i + 1..] {
                for w in rank_crossovers(&traj, a, b) {
                    crossings.push(vec![scope.clone(), a.clone(), b.clone(), w.to_string()]);
                }
            }
        }
    }
    out.write_rows(
        "rank_trajectory.csv",
        "series",
        &["scope", "feature", "week", "rank", "low_confidence"],
        rows,
    )?;
    out.write_rows(
        "rank_crossovers.csv",
        "series",
        &["scope", "feature_a", "feature_b", "week"],
        crossings,
    )
}

fn mean_sd(v: &[f64]) -> (String, String) {
    if v.is_empty() {
        return (String::new(), String::new());
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() < 2 {
        String::new()
    } else {
        fmt_f64((v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (n - 1.0)).sqrt())
    };
    (fmt_f64(m), sd)
}

/// One row per (cluster, week): mean and sample sd of cumulative
/// vaccination and of VHb over the counties in that week's cluster.
fn write_cluster_trend(
    cfg: &RunConfig,
    series: &[VaccinationSeries],
    outcomes: &[WeekOutcome],
    out: &mut ArtifactWriter,
) -> Result<(), PipelineError> {
    let q: BTreeMap<&CountyId, &BTreeMap<WeekIndex, f64>> = series.iter().map(|s| (&s.county, &s.q)).collect();
    let classes = class_names(cfg.k);
    let mut rows = Vec::new();
    for (c, name) in classes.iter().enumerate() {
        for o in outcomes {
            let Some(clusters) = &o.clusters else { continue };
            let w = WeekIndex::new(o.week).expect("window week");
            let members: Vec<&CountyId> = clusters
                .labels
                .iter()
                .filter(|(_, l)| l.index() == c)
                .map(|(id, _)| id)
                .collect();
            let qv: Vec<f64> = members
                .iter()
                .filter_map(|m| q.get(m).and_then(|s| s.get(&w)).copied())
                .collect();
            let hv: Vec<f64> = members.iter().filter_map(|m| o.vhb.get(*m).copied()).collect();
            let (mq, sq) = mean_sd(&qv);
            let (mh, sh) = mean_sd(&hv);
            rows.push(vec![
                name.clone(),
                o.week.to_string(),
                members.len().to_string(),
                mq,
                sq,
                mh,
                sh,
            ]);
        }
    }
    out.write_rows(
        "cluster_trend.csv",
        "series",
        &[
            "cluster",
            "week",
            "n_counties",
            "mean_vaccinated",
            "sd_vaccinated",
            "mean_vhb",
            "sd_vhb",
        ],
        rows,
    )
}

fn write_national(
    cfg: &RunConfig,
    series: &[VaccinationSeries],
    out: &mut ArtifactWriter,
) -> Result<(), PipelineError> {
    let window = Window::new(cfg.window.0, cfg.window.1).map_err(|e| PipelineError::Config(e.to_string()))?;
    let all: Vec<_> = series
        .iter()
        .filter_map(|s| compute_delta(s, cfg.lag, window).ok())
        .collect();
    let population = match &cfg.population {
        Some(p) => read_population(p)?,
        None => BTreeMap::new(),
    };
    let national =
        national_aggregate(&all, &population, cfg.aggregation).map_err(|e| PipelineError::stage("series", e))?;
    let mut defined: BTreeMap<WeekIndex, usize> = BTreeMap::new();
    for s in &all {
        for w in s.vhb.keys() {
            *defined.entry(*w).or_default() += 1;
        }
    }
    let mode = match cfg.aggregation {
        Aggregation::Population => "population",
        Aggregation::Unweighted => "unweighted",
    };
    let rows = national
        .iter()
        .map(|(w, v)| vec![w.to_string(), fmt_f64(*v), defined[w].to_string(), mode.to_string()]);
    out.write_rows(
        "national_vhb.csv",
        "series",
        &["week", "vhb", "n_counties", "weighting"],
        rows,
    )
}

fn write_cv_summary(outcomes: &[WeekOutcome], out: &mut ArtifactWriter) -> Result<(), PipelineError> {
    let rows = outcomes.iter().filter_map(|o| {
        let (m, s) = (o.mean_f1?, o.sd_f1?);
        Some(vec![
            o.week.to_string(),
            fmt_f64(m),
            fmt_f64(s),
            u8::from(m < LOW_CONFIDENCE_F1).to_string(),
        ])
    });
    out.write_rows(
        "cv_summary.csv",
        "series",
        &["week", "mean_f1", "sd_f1", "low_confidence"],
        rows.collect::<Vec<_>>(),
    )
}

fn write_validation(
    cfg: &RunConfig,
    outcomes: &[WeekOutcome],
    out: &mut ArtifactWriter,
) -> Result<Vec<ValidationReport>, PipelineError> {
    let Some(external) = &cfg.external else {
        return Ok(Vec::new());
    };
    let mut reports = Vec::new();
    for o in outcomes {
        match validate_external(&o.vhb, external, o.week) {
            Ok(r) => reports.push(r),
            Err(PipelineError::InsufficientOverlap(n)) => {
                log::warn!("week {}: only {n} counties overlap the external estimates", o.week)
            }
            Err(e) => return Err(e),
        }
    }
    let rows = reports
        .iter()
        .map(|r| vec![r.week.to_string(), r.n.to_string(), fmt_f64(r.r)]);
    out.write_rows(
        "validation.csv",
        "validate",
        &["week", "n_counties", "pearson_r"],
        rows.collect::<Vec<_>>(),
    )?;
    let scatter = reports.iter().flat_map(|r| {
        r.scatter
            .iter()
            .map(|(c, v, e)| vec![r.week.to_string(), c.to_string(), fmt_f64(*v), fmt_f64(*e)])
    });
    out.write_rows(
        "validation_scatter.csv",
        "validate",
        &["week", "fips", "vhb", "external"],
        scatter.collect::<Vec<_>>(),
    )?;
    Ok(reports)
}
