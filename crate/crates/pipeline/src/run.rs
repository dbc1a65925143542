//! The weekly stage chain.
//!
//! ingest -> impute -> metric -> breaks -> labels -> multicollinearity filter
//! -> train -> cross validation -> permutation -> SHAP -> profiles.
//!
//! Every artifact carries the week in its file name. With
//! [`RunOptions::reuse`], upstream artifacts already present in the output
//! directory are read back instead of recomputed; floats are written in
//! shortest round-trip form, so downstream stages reproduce the same bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use vhb_core::attribution::{
    cluster_shap_profile, global_shap_importance, permutation_importance, rank_by_score, tree_shap, ShapTensor,
    LOW_CONFIDENCE_F1,
};
use vhb_core::breaks::{
    assign_clusters, gvf_curve, jenks_breaks, read_assignment_csv, write_assignment_csv, BreaksResult,
    ClusterAssignment, ClusterLabel,
};
use vhb_core::county::{
    impute_missing, load_panel, monotonicize, CountyId, CountyPanel, FeatureKind, FeatureManifest, FeatureSpec,
    FeatureTable, ImputedCell, LoadOptions, MedianFill, RejectedRecord, VaccinationSeries, WeekIndex,
};
use vhb_core::forest::{cross_validate, train_forest, Forest};
use vhb_core::hesitancy::{self, compute_delta, HesitancySeries, Window};
use vhb_core::numerics::{fit_pca, multicollinearity_filter, pearson_matrix};
use vhb_core::rng::derive_seed;
use vhb_core::Matrix;

use crate::artifacts::{fmt_f64, week_tag, ArtifactWriter};
use crate::config::{BreaksMode, MetricMode, RunConfig};
use crate::error::PipelineError;
use crate::text_stage::{self, TEXT_FEATURES};

/// Stages in execution order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Ingest,
    Metric,
    Breaks,
    Filter,
    Train,
    Cv,
    Permutation,
    Shap,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Read upstream artifacts (features, metric, clusters, filter, forest)
    /// from the output directory when present.
    pub reuse: bool,
    /// Last stage to execute.
    pub stop_after: Option<Stage>,
}

impl RunOptions {
    fn runs(&self, stage: Stage) -> bool {
        self.stop_after.is_none_or(|s| stage <= s)
    }
}

/// What a finished week hands to the series aggregation.
#[derive(Clone, Debug, PartialEq)]
pub struct WeekOutcome {
    pub week: u32,
    pub vhb: BTreeMap<CountyId, f64>,
    pub clusters: Option<ClusterAssignment>,
    pub mean_f1: Option<f64>,
    pub sd_f1: Option<f64>,
    /// Feature names by decreasing mean |SHAP| (predicted class).
    pub shap_ranking: Option<Vec<String>>,
    pub permutation_ranking: Option<Vec<String>>,
    /// Per predicted cluster label, features by decreasing mean |SHAP|.
    pub cluster_rankings: BTreeMap<String, Vec<String>>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct WeekManifest<'a> {
    week: u32,
    config_hash: String,
    crate_version: &'static str,
    stages: Vec<Stage>,
    seeds: WeekSeeds,
    artifacts: &'a BTreeMap<String, String>,
}

#[derive(Serialize)]
struct WeekSeeds {
    forest: u64,
    permutation: u64,
}

#[derive(Serialize)]
struct IngestReport<'a> {
    week: u32,
    n_counties: usize,
    features: Vec<String>,
    rejected: &'a [RejectedRecord],
    imputed_vaccination: &'a [ImputedCell],
    median_fills: &'a [MedianFill],
    dropped_features: &'a [String],
    pca: Vec<PcaReport>,
    text_features: Vec<String>,
}

#[derive(Serialize)]
struct PcaReport {
    group: String,
    fields: Vec<String>,
    dropped_constant_fields: Vec<String>,
    components: Vec<String>,
    explained_variance_ratio: Vec<f64>,
    retained_ratio: f64,
}

#[derive(Serialize, Deserialize)]
struct BreaksArtifact {
    week: u32,
    mode: String,
    /// Week whose values fixed the boundaries.
    reference_week: u32,
    breaks: BreaksResult,
    clamped: Vec<CountyId>,
    gvf_curve: Vec<(usize, f64)>,
}

#[derive(Serialize, Deserialize)]
struct FilterArtifact {
    week: u32,
    threshold: f64,
    zero_variance: Vec<String>,
    kept: Vec<String>,
    dropped: Vec<DroppedRecord>,
}

#[derive(Serialize, Deserialize)]
struct DroppedRecord {
    name: String,
    partner: String,
    r: f64,
    mean_abs_r: f64,
}

#[derive(Serialize)]
struct CvArtifact<'a> {
    week: u32,
    n_folds: usize,
    fold_f1: &'a [f64],
    mean_f1: f64,
    sd_f1: f64,
    low_confidence: bool,
    confusion_counts: &'a [Vec<usize>],
    warnings: &'a [String],
}

/// Seed of the weekly forest (training and cross validation).
pub fn forest_seed(cfg: &RunConfig, week: u32) -> u64 {
    derive_seed(cfg.seeds.forest, &[u64::from(week)])
}

pub fn permutation_seed(cfg: &RunConfig, week: u32) -> u64 {
    derive_seed(cfg.seeds.permutation, &[u64::from(week)])
}

pub fn class_names(k: usize) -> Vec<String> {
    (0..k).map(|i| ClusterLabel::from_index(i).to_string()).collect()
}

fn stage_err(stage: &'static str) -> impl Fn(String) -> PipelineError {
    move |m| PipelineError::Stage { stage, message: m }
}

/// Imputed panel plus what loading and imputation reported.
struct LoadedPanel {
    panel: CountyPanel,
    imputed: Vec<ImputedCell>,
}

pub(crate) fn load_imputed_panel(
    cfg: &RunConfig,
    feature_files: &[std::path::PathBuf],
    week: WeekIndex,
) -> Result<(CountyPanel, Vec<ImputedCell>), PipelineError> {
    let opts = LoadOptions {
        pad_short_fips: cfg.pad_short_fips,
    };
    let (panel, adjacency) = load_panel(&cfg.vaccination, feature_files, &cfg.adjacency, week, &opts)
        .map_err(|e| PipelineError::stage("ingest", e))?;
    for r in &panel.rejected {
        log::warn!("{}:{}: rejected: {}", r.source, r.line, r.reason);
    }
    if !adjacency.is_symmetric() {
        return Err(PipelineError::stage("ingest", "adjacency is not symmetric"));
    }
    let (imputed, cells) = impute_missing(&panel, &adjacency).map_err(|e| PipelineError::stage("impute", e))?;
    Ok((imputed, cells))
}

/// Cumulative vaccination series as used by the metric (running maximum in
/// monotone mode).
pub(crate) fn metric_series(panel: &CountyPanel, mode: MetricMode) -> Vec<VaccinationSeries> {
    panel
        .all_series()
        .into_iter()
        .map(|s| match mode {
            MetricMode::Monotone => monotonicize(&s).series,
            MetricMode::Raw => s,
        })
        .collect()
}

pub(crate) fn hesitancy_at(
    series: &[VaccinationSeries],
    lag: i64,
    week: WeekIndex,
) -> Result<Vec<HesitancySeries>, PipelineError> {
    let window = Window::new(week.get(), week.get()).map_err(|e| PipelineError::stage("metric", e))?;
    let mut out = Vec::with_capacity(series.len());
    for s in series {
        match compute_delta(s, lag, window) {
            Ok(h) => out.push(h),
            Err(hesitancy::MetricError::EmptySeries(c)) => log::warn!("week {week}: county {c} has no data"),
            Err(e) => return Err(PipelineError::stage("metric", e)),
        }
    }
    Ok(out)
}

pub(crate) fn read_population(path: &Path) -> Result<BTreeMap<CountyId, f64>, PipelineError> {
    let err = |e: csv::Error| PipelineError::stage("ingest", format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(err)?;
    let mut out = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(err)?;
        let (Some(f), Some(p)) = (rec.get(0), rec.get(1)) else {
            continue;
        };
        match (CountyId::parse(f), p.trim().parse::<f64>()) {
            (Ok(c), Ok(p)) if p.is_finite() && p >= 0.0 => {
                out.insert(c, p);
            }
            _ => log::warn!("{}:{}: rejected population row", path.display(), n + 2),
        }
    }
    Ok(out)
}

struct WeekRun<'a> {
    cfg: &'a RunConfig,
    week: WeekIndex,
    tag: String,
    opts: RunOptions,
    out: ArtifactWriter,
    loaded: Option<LoadedPanel>,
    stages: Vec<Stage>,
}

/// Runs the stage chain for one week.
pub fn run_week(cfg: &RunConfig, week: u32, opts: RunOptions) -> Result<WeekOutcome, PipelineError> {
    let (lo, hi) = cfg.window;
    if week < lo || week > hi {
        return Err(PipelineError::WeekOutsideWindow { week, lo, hi });
    }
    let week_idx = WeekIndex::new(week).map_err(|e| PipelineError::Config(e.to_string()))?;
    if cfg.text.is_some() && !cfg.output_dir.join(TEXT_FEATURES).is_file() {
        text_stage::run_text(cfg)?;
    }
    let mut run = WeekRun {
        cfg,
        week: week_idx,
        tag: week_tag(week),
        opts,
        out: ArtifactWriter::new(&cfg.output_dir)?,
        loaded: None,
        stages: Vec::new(),
    };
    let outcome = run.execute()?;
    let hashes = run.out.hashes().clone();
    let manifest = WeekManifest {
        week,
        config_hash: cfg.hash(),
        crate_version: env!("CARGO_PKG_VERSION"),
        stages: run.stages.clone(),
        seeds: WeekSeeds {
            forest: forest_seed(cfg, week),
            permutation: permutation_seed(cfg, week),
        },
        artifacts: &hashes,
    };
    let name = format!("run_manifest_{}.json", run.tag);
    run.out.write_json(&name, &manifest)?;
    Ok(WeekOutcome {
        artifacts: run.out.into_hashes(),
        ..outcome
    })
}

impl WeekRun<'_> {
    fn name(&self, stem: &str, ext: &str) -> String {
        format!("{stem}_{}.{ext}", self.tag)
    }

    fn reusable(&self, names: &[&str]) -> bool {
        self.opts.reuse && names.iter().all(|n| self.out.exists(n))
    }

    fn record_all(&mut self, names: &[&str]) -> Result<(), PipelineError> {
        for n in names {
            self.out.record_existing(n)?;
        }
        Ok(())
    }

    fn loaded(&mut self) -> Result<&LoadedPanel, PipelineError> {
        if self.loaded.is_none() {
            let (panel, imputed) = load_imputed_panel(self.cfg, &self.cfg.feature_files, self.week)?;
            self.loaded = Some(LoadedPanel { panel, imputed });
        }
        Ok(self.loaded.as_ref().expect("just loaded"))
    }

    fn done(&mut self, stage: Stage, clock: &mut Instant) {
        log::info!("week {}: {stage:?} finished in {:.2?}", self.week, clock.elapsed());
        self.stages.push(stage);
        *clock = Instant::now();
    }

    fn execute(&mut self) -> Result<WeekOutcome, PipelineError> {
        let mut outcome = WeekOutcome {
            week: self.week.get(),
            vhb: BTreeMap::new(),
            clusters: None,
            mean_f1: None,
            sd_f1: None,
            shap_ranking: None,
            permutation_ranking: None,
            cluster_rankings: BTreeMap::new(),
            artifacts: BTreeMap::new(),
        };
        let mut clock = Instant::now();

        let table = self.ingest()?;
        self.done(Stage::Ingest, &mut clock);
        if !self.opts.runs(Stage::Metric) {
            return Ok(outcome);
        }

        outcome.vhb = self.metric()?;
        self.done(Stage::Metric, &mut clock);
        if !self.opts.runs(Stage::Breaks) {
            return Ok(outcome);
        }

        let clusters = self.breaks(&outcome.vhb)?;
        self.done(Stage::Breaks, &mut clock);
        outcome.clusters = Some(clusters.clone());
        if !self.opts.runs(Stage::Filter) {
            return Ok(outcome);
        }

        // labels: counties with both a feature row and a cluster.
        let labeled: Vec<CountyId> = table
            .counties
            .iter()
            .filter(|c| clusters.labels.contains_key(*c))
            .cloned()
            .collect();
        let unlabeled = table.counties.len() - labeled.len();
        if unlabeled > 0 {
            log::warn!(
                "week {}: {unlabeled} counties without a defined VHb are excluded",
                self.week
            );
        }
        let table = table.select_counties(&labeled);
        let y: Vec<usize> = table.counties.iter().map(|c| clusters.labels[c].index()).collect();

        let kept = self.filter(&table)?;
        self.done(Stage::Filter, &mut clock);
        let table = table.retain_features(&kept.iter().cloned().collect());
        let names = table.feature_names();
        if !self.opts.runs(Stage::Train) {
            return Ok(outcome);
        }

        let forest = self.train(&table.values, &y, &names)?;
        self.done(Stage::Train, &mut clock);
        if !self.opts.runs(Stage::Cv) {
            return Ok(outcome);
        }

        let (mean, sd) = self.cv(&table.values, &y, &names)?;
        self.done(Stage::Cv, &mut clock);
        outcome.mean_f1 = Some(mean);
        outcome.sd_f1 = Some(sd);
        if !self.opts.runs(Stage::Permutation) {
            return Ok(outcome);
        }

        outcome.permutation_ranking = Some(self.permutation(&forest, &table.values, &y)?);
        self.done(Stage::Permutation, &mut clock);
        if !self.opts.runs(Stage::Shap) {
            return Ok(outcome);
        }

        let (global, per_cluster) = self.shap(&forest, &table, &outcome.vhb)?;
        self.done(Stage::Shap, &mut clock);
        outcome.shap_ranking = Some(global);
        outcome.cluster_rankings = per_cluster;
        Ok(outcome)
    }

    fn ingest(&mut self) -> Result<FeatureTable, PipelineError> {
        let csv_name = self.name("features", "csv");
        let manifest_name = self.name("features", "manifest.json");
        let report_name = self.name("ingest", "json");
        if self.reusable(&[&csv_name, &manifest_name, &report_name]) {
            let manifest =
                FeatureManifest::load(&self.out.path(&manifest_name)).map_err(|e| PipelineError::stage("ingest", e))?;
            let bytes =
                std::fs::read(self.out.path(&csv_name)).map_err(|e| PipelineError::io(&self.out.path(&csv_name), e))?;
            let table = FeatureTable::read_csv(bytes.as_slice(), &manifest.features, self.week, &csv_name)
                .map_err(|e| PipelineError::stage("ingest", e))?;
            if table.values.has_non_finite() {
                return Err(PipelineError::stage(
                    "ingest",
                    format!("{csv_name} holds non-numeric cells"),
                ));
            }
            self.record_all(&[&csv_name, &manifest_name, &report_name])?;
            return Ok(table);
        }

        let cfg = self.cfg;
        let week = self.week;
        let loaded = self.loaded()?;
        let (table, fill) = loaded
            .panel
            .feature_table()
            .map_err(|e| PipelineError::stage("ingest", e))?;
        let (table, pca) = apply_pca_groups(table, cfg)?;
        let (table, text_cols) = join_text_features(table, cfg)?;
        let report = IngestReport {
            week: week.get(),
            n_counties: table.counties.len(),
            features: table.feature_names(),
            rejected: &loaded.panel.rejected,
            imputed_vaccination: &loaded.imputed,
            median_fills: &fill.filled,
            dropped_features: &fill.dropped,
            pca,
            text_features: text_cols,
        };
        let report = serde_json::to_value(&report).map_err(|e| PipelineError::stage("ingest", e))?;
        let manifest = FeatureManifest {
            snapshot_week: Some(week.get()),
            features: table.features.clone(),
        };
        self.out.write_csv(&csv_name, "ingest", |b| table.write_csv(b))?;
        self.out.write_json(&manifest_name, &manifest)?;
        self.out.write_json(&report_name, &report)?;
        Ok(table)
    }

    fn metric(&mut self) -> Result<BTreeMap<CountyId, f64>, PipelineError> {
        let name = self.name("vhb", "csv");
        let week = self.week;
        if self.reusable(&[&name]) {
            let file =
                std::fs::File::open(self.out.path(&name)).map_err(|e| PipelineError::io(&self.out.path(&name), e))?;
            let all = hesitancy::read_csv(file).map_err(|e| PipelineError::stage("metric", e))?;
            self.record_all(&[&name])?;
            return Ok(all
                .into_iter()
                .filter(|((_, w), _)| *w == week)
                .map(|((c, _), v)| (c, v))
                .collect());
        }
        let (lag, mode) = (self.cfg.lag, self.cfg.metric_mode);
        let series = metric_series(&self.loaded()?.panel, mode);
        let all = hesitancy_at(&series, lag, week)?;
        let window = Window::new(week.get(), week.get()).map_err(|e| PipelineError::stage("metric", e))?;
        self.out
            .write_csv(&name, "metric", |b| hesitancy::write_csv(b, &all, window, None))?;
        Ok(all
            .iter()
            .filter_map(|h| h.get(week).map(|v| (h.county.clone(), v)))
            .collect())
    }

    fn breaks(&mut self, vhb: &BTreeMap<CountyId, f64>) -> Result<ClusterAssignment, PipelineError> {
        let json = self.name("breaks", "json");
        let csv_name = self.name("clusters", "csv");
        let stats = self.name("cluster_stats", "csv");
        if self.reusable(&[&json, &csv_name, &stats]) {
            let file = std::fs::File::open(self.out.path(&csv_name))
                .map_err(|e| PipelineError::io(&self.out.path(&csv_name), e))?;
            let (_, assignment) = read_assignment_csv(file).map_err(|e| PipelineError::stage("breaks", e))?;
            self.record_all(&[&json, &csv_name, &stats])?;
            return Ok(assignment);
        }
        let cfg = self.cfg;
        let k = cfg.k;
        let (mode, reference_week, reference): (&str, u32, Vec<f64>) = match cfg.breaks_mode {
            BreaksMode::Recompute => ("recompute", self.week.get(), vhb.values().copied().collect()),
            BreaksMode::Frozen { week: fw } => {
                let fw_idx = WeekIndex::new(fw).map_err(|e| PipelineError::stage("breaks", e))?;
                let series = metric_series(&self.loaded()?.panel, cfg.metric_mode);
                let at = hesitancy_at(&series, cfg.lag, fw_idx)?;
                ("frozen", fw, at.iter().filter_map(|h| h.get(fw_idx)).collect())
            }
        };
        if reference.is_empty() {
            return Err(PipelineError::stage(
                "breaks",
                format!("no county has a defined VHb in week {reference_week}"),
            ));
        }
        let result = jenks_breaks(&reference, k).map_err(|e| PipelineError::stage("breaks", e))?;
        let mut distinct = reference.clone();
        distinct.sort_by(f64::total_cmp);
        distinct.dedup();
        let curve = gvf_curve(&reference, 1, distinct.len().min(10)).map_err(|e| PipelineError::stage("breaks", e))?;
        let assignment = assign_clusters(vhb, &result);
        let artifact = BreaksArtifact {
            week: self.week.get(),
            mode: mode.to_string(),
            reference_week,
            breaks: result,
            clamped: assignment.clamped.clone(),
            gvf_curve: curve,
        };
        self.out.write_json(&json, &artifact)?;
        self.out
            .write_csv(&csv_name, "breaks", |b| write_assignment_csv(b, vhb, &assignment))?;

        // Per-cluster profile: size, mean VHb, mean cumulative vaccination.
        let week = self.week;
        let panel = &self.loaded()?.panel;
        let q: BTreeMap<CountyId, f64> = metric_series(panel, cfg.metric_mode)
            .into_iter()
            .filter_map(|s| s.q.get(&week).map(|&v| (s.county, v)))
            .collect();
        let population = match &cfg.population {
            Some(p) => Some(read_population(p)?),
            None => None,
        };
        let mut rows = Vec::new();
        for c in 0..k {
            let members: Vec<&CountyId> = assignment
                .labels
                .iter()
                .filter(|(_, l)| l.index() == c)
                .map(|(id, _)| id)
                .collect();
            let mean = |vals: Vec<f64>| {
                if vals.is_empty() {
                    String::new()
                } else {
                    fmt_f64(vals.iter().sum::<f64>() / vals.len() as f64)
                }
            };
            let pop = population
                .as_ref()
                .map(|p| members.iter().filter_map(|m| p.get(*m)).sum::<f64>());
            rows.push(vec![
                ClusterLabel::from_index(c).to_string(),
                members.len().to_string(),
                mean(members.iter().map(|m| vhb[*m]).collect()),
                mean(members.iter().filter_map(|m| q.get(*m).copied()).collect()),
                pop.map(fmt_f64).unwrap_or_default(),
            ]);
        }
        self.out.write_rows(
            &stats,
            "breaks",
            &["cluster", "n_counties", "mean_vhb", "mean_vaccinated", "population"],
            rows,
        )?;
        Ok(assignment)
    }

    fn filter(&mut self, table: &FeatureTable) -> Result<Vec<String>, PipelineError> {
        let json = self.name("filter", "json");
        let corr_name = self.name("collinearity", "csv");
        if self.reusable(&[&json, &corr_name]) {
            let text = std::fs::read_to_string(self.out.path(&json))
                .map_err(|e| PipelineError::io(&self.out.path(&json), e))?;
            let artifact: FilterArtifact =
                serde_json::from_str(&text).map_err(|e| PipelineError::stage("filter", e))?;
            self.record_all(&[&json, &corr_name])?;
            return Ok(artifact.kept);
        }
        let names = table.feature_names();
        let corr = pearson_matrix(&table.values, &names).map_err(|e| PipelineError::stage("filter", e))?;
        // Constant columns carry no signal and have undefined correlation.
        let varying: BTreeSet<String> = names
            .iter()
            .filter(|n| !corr.zero_variance.contains(n))
            .cloned()
            .collect();
        let idx: Vec<usize> = (0..names.len()).filter(|&j| varying.contains(&names[j])).collect();
        let sub = table.values.select_columns(&idx);
        let sub_names: Vec<String> = idx.iter().map(|&j| names[j].clone()).collect();
        if sub_names.is_empty() {
            return Err(PipelineError::stage("filter", "every feature is constant"));
        }
        let corr = if idx.len() == names.len() {
            corr
        } else {
            pearson_matrix(&sub, &sub_names).map_err(|e| PipelineError::stage("filter", e))?
        };
        let result = multicollinearity_filter(&corr, self.cfg.collinearity_threshold);
        let artifact = FilterArtifact {
            week: self.week.get(),
            threshold: self.cfg.collinearity_threshold,
            zero_variance: names.iter().filter(|n| !varying.contains(*n)).cloned().collect(),
            kept: result.kept.clone(),
            dropped: result
                .dropped
                .iter()
                .map(|d| DroppedRecord {
                    name: d.name.clone(),
                    partner: d.partner.clone(),
                    r: d.r,
                    mean_abs_r: d.mean_abs_r,
                })
                .collect(),
        };
        self.out.write_csv(&corr_name, "filter", |b| corr.write_csv(b))?;
        self.out.write_json(&json, &artifact)?;
        Ok(result.kept)
    }

    fn train(&mut self, x: &Matrix, y: &[usize], names: &[String]) -> Result<Forest, PipelineError> {
        let name = self.name("forest", "json");
        if self.reusable(&[&name]) {
            let text = std::fs::read_to_string(self.out.path(&name))
                .map_err(|e| PipelineError::io(&self.out.path(&name), e))?;
            let forest = Forest::from_json(&text).map_err(|e| PipelineError::stage("train", e))?;
            if forest.feature_names != names {
                return Err(PipelineError::stage(
                    "train",
                    format!("{name} was trained on different features; delete it to retrain"),
                ));
            }
            self.record_all(&[&name])?;
            return Ok(forest);
        }
        let params = self.cfg.forest.params(forest_seed(self.cfg, self.week.get()));
        let forest = train_forest(x, y, &class_names(self.cfg.k), names, &params)
            .map_err(|e| PipelineError::stage("train", e))?;
        let mut json = forest.to_json().map_err(|e| PipelineError::stage("train", e))?;
        json.push('\n');
        self.out.write_bytes(&name, json.as_bytes())?;
        Ok(forest)
    }

    fn cv(&mut self, x: &Matrix, y: &[usize], names: &[String]) -> Result<(f64, f64), PipelineError> {
        let params = self.cfg.forest.params(forest_seed(self.cfg, self.week.get()));
        let classes = class_names(self.cfg.k);
        let report = cross_validate(x, y, &classes, names, &params, self.cfg.cv_folds)
            .map_err(|e| PipelineError::stage("cv", e))?;
        for w in &report.warnings {
            log::warn!("week {}: {w}", self.week);
        }
        let artifact = CvArtifact {
            week: self.week.get(),
            n_folds: self.cfg.cv_folds,
            fold_f1: &report.fold_f1,
            mean_f1: report.mean_f1,
            sd_f1: report.sd_f1,
            low_confidence: report.mean_f1 < LOW_CONFIDENCE_F1,
            confusion_counts: &report.confusion_counts,
            warnings: &report.warnings,
        };
        self.out.write_json(&self.name("cv", "json"), &artifact)?;
        let mut header = vec!["true_cluster".to_string()];
        header.extend(classes.iter().cloned());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows = (0..classes.len()).map(|i| {
            let mut r = vec![classes[i].clone()];
            r.extend(report.confusion.row(i).iter().map(|v| fmt_f64(*v)));
            r
        });
        self.out
            .write_rows(&self.name("confusion", "csv"), "cv", &header, rows)?;
        Ok((report.mean_f1, report.sd_f1))
    }

    fn permutation(&mut self, forest: &Forest, x: &Matrix, y: &[usize]) -> Result<Vec<String>, PipelineError> {
        let report = permutation_importance(
            forest,
            x,
            y,
            self.cfg.permutation_repeats,
            permutation_seed(self.cfg, self.week.get()),
        )
        .map_err(|e| PipelineError::stage("permutation", e))?;
        let ranking = report.ranking();
        let rows = ranking.iter().enumerate().map(|(r, &f)| {
            vec![
                (r + 1).to_string(),
                report.feature_names[f].clone(),
                fmt_f64(report.importance[f]),
                fmt_f64(report.sd[f]),
            ]
        });
        let meta = self.feature_kinds();
        let rows: Vec<Vec<String>> = rows
            .map(|mut r| {
                r.push(meta.get(&r[1]).cloned().unwrap_or_default());
                r
            })
            .collect();
        self.out.write_rows(
            &self.name("permutation", "csv"),
            "permutation",
            &["rank", "feature", "importance", "sd", "kind"],
            rows,
        )?;
        Ok(ranking.iter().map(|&f| report.feature_names[f].clone()).collect())
    }

    /// Feature name -> "static"/"dynamic", from the features manifest.
    fn feature_kinds(&self) -> BTreeMap<String, String> {
        FeatureManifest::load(&self.out.path(&self.name("features", "manifest.json")))
            .map(|m| {
                m.features
                    .into_iter()
                    .map(|f| {
                        let k = match f.kind {
                            FeatureKind::Static => "static",
                            FeatureKind::Dynamic => "dynamic",
                        };
                        (f.name, k.to_string())
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    #[allow(clippy::type_complexity)]
    fn shap(
        &mut self,
        forest: &Forest,
        table: &FeatureTable,
        vhb: &BTreeMap<CountyId, f64>,
    ) -> Result<(Vec<String>, BTreeMap<String, Vec<String>>), PipelineError> {
        let x = &table.values;
        let names = table.feature_names();
        let classes = class_names(self.cfg.k);
        let shap = tree_shap(forest, x).map_err(|e| PipelineError::stage("shap", e))?;
        let predicted = forest.predict_matrix(x).map_err(|e| PipelineError::stage("shap", e))?;

        self.write_shap_values(&shap, table, &predicted, &classes)?;
        let base_rows = classes
            .iter()
            .enumerate()
            .map(|(c, n)| vec![n.clone(), fmt_f64(shap.base_values[c])]);
        self.out.write_rows(
            &self.name("shap_base", "csv"),
            "shap",
            &["cluster", "base_value"],
            base_rows,
        )?;

        let global = global_shap_importance(&shap, &predicted);
        let order = rank_by_score(&global);
        let kinds = self.feature_kinds();
        let rows = order.iter().enumerate().map(|(r, &f)| {
            vec![
                (r + 1).to_string(),
                names[f].clone(),
                fmt_f64(global[f]),
                kinds.get(&names[f]).cloned().unwrap_or_default(),
            ]
        });
        self.out.write_rows(
            &self.name("importance", "csv"),
            "shap",
            &["rank", "feature", "mean_abs_shap", "kind"],
            rows,
        )?;

        let (profiles, warnings) = cluster_shap_profile(&shap, x, &predicted, &names, names.len())
            .map_err(|e| PipelineError::stage("profiles", e))?;
        for w in warnings {
            log::warn!("week {}: {w}", self.week);
        }
        let top_n = self.cfg.top_n;
        let mut rows = Vec::new();
        let mut per_cluster = BTreeMap::new();
        for p in &profiles {
            per_cluster.insert(classes[p.class].clone(), p.top.iter().map(|s| s.name.clone()).collect());
            for (r, s) in p.top.iter().take(top_n).enumerate() {
                rows.push(vec![
                    classes[p.class].clone(),
                    p.n_instances.to_string(),
                    (r + 1).to_string(),
                    s.name.clone(),
                    fmt_f64(s.mean_abs),
                    fmt_f64(s.mean_signed),
                    fmt_f64(s.mean_value),
                ]);
            }
        }
        self.out.write_rows(
            &self.name("profiles", "csv"),
            "profiles",
            &[
                "cluster",
                "n_instances",
                "rank",
                "feature",
                "mean_abs_shap",
                "mean_shap",
                "mean_value",
            ],
            rows,
        )?;

        self.write_cluster_table(table, &predicted, &order, vhb, &classes)?;
        Ok((order.iter().map(|&f| names[f].clone()).collect(), per_cluster))
    }

    fn write_shap_values(
        &mut self,
        shap: &ShapTensor,
        table: &FeatureTable,
        predicted: &[usize],
        classes: &[String],
    ) -> Result<(), PipelineError> {
        let mut header = vec!["fips".to_string(), "cluster".to_string()];
        header.extend(table.feature_names());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        let all = self.cfg.shap_all_classes;
        let mut rows = Vec::new();
        for (i, c) in table.counties.iter().enumerate() {
            let targets: Vec<usize> = if all {
                (0..classes.len()).collect()
            } else {
                vec![predicted[i]]
            };
            for k in targets {
                let mut r = vec![c.to_string(), classes[k].clone()];
                r.extend((0..shap.n_features).map(|f| fmt_f64(shap.get(i, f, k))));
                rows.push(r);
            }
        }
        self.out.write_rows(&self.name("shap", "csv"), "shap", &header, rows)
    }

    /// Per predicted cluster: size, population, mean VHb and the mean value
    /// of the globally top-ranked features.
    fn write_cluster_table(
        &mut self,
        table: &FeatureTable,
        predicted: &[usize],
        order: &[usize],
        vhb: &BTreeMap<CountyId, f64>,
        classes: &[String],
    ) -> Result<(), PipelineError> {
        let k = classes.len();
        let members: Vec<Vec<usize>> = (0..k)
            .map(|c| (0..predicted.len()).filter(|&i| predicted[i] == c).collect())
            .collect();
        let mean_of = |vals: &dyn Fn(usize) -> Option<f64>, m: &[usize]| -> String {
            let v: Vec<f64> = m.iter().filter_map(|&i| vals(i)).collect();
            if v.is_empty() {
                String::new()
            } else {
                fmt_f64(v.iter().sum::<f64>() / v.len() as f64)
            }
        };
        let mut rows = Vec::new();
        let mut row = vec!["n_counties".to_string()];
        row.extend(members.iter().map(|m| m.len().to_string()));
        rows.push(row);
        if let Some(p) = &self.cfg.population {
            let pop = read_population(p)?;
            let mut row = vec!["total_population".to_string()];
            row.extend(
                members
                    .iter()
                    .map(|m| fmt_f64(m.iter().filter_map(|&i| pop.get(&table.counties[i])).sum::<f64>())),
            );
            rows.push(row);
        }
        let mut row = vec!["mean_vhb".to_string()];
        row.extend(
            members
                .iter()
                .map(|m| mean_of(&|i| vhb.get(&table.counties[i]).copied(), m)),
        );
        rows.push(row);
        let names = table.feature_names();
        for &f in order.iter().take(self.cfg.top_n) {
            let mut row = vec![names[f].clone()];
            row.extend(members.iter().map(|m| mean_of(&|i| Some(table.values[(i, f)]), m)));
            rows.push(row);
        }
        let mut header = vec!["row".to_string()];
        header.extend(classes.iter().cloned());
        let header: Vec<&str> = header.iter().map(String::as_str).collect();
        self.out
            .write_rows(&self.name("cluster_features", "csv"), "profiles", &header, rows)
    }
}

/// Replaces each configured field group by its leading principal components.
fn apply_pca_groups(table: FeatureTable, cfg: &RunConfig) -> Result<(FeatureTable, Vec<PcaReport>), PipelineError> {
    let err = stage_err("ingest");
    let mut table = table;
    let mut reports = Vec::new();
    for g in &cfg.pca_groups {
        let idx: Vec<usize> = g
            .fields
            .iter()
            .map(|f| {
                table.column_index(f).ok_or_else(|| {
                    err(format!(
                        "PCA group {:?}: field {f:?} is not in the feature table",
                        g.name
                    ))
                })
            })
            .collect::<Result<_, _>>()?;
        let sub = table.values.select_columns(&idx);
        let model = fit_pca(&sub, g.variance).map_err(|e| err(format!("PCA group {:?}: {e}", g.name)))?;
        let scores = model.transform(&sub).map_err(|e| err(e.to_string()))?;
        let kind = if idx.iter().any(|&j| table.features[j].kind == FeatureKind::Dynamic) {
            FeatureKind::Dynamic
        } else {
            FeatureKind::Static
        };
        let components: Vec<String> = (1..=model.n_components())
            .map(|c| format!("{}_pc{c}", g.name))
            .collect();

        let keep: Vec<usize> = (0..table.features.len()).filter(|j| !idx.contains(j)).collect();
        let mut features: Vec<FeatureSpec> = keep.iter().map(|&j| table.features[j].clone()).collect();
        features.extend(components.iter().map(|n| FeatureSpec {
            name: n.clone(),
            kind,
            source: format!("pca:{}", g.name),
        }));
        let rest = table.values.select_columns(&keep);
        let mut data = Vec::with_capacity(table.counties.len() * features.len());
        for i in 0..table.counties.len() {
            data.extend_from_slice(rest.row(i));
            data.extend_from_slice(scores.row(i));
        }
        reports.push(PcaReport {
            group: g.name.clone(),
            fields: g.fields.clone(),
            dropped_constant_fields: model.dropped_fields.iter().map(|&j| g.fields[j].clone()).collect(),
            components,
            explained_variance_ratio: model.explained_variance_ratio.clone(),
            retained_ratio: model.retained_ratio(),
        });
        table = FeatureTable {
            values: Matrix::from_vec(table.counties.len(), features.len(), data),
            counties: table.counties,
            features,
            week: table.week,
        };
    }
    Ok((table, reports))
}

/// Appends the county text features written by the text stage. Counties
/// without text data get the neutral value 0.
fn join_text_features(table: FeatureTable, cfg: &RunConfig) -> Result<(FeatureTable, Vec<String>), PipelineError> {
    if cfg.text.is_none() {
        return Ok((table, Vec::new()));
    }
    let path = cfg.output_dir.join(TEXT_FEATURES);
    let manifest =
        FeatureManifest::load(&FeatureManifest::sidecar_path(&path)).map_err(|e| PipelineError::stage("ingest", e))?;
    let bytes = std::fs::read(&path).map_err(|e| PipelineError::io(&path, e))?;
    let text = FeatureTable::read_csv(bytes.as_slice(), &manifest.features, table.week, TEXT_FEATURES)
        .map_err(|e| PipelineError::stage("ingest", e))?;
    let row_of: BTreeMap<&CountyId, usize> = text.counties.iter().enumerate().map(|(i, c)| (c, i)).collect();
    let d0 = table.features.len();
    let dt = text.features.len();
    let mut data = Vec::with_capacity(table.counties.len() * (d0 + dt));
    for (i, c) in table.counties.iter().enumerate() {
        data.extend_from_slice(table.values.row(i));
        match row_of.get(c) {
            Some(&r) => data.extend(text.values.row(r).iter().map(|v| if v.is_finite() { *v } else { 0.0 })),
            None => data.extend(std::iter::repeat_n(0.0, dt)),
        }
    }
    let mut features = table.features;
    for f in &text.features {
        if features.iter().any(|g| g.name == f.name) {
            return Err(PipelineError::stage(
                "ingest",
                format!("text feature {:?} clashes with an input feature", f.name),
            ));
        }
    }
    features.extend(text.features.iter().cloned());
    let names = text.feature_names();
    Ok((
        FeatureTable {
            values: Matrix::from_vec(table.counties.len(), d0 + dt, data),
            counties: table.counties,
            features,
            week: table.week,
        },
        names,
    ))
}
