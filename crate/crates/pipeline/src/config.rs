//! Run configuration: a single JSON document. Relative paths resolve against
//! the directory holding the document.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use vhb_core::forest::ForestParams;
use vhb_core::hesitancy::Aggregation;
use vhb_core::text::Prior;

use crate::error::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub vaccination: PathBuf,
    #[serde(default)]
    pub feature_files: Vec<PathBuf>,
    pub adjacency: PathBuf,
    #[serde(default)]
    pub population: Option<PathBuf>,
    #[serde(default)]
    pub external: Option<PathBuf>,
    #[serde(default)]
    pub geojson: Option<PathBuf>,
    #[serde(default)]
    pub text: Option<TextConfig>,
    pub output_dir: PathBuf,

    #[serde(default = "default_lag")]
    pub lag: i64,
    /// First and last analysis week, inclusive.
    #[serde(default = "default_window")]
    pub window: (u32, u32),
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default)]
    pub metric_mode: MetricMode,
    #[serde(default)]
    pub breaks_mode: BreaksMode,
    #[serde(default)]
    pub aggregation: Aggregation,
    #[serde(default = "default_threshold")]
    pub collinearity_threshold: f64,
    #[serde(default)]
    pub forest: ForestConfig,
    #[serde(default = "default_folds")]
    pub cv_folds: usize,
    #[serde(default = "default_repeats")]
    pub permutation_repeats: usize,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    /// Export SHAP values for every class instead of the predicted one only.
    #[serde(default)]
    pub shap_all_classes: bool,
    #[serde(default)]
    pub pca_groups: Vec<PcaGroup>,
    /// Features whose weekly rank is tracked; empty tracks all.
    #[serde(default)]
    pub tracked_features: Vec<String>,
    #[serde(default)]
    pub pad_short_fips: bool,
    pub seeds: Seeds,
}

fn default_lag() -> i64 {
    1
}
fn default_window() -> (u32, u32) {
    vhb_core::county::DEFAULT_WINDOW
}
fn default_k() -> usize {
    5
}
fn default_threshold() -> f64 {
    0.7
}
fn default_folds() -> usize {
    5
}
fn default_repeats() -> usize {
    10
}
fn default_top_n() -> usize {
    15
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricMode {
    /// Carry the running maximum forward so reporting dips cannot raise VHb above 1.
    #[default]
    Monotone,
    Raw,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum BreaksMode {
    /// Natural breaks recomputed from each week's values.
    #[default]
    Recompute,
    /// Boundaries computed once at `week` and reused for every week.
    Frozen { week: u32 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestConfig {
    #[serde(default = "default_trees")]
    pub n_trees: usize,
    #[serde(default)]
    pub max_depth: Option<usize>,
    #[serde(default = "default_min_leaf")]
    pub min_leaf: usize,
    #[serde(default)]
    pub n_features_per_split: Option<usize>,
    #[serde(default)]
    pub balanced_bootstrap: bool,
}

fn default_trees() -> usize {
    500
}
fn default_min_leaf() -> usize {
    1
}

impl Default for ForestConfig {
    fn default() -> Self {
        Self {
            n_trees: default_trees(),
            max_depth: None,
            min_leaf: default_min_leaf(),
            n_features_per_split: None,
            balanced_bootstrap: false,
        }
    }
}

impl ForestConfig {
    pub fn params(&self, seed: u64) -> ForestParams {
        ForestParams {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            n_features_per_split: self.n_features_per_split,
            balanced_bootstrap: self.balanced_bootstrap,
            seed,
        }
    }
}

/// Columns replaced by their leading principal components.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PcaGroup {
    /// Output columns are named `<name>_pc1`, `<name>_pc2`, ...
    pub name: String,
    pub fields: Vec<String>,
    /// Keep the fewest components reaching this explained-variance ratio.
    pub variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    pub tweets: PathBuf,
    #[serde(default)]
    pub tones: Option<PathBuf>,
    /// `token<TAB>valence`; the bundled lexicon when absent.
    #[serde(default)]
    pub lexicon: Option<PathBuf>,
    #[serde(default = "default_ks")]
    pub k_grid: Vec<usize>,
    #[serde(default = "default_prior_grid")]
    pub alpha_grid: Vec<Prior>,
    #[serde(default = "default_prior_grid")]
    pub beta_grid: Vec<Prior>,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_top_m")]
    pub top_m: usize,
    /// Minimum count for a bigram or trigram to be merged into one token.
    #[serde(default = "default_ngram_min")]
    pub ngram_min_count: usize,
    #[serde(default = "default_engagement")]
    pub engagement_scale: f64,
    /// Average sentiment per dominant topic; false gives one all-tweets column.
    #[serde(default = "default_true")]
    pub per_topic: bool,
}

fn default_ks() -> Vec<usize> {
    vec![2, 3, 4]
}
fn default_prior_grid() -> Vec<Prior> {
    vec![Prior::Named(vhb_core::text::PriorName::Symmetric)]
}
fn default_iterations() -> usize {
    100
}
fn default_top_m() -> usize {
    10
}
fn default_ngram_min() -> usize {
    20
}
fn default_engagement() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

/// Every stochastic stage draws from one of these.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub forest: u64,
    pub permutation: u64,
    #[serde(default)]
    pub lda: Option<u64>,
}

impl RunConfig {
    /// Reads and validates a configuration, resolving relative paths.
    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve(base);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.vaccination);
        self.feature_files.iter_mut().for_each(fix);
        fix(&mut self.adjacency);
        fix(&mut self.output_dir);
        for p in [&mut self.population, &mut self.external, &mut self.geojson]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        if let Some(t) = &mut self.text {
            fix(&mut t.tweets);
            for p in [&mut t.tones, &mut t.lexicon].into_iter().flatten() {
                fix(p);
            }
        }
    }

    /// Checks parameter ranges and that every referenced input exists.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.lag < 1 {
            return bad(format!("lag must be at least 1, got {}", self.lag));
        }
        let (lo, hi) = self.window;
        if lo < 1 || hi > 53 || lo > hi {
            return bad(format!("window {lo}..{hi} must satisfy 1 <= lo <= hi <= 53"));
        }
        if self.k < 2 {
            return bad(format!("k must be at least 2, got {}", self.k));
        }
        if !(0.0..=1.0).contains(&self.collinearity_threshold) {
            return bad("collinearity_threshold must be within [0, 1]".into());
        }
        if let BreaksMode::Frozen { week } = self.breaks_mode {
            if week < lo || week > hi {
                return bad(format!("frozen breaks week {week} lies outside the window"));
            }
        }
        for g in &self.pca_groups {
            if g.fields.len() < 2 || !(0.0..=1.0).contains(&g.variance) || g.variance == 0.0 {
                return bad(format!(
                    "PCA group {:?} needs at least 2 fields and a variance in (0, 1]",
                    g.name
                ));
            }
        }
        if self.aggregation == Aggregation::Population && self.population.is_none() {
            return bad("population-weighted aggregation needs a population file".into());
        }
        if self.text.is_some() && self.seeds.lda.is_none() {
            return bad("seeds.lda is required when text inputs are configured".into());
        }
        let mut inputs: Vec<&Path> = vec![&self.vaccination, &self.adjacency];
        inputs.extend(self.feature_files.iter().map(PathBuf::as_path));
        inputs.extend(
            [&self.population, &self.external, &self.geojson]
                .into_iter()
                .flatten()
                .map(PathBuf::as_path),
        );
        if let Some(t) = &self.text {
            inputs.push(&t.tweets);
            inputs.extend([&t.tones, &t.lexicon].into_iter().flatten().map(PathBuf::as_path));
        }
        for p in inputs {
            if !p.is_file() {
                return bad(format!("input file {} does not exist", p.display()));
            }
        }
        Ok(())
    }

    pub fn weeks(&self) -> impl Iterator<Item = u32> {
        self.window.0..=self.window.1
    }

    /// SHA-256 of the canonical JSON form of the configuration with paths
    /// made relative to the output directory's parent, so that moving a
    /// run directory does not change its hash.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(&self.portable()).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn portable(&self) -> RunConfig {
        let mut c = self.clone();
        let root = self.output_dir.parent().map(Path::to_path_buf).unwrap_or_default();
        let rel = |p: &mut PathBuf| {
            if let Ok(r) = p.strip_prefix(&root) {
                *p = r.to_path_buf();
            }
        };
        rel(&mut c.vaccination);
        c.feature_files.iter_mut().for_each(rel);
        rel(&mut c.adjacency);
        rel(&mut c.output_dir);
        for p in [&mut c.population, &mut c.external, &mut c.geojson]
            .into_iter()
            .flatten()
        {
            rel(p);
        }
        if let Some(t) = &mut c.text {
            rel(&mut t.tweets);
            for p in [&mut t.tones, &mut t.lexicon].into_iter().flatten() {
                rel(p);
            }
        }
        c
    }
}
