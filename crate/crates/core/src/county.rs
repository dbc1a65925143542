//! Loading, fusing and imputing FIPS-keyed county datasets.
//!
//! Input files:
//!
//! * vaccination CSV: `fips,week,pct_fully_vaccinated` with fractions in `[0, 1]`;
//! * feature CSVs: `fips,<feature>,...`, each with a sidecar
//!   `<stem>.manifest.json` declaring feature kinds and the snapshot week;
//! * adjacency CSV: `fips_a,fips_b`, one undirected edge per row.
//!
//! Missing cells are explicit `None`s until an imputation pass fills them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// First and last week (inclusive) of the default analysis window.
pub const DEFAULT_WINDOW: (u32, u32) = (4, 43);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FipsError {
    #[error("empty FIPS code")]
    Empty,
    #[error("FIPS code {0:?} is not numeric")]
    NonNumeric(String),
    #[error("FIPS code {0:?} must have exactly 5 zero-padded digits")]
    WrongLength(String),
    #[error("FIPS code {0:?} has a state prefix outside 01-56")]
    StateOutOfRange(String),
}

#[derive(Debug, Error)]
pub enum PanelError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed CSV in {source_name}: {source}")]
    Csv {
        source_name: String,
        #[source]
        source: csv::Error,
    },
    #[error("{source_name}: missing required column {column:?}")]
    MissingColumn { source_name: String, column: String },
    #[error("{source_name}: duplicate row for key {key}")]
    DuplicateKey { source_name: String, key: String },
    #[error("invalid manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
    #[error("feature {0:?} is declared by more than one input")]
    DuplicateFeature(String),
    #[error("invalid week {0}: weeks run from 1 to 53")]
    InvalidWeek(u32),
    #[error("week {week}: no observed vaccination values reachable from counties {counties:?}")]
    UnresolvableImputation { week: WeekIndex, counties: Vec<CountyId> },
    #[error("feature table is empty after dropping all-missing columns")]
    NoFeatures,
    #[error("{source_name}: {reason}")]
    InvalidRecord { source_name: String, reason: String },
}

/// A validated 5-digit county FIPS code.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct CountyId(String);

impl CountyId {
    /// Parses a strict 5-digit code. Surrounding whitespace is ignored.
    pub fn parse(raw: &str) -> Result<Self, FipsError> {
        let s = raw.trim();
        if s.is_empty() {
            return Err(FipsError::Empty);
        }
        if !s.bytes().all(|b| b.is_ascii_digit()) {
            return Err(FipsError::NonNumeric(s.to_string()));
        }
        if s.len() != 5 {
            return Err(FipsError::WrongLength(s.to_string()));
        }
        let state: u8 = s[..2].parse().expect("two ascii digits");
        if !(1..=56).contains(&state) {
            return Err(FipsError::StateOutOfRange(s.to_string()));
        }
        Ok(Self(s.to_string()))
    }

    /// Like [`CountyId::parse`] but zero-pads 4-digit numeric codes first,
    /// which is how spreadsheet exports usually mangle FIPS columns.
    pub fn parse_padded(raw: &str) -> Result<Self, FipsError> {
        let s = raw.trim();
        if s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()) {
            Self::parse(&format!("0{s}"))
        } else {
            Self::parse(s)
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn state_code(&self) -> u8 {
        self.0[..2].parse().expect("validated")
    }
}

impl TryFrom<String> for CountyId {
    type Error = FipsError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        CountyId::parse(&s)
    }
}

impl From<CountyId> for String {
    fn from(c: CountyId) -> String {
        c.0
    }
}

impl fmt::Display for CountyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Week-of-2021 ordinal, 1 through 53.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct WeekIndex(u8);

impl WeekIndex {
    pub fn new(week: u32) -> Result<Self, PanelError> {
        if (1..=53).contains(&week) {
            Ok(Self(week as u8))
        } else {
            Err(PanelError::InvalidWeek(week))
        }
    }

    pub fn get(self) -> u32 {
        u32::from(self.0)
    }

    /// The week `lag` weeks earlier, if it is still a valid week.
    pub fn checked_sub(self, lag: u32) -> Option<WeekIndex> {
        self.get().checked_sub(lag).and_then(|w| WeekIndex::new(w).ok())
    }
}

impl TryFrom<u32> for WeekIndex {
    type Error = PanelError;

    fn try_from(w: u32) -> Result<Self, Self::Error> {
        WeekIndex::new(w)
    }
}

impl From<WeekIndex> for u32 {
    fn from(w: WeekIndex) -> u32 {
        w.get()
    }
}

impl fmt::Display for WeekIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Cumulative fraction of residents fully vaccinated, per week.
#[derive(Clone, Debug, PartialEq)]
pub struct VaccinationSeries {
    pub county: CountyId,
    pub q: BTreeMap<WeekIndex, f64>,
}

/// Result of [`monotonicize`].
#[derive(Clone, Debug, PartialEq)]
pub struct Monotonicized {
    pub series: VaccinationSeries,
    /// Weeks whose value was raised to the running maximum.
    pub adjusted: Vec<WeekIndex>,
}

/// Applies a running maximum in week order so cumulative uptake never
/// decreases (reporting corrections can otherwise make it dip).
pub fn monotonicize(series: &VaccinationSeries) -> Monotonicized {
    let mut running = f64::NEG_INFINITY;
    let mut adjusted = Vec::new();
    let q = series
        .q
        .iter()
        .map(|(&w, &v)| {
            if v < running {
                adjusted.push(w);
                (w, running)
            } else {
                running = v;
                (w, v)
            }
        })
        .collect();
    Monotonicized {
        series: VaccinationSeries {
            county: series.county.clone(),
            q,
        },
        adjusted,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureKind {
    Static,
    Dynamic,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub kind: FeatureKind,
    #[serde(default)]
    pub source: String,
}

/// Sidecar manifest describing one feature CSV.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureManifest {
    /// Week the dynamic values were observed. Required when any feature is dynamic.
    #[serde(default)]
    pub snapshot_week: Option<u32>,
    pub features: Vec<FeatureSpec>,
}

impl FeatureManifest {
    /// Sidecar location for a feature CSV: `dir/stem.csv` -> `dir/stem.manifest.json`.
    pub fn sidecar_path(csv_path: &Path) -> PathBuf {
        let stem = csv_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        csv_path.with_file_name(format!("{stem}.manifest.json"))
    }

    pub fn load(path: &Path) -> Result<Self, PanelError> {
        let text = std::fs::read_to_string(path).map_err(|source| PanelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let manifest: FeatureManifest = serde_json::from_str(&text).map_err(|e| PanelError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let has_dynamic = manifest.features.iter().any(|f| f.kind == FeatureKind::Dynamic);
        if has_dynamic && manifest.snapshot_week.is_none() {
            return Err(PanelError::Manifest {
                path: path.to_path_buf(),
                reason: "dynamic features require a snapshot_week".into(),
            });
        }
        if let Some(w) = manifest.snapshot_week {
            WeekIndex::new(w)?;
        }
        Ok(manifest)
    }

    /// Whether this file contributes to a panel built for `week`.
    pub fn applies_to(&self, week: WeekIndex) -> bool {
        match self.snapshot_week {
            None => true,
            Some(w) => w == week.get() || self.features.iter().all(|f| f.kind == FeatureKind::Static),
        }
    }
}

/// Dense, fully imputed feature matrix (counties x features).
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTable {
    pub counties: Vec<CountyId>,
    pub features: Vec<FeatureSpec>,
    pub values: Matrix,
    pub week: WeekIndex,
}

impl FeatureTable {
    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    /// Keeps only the named features, in table order.
    pub fn retain_features(&self, keep: &BTreeSet<String>) -> FeatureTable {
        let idx: Vec<usize> = self
            .features
            .iter()
            .enumerate()
            .filter(|(_, f)| keep.contains(&f.name))
            .map(|(i, _)| i)
            .collect();
        FeatureTable {
            counties: self.counties.clone(),
            features: idx.iter().map(|&i| self.features[i].clone()).collect(),
            values: self.values.select_columns(&idx),
            week: self.week,
        }
    }

    /// Rows for the given counties, in the given order. Unknown counties are skipped.
    pub fn select_counties(&self, counties: &[CountyId]) -> FeatureTable {
        let pos: BTreeMap<&CountyId, usize> = self.counties.iter().enumerate().map(|(i, c)| (c, i)).collect();
        let (kept, rows): (Vec<CountyId>, Vec<usize>) = counties
            .iter()
            .filter_map(|c| pos.get(c).map(|&i| (c.clone(), i)))
            .unzip();
        FeatureTable {
            counties: kept,
            features: self.features.clone(),
            values: self.values.select_rows(&rows),
            week: self.week,
        }
    }

    /// Writes `fips,<feature>,...` with shortest round-trip float formatting.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["fips".to_string()];
        header.extend(self.feature_names());
        out.write_record(&header)?;
        for (i, c) in self.counties.iter().enumerate() {
            let mut rec = vec![c.to_string()];
            rec.extend(self.values.row(i).iter().map(|v| v.to_string()));
            out.write_record(&rec)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Reads a dense table written by [`FeatureTable::write_csv`]; feature
    /// kinds come from `specs` matched by name.
    pub fn read_csv<R: Read>(
        reader: R,
        specs: &[FeatureSpec],
        week: WeekIndex,
        source_name: &str,
    ) -> Result<FeatureTable, PanelError> {
        let csv_err = |source| PanelError::Csv {
            source_name: source_name.to_string(),
            source,
        };
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers().map_err(csv_err)?.clone();
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let features = names
            .iter()
            .map(|n| {
                specs.iter().find(|s| &s.name == n).cloned().unwrap_or(FeatureSpec {
                    name: n.clone(),
                    kind: FeatureKind::Static,
                    source: String::new(),
                })
            })
            .collect::<Vec<_>>();
        let mut counties = Vec::new();
        let mut data = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let fips = CountyId::parse(&rec[0]).map_err(|e| PanelError::InvalidRecord {
                source_name: source_name.to_string(),
                reason: e.to_string(),
            })?;
            counties.push(fips);
            for field in rec.iter().skip(1) {
                data.push(field.trim().parse::<f64>().unwrap_or(f64::NAN));
            }
        }
        Ok(FeatureTable {
            values: Matrix::from_vec(counties.len(), features.len(), data),
            counties,
            features,
            week,
        })
    }
}

/// Symmetric county adjacency without self-loops.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdjacencyMap {
    neighbors: BTreeMap<CountyId, BTreeSet<CountyId>>,
}

impl AdjacencyMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds an undirected edge. Self-loops are ignored and reported as `false`.
    pub fn add_edge(&mut self, a: CountyId, b: CountyId) -> bool {
        if a == b {
            return false;
        }
        self.neighbors.entry(a.clone()).or_default().insert(b.clone());
        self.neighbors.entry(b).or_default().insert(a);
        true
    }

    pub fn neighbors(&self, c: &CountyId) -> impl Iterator<Item = &CountyId> {
        self.neighbors.get(c).into_iter().flatten()
    }

    pub fn edge_count(&self) -> usize {
        self.neighbors.values().map(BTreeSet::len).sum::<usize>() / 2
    }

    pub fn is_symmetric(&self) -> bool {
        self.neighbors
            .iter()
            .all(|(a, ns)| !ns.contains(a) && ns.iter().all(|b| self.neighbors.get(b).is_some_and(|s| s.contains(a))))
    }

    pub fn from_reader<R: Read>(
        reader: R,
        source_name: &str,
        pad_short_fips: bool,
    ) -> Result<(Self, Vec<RejectedRecord>), PanelError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr
            .headers()
            .map_err(|source| PanelError::Csv {
                source_name: source_name.to_string(),
                source,
            })?
            .clone();
        let ia = column(&header, "fips_a", source_name)?;
        let ib = column(&header, "fips_b", source_name)?;
        let mut map = AdjacencyMap::new();
        let mut rejected = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec.map_err(|source| PanelError::Csv {
                source_name: source_name.to_string(),
                source,
            })?;
            let line = line + 2;
            let parsed =
                parse_fips(&rec[ia], pad_short_fips).and_then(|a| parse_fips(&rec[ib], pad_short_fips).map(|b| (a, b)));
            match parsed {
                Ok((a, b)) => {
                    if !map.add_edge(a, b) {
                        rejected.push(RejectedRecord::new(source_name, line, "self-loop edge"));
                    }
                }
                Err(e) => rejected.push(RejectedRecord::new(source_name, line, e.to_string())),
            }
        }
        Ok((map, rejected))
    }

    pub fn load(path: &Path, pad_short_fips: bool) -> Result<(Self, Vec<RejectedRecord>), PanelError> {
        let f = open(path)?;
        Self::from_reader(f, &path.display().to_string(), pad_short_fips)
    }
}

/// A row rejected during loading, with the reason.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RejectedRecord {
    pub source: String,
    pub line: usize,
    pub reason: String,
}

impl RejectedRecord {
    pub(crate) fn new(source: &str, line: usize, reason: impl Into<String>) -> Self {
        Self {
            source: source.to_string(),
            line,
            reason: reason.into(),
        }
    }
}

/// Vaccination series plus raw feature cells, keyed by county, before imputation.
#[derive(Clone, Debug, PartialEq)]
pub struct CountyPanel {
    /// Sorted by FIPS.
    pub counties: Vec<CountyId>,
    /// Sorted ascending; union of weeks present in the vaccination file.
    pub weeks: Vec<WeekIndex>,
    /// `vaccination[county][week]`.
    pub vaccination: Vec<Vec<Option<f64>>>,
    pub features: Vec<FeatureSpec>,
    /// `feature_cells[county][feature]`.
    pub feature_cells: Vec<Vec<Option<f64>>>,
    /// Snapshot week for dynamic features.
    pub week: WeekIndex,
    pub rejected: Vec<RejectedRecord>,
}

/// One vaccination value filled by neighbor imputation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImputedCell {
    pub county: CountyId,
    pub week: WeekIndex,
    pub value: f64,
    /// 1 for values averaged from observed neighbors, higher for nested gaps.
    pub pass: usize,
}

/// One feature cell filled with its column median.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MedianFill {
    pub county: CountyId,
    pub feature: String,
    pub value: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureFillReport {
    pub filled: Vec<MedianFill>,
    /// Columns with no observed values at all.
    pub dropped: Vec<String>,
}

impl CountyPanel {
    pub fn county_index(&self, c: &CountyId) -> Option<usize> {
        self.counties.binary_search(c).ok()
    }

    /// `(county, week)` cells with no vaccination value.
    pub fn missing_vaccination(&self) -> Vec<(CountyId, WeekIndex)> {
        let mut out = Vec::new();
        for (i, row) in self.vaccination.iter().enumerate() {
            for (t, v) in row.iter().enumerate() {
                if v.is_none() {
                    out.push((self.counties[i].clone(), self.weeks[t]));
                }
            }
        }
        out
    }

    pub fn missing_feature_cells(&self) -> usize {
        self.feature_cells
            .iter()
            .map(|r| r.iter().filter(|c| c.is_none()).count())
            .sum()
    }

    /// Observed (or imputed) vaccination values of one county.
    pub fn series(&self, county: usize) -> VaccinationSeries {
        VaccinationSeries {
            county: self.counties[county].clone(),
            q: self
                .weeks
                .iter()
                .zip(&self.vaccination[county])
                .filter_map(|(&w, v)| v.map(|v| (w, v)))
                .collect(),
        }
    }

    pub fn all_series(&self) -> Vec<VaccinationSeries> {
        (0..self.counties.len()).map(|i| self.series(i)).collect()
    }

    /// Builds the dense feature table, filling missing cells with the column
    /// median and dropping columns that have no observed value.
    pub fn feature_table(&self) -> Result<(FeatureTable, FeatureFillReport), PanelError> {
        let mut report = FeatureFillReport::default();
        let mut keep = Vec::new();
        let mut medians = Vec::new();
        for (j, spec) in self.features.iter().enumerate() {
            let mut observed: Vec<f64> = self.feature_cells.iter().filter_map(|r| r[j]).collect();
            if observed.is_empty() {
                report.dropped.push(spec.name.clone());
                continue;
            }
            observed.sort_by(f64::total_cmp);
            let m = observed.len();
            let median = if m % 2 == 1 {
                observed[m / 2]
            } else {
                0.5 * (observed[m / 2 - 1] + observed[m / 2])
            };
            keep.push(j);
            medians.push(median);
        }
        if keep.is_empty() && !self.features.is_empty() {
            return Err(PanelError::NoFeatures);
        }
        let mut values = Matrix::zeros(self.counties.len(), keep.len());
        for (i, row) in self.feature_cells.iter().enumerate() {
            for (jj, &j) in keep.iter().enumerate() {
                values[(i, jj)] = match row[j] {
                    Some(v) => v,
                    None => {
                        report.filled.push(MedianFill {
                            county: self.counties[i].clone(),
                            feature: self.features[j].name.clone(),
                            value: medians[jj],
                        });
                        medians[jj]
                    }
                };
            }
        }
        Ok((
            FeatureTable {
                counties: self.counties.clone(),
                features: keep.iter().map(|&j| self.features[j].clone()).collect(),
                values,
                week: self.week,
            },
            report,
        ))
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    /// Zero-pad 4-digit numeric FIPS codes instead of rejecting them.
    pub pad_short_fips: bool,
}

fn open(path: &Path) -> Result<std::fs::File, PanelError> {
    std::fs::File::open(path).map_err(|source| PanelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn column(header: &csv::StringRecord, name: &str, source_name: &str) -> Result<usize, PanelError> {
    header
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| PanelError::MissingColumn {
            source_name: source_name.to_string(),
            column: name.to_string(),
        })
}

pub(crate) fn parse_fips(raw: &str, pad: bool) -> Result<CountyId, FipsError> {
    if pad {
        CountyId::parse_padded(raw)
    } else {
        CountyId::parse(raw)
    }
}

fn parse_cell(raw: &str) -> Option<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Parsed vaccination rows keyed by `(county, week)`.
pub type VaccinationRows = BTreeMap<(CountyId, WeekIndex), f64>;

pub fn parse_vaccination<R: Read>(
    reader: R,
    source_name: &str,
    opts: &LoadOptions,
) -> Result<(VaccinationRows, Vec<RejectedRecord>), PanelError> {
    let csv_err = |source| PanelError::Csv {
        source_name: source_name.to_string(),
        source,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let i_fips = column(&header, "fips", source_name)?;
    let i_week = column(&header, "week", source_name)?;
    let i_q = column(&header, "pct_fully_vaccinated", source_name)?;
    let mut rows = BTreeMap::new();
    let mut rejected = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = n + 2;
        let fips = match parse_fips(&rec[i_fips], opts.pad_short_fips) {
            Ok(f) => f,
            Err(e) => {
                rejected.push(RejectedRecord::new(source_name, line, e.to_string()));
                continue;
            }
        };
        let week = match rec[i_week].trim().parse::<u32>().ok().map(WeekIndex::new) {
            Some(Ok(w)) => w,
            _ => {
                rejected.push(RejectedRecord::new(
                    source_name,
                    line,
                    format!("invalid week {:?}", &rec[i_week]),
                ));
                continue;
            }
        };
        let q = match parse_cell(&rec[i_q]) {
            Some(q) if (0.0..=1.0).contains(&q) => q,
            Some(q) => {
                rejected.push(RejectedRecord::new(
                    source_name,
                    line,
                    format!("vaccination fraction {q} outside [0, 1]"),
                ));
                continue;
            }
            // An empty cell is the same as an absent row.
            None => continue,
        };
        if rows.insert((fips.clone(), week), q).is_some() {
            return Err(PanelError::DuplicateKey {
                source_name: source_name.to_string(),
                key: format!("({fips}, week {week})"),
            });
        }
    }
    Ok((rows, rejected))
}

/// Parsed feature rows keyed by county, with the CSV's column names.
pub type FeatureRows = (Vec<String>, BTreeMap<CountyId, Vec<Option<f64>>>);

pub fn parse_features<R: Read>(
    reader: R,
    source_name: &str,
    opts: &LoadOptions,
) -> Result<(FeatureRows, Vec<RejectedRecord>), PanelError> {
    let csv_err = |source| PanelError::Csv {
        source_name: source_name.to_string(),
        source,
    };
    let mut rdr = csv::Reader::from_reader(reader);
    let header = rdr.headers().map_err(csv_err)?.clone();
    let i_fips = column(&header, "fips", source_name)?;
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != i_fips)
        .map(|(_, h)| h.trim().to_string())
        .collect();
    let mut rows = BTreeMap::new();
    let mut rejected = Vec::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let line = n + 2;
        let fips = match parse_fips(&rec[i_fips], opts.pad_short_fips) {
            Ok(f) => f,
            Err(e) => {
                rejected.push(RejectedRecord::new(source_name, line, e.to_string()));
                continue;
            }
        };
        let cells: Vec<Option<f64>> = rec
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != i_fips)
            .map(|(_, v)| parse_cell(v))
            .collect();
        if rows.insert(fips.clone(), cells).is_some() {
            return Err(PanelError::DuplicateKey {
                source_name: source_name.to_string(),
                key: fips.to_string(),
            });
        }
    }
    Ok(((names, rows), rejected))
}

/// An in-memory feature source: manifest plus parsed rows.
pub struct FeatureSource {
    pub name: String,
    pub manifest: FeatureManifest,
    pub rows: FeatureRows,
}

/// Fuses vaccination rows with feature sources into one panel.
///
/// Counties are the union of those in the vaccination rows and the
/// feature sources; feature sources that do not apply to `week` are skipped.
pub fn assemble_panel(
    vaccination: VaccinationRows,
    sources: Vec<FeatureSource>,
    week: WeekIndex,
    mut rejected: Vec<RejectedRecord>,
) -> Result<CountyPanel, PanelError> {
    let mut counties: BTreeSet<CountyId> = BTreeSet::new();
    let mut weeks: BTreeSet<WeekIndex> = BTreeSet::new();
    for (c, w) in vaccination.keys() {
        counties.insert(c.clone());
        weeks.insert(*w);
    }
    let sources: Vec<FeatureSource> = sources.into_iter().filter(|s| s.manifest.applies_to(week)).collect();

    let mut specs: Vec<FeatureSpec> = Vec::new();
    // (source index, column index in source) per panel feature
    let mut origin: Vec<(usize, usize)> = Vec::new();
    for (si, src) in sources.iter().enumerate() {
        let (names, rows) = &src.rows;
        for c in rows.keys() {
            counties.insert(c.clone());
        }
        for (ci, name) in names.iter().enumerate() {
            let spec = src
                .manifest
                .features
                .iter()
                .find(|f| &f.name == name)
                .cloned()
                .ok_or_else(|| PanelError::Manifest {
                    path: PathBuf::from(&src.name),
                    reason: format!("column {name:?} is not declared in the manifest"),
                })?;
            if specs.iter().any(|s| s.name == spec.name) {
                return Err(PanelError::DuplicateFeature(spec.name));
            }
            specs.push(spec);
            origin.push((si, ci));
        }
    }
    let counties: Vec<CountyId> = counties.into_iter().collect();
    let weeks: Vec<WeekIndex> = weeks.into_iter().collect();

    let vacc = counties
        .iter()
        .map(|c| {
            weeks
                .iter()
                .map(|w| vaccination.get(&(c.clone(), *w)).copied())
                .collect()
        })
        .collect();
    let cells = counties
        .iter()
        .map(|c| {
            origin
                .iter()
                .map(|&(si, ci)| sources[si].rows.1.get(c).and_then(|r| r[ci]))
                .collect()
        })
        .collect();
    rejected.sort_by(|a, b| (&a.source, a.line).cmp(&(&b.source, b.line)));
    Ok(CountyPanel {
        counties,
        weeks,
        vaccination: vacc,
        features: specs,
        feature_cells: cells,
        week,
        rejected,
    })
}

/// Loads vaccination, feature and adjacency files into a panel.
pub fn load_panel(
    vaccination_csv: &Path,
    feature_csvs: &[PathBuf],
    adjacency_csv: &Path,
    week: WeekIndex,
    opts: &LoadOptions,
) -> Result<(CountyPanel, AdjacencyMap), PanelError> {
    let (vacc, mut rejected) = parse_vaccination(open(vaccination_csv)?, &vaccination_csv.display().to_string(), opts)?;
    let mut sources = Vec::new();
    for path in feature_csvs {
        let manifest = FeatureManifest::load(&FeatureManifest::sidecar_path(path))?;
        if !manifest.applies_to(week) {
            continue;
        }
        let name = path.display().to_string();
        let (rows, rej) = parse_features(open(path)?, &name, opts)?;
        rejected.extend(rej);
        sources.push(FeatureSource { name, manifest, rows });
    }
    let (adjacency, rej) = AdjacencyMap::load(adjacency_csv, opts.pad_short_fips)?;
    rejected.extend(rej);
    let panel = assemble_panel(vacc, sources, week, rejected)?;
    Ok((panel, adjacency))
}

/// Fills missing vaccination values with the mean of neighboring counties'
/// values for the same week.
///
/// Each pass only reads values known at the start of the pass, so chains of
/// missing counties fill outward one hop per pass until a fixpoint.
pub fn impute_missing(
    panel: &CountyPanel,
    adjacency: &AdjacencyMap,
) -> Result<(CountyPanel, Vec<ImputedCell>), PanelError> {
    let mut out = panel.clone();
    let mut report = Vec::new();
    let neighbor_idx: Vec<Vec<usize>> = panel
        .counties
        .iter()
        .map(|c| adjacency.neighbors(c).filter_map(|n| panel.county_index(n)).collect())
        .collect();

    for (t, &week) in panel.weeks.iter().enumerate() {
        let mut pass = 0;
        loop {
            let missing: Vec<usize> = (0..out.counties.len())
                .filter(|&i| out.vaccination[i][t].is_none())
                .collect();
            if missing.is_empty() {
                break;
            }
            pass += 1;
            let fills: Vec<(usize, f64)> = missing
                .iter()
                .filter_map(|&i| {
                    let known: Vec<f64> = neighbor_idx[i].iter().filter_map(|&j| out.vaccination[j][t]).collect();
                    (!known.is_empty()).then(|| (i, known.iter().sum::<f64>() / known.len() as f64))
                })
                .collect();
            if fills.is_empty() {
                let mut stuck: Vec<CountyId> = missing.iter().map(|&i| out.counties[i].clone()).collect();
                stuck.sort();
                return Err(PanelError::UnresolvableImputation {
                    week,
                    counties: first_component(&stuck, adjacency),
                });
            }
            for (i, v) in fills {
                out.vaccination[i][t] = Some(v);
                report.push(ImputedCell {
                    county: out.counties[i].clone(),
                    week,
                    value: v,
                    pass,
                });
            }
        }
    }
    Ok((out, report))
}

/// The connected component (restricted to `stuck`) containing the first stuck county.
fn first_component(stuck: &[CountyId], adjacency: &AdjacencyMap) -> Vec<CountyId> {
    let set: BTreeSet<&CountyId> = stuck.iter().collect();
    let mut seen = BTreeSet::new();
    let mut queue = VecDeque::from([&stuck[0]]);
    seen.insert(&stuck[0]);
    while let Some(c) = queue.pop_front() {
        for n in adjacency.neighbors(c) {
            if set.contains(n) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen.into_iter().cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn id(s: &str) -> CountyId {
        CountyId::parse(s).unwrap()
    }

    fn w(n: u32) -> WeekIndex {
        WeekIndex::new(n).unwrap()
    }

    fn manifest(names: &[&str]) -> FeatureManifest {
        FeatureManifest {
            snapshot_week: None,
            features: names
                .iter()
                .map(|n| FeatureSpec {
                    name: n.to_string(),
                    kind: FeatureKind::Static,
                    source: "test".into(),
                })
                .collect(),
        }
    }

    fn panel_from(vacc: &str, feats: &str) -> CountyPanel {
        let opts = LoadOptions::default();
        let (v, rej) = parse_vaccination(vacc.as_bytes(), "vacc", &opts).unwrap();
        let (rows, rej2) = parse_features(feats.as_bytes(), "feat", &opts).unwrap();
        let names: Vec<&str> = rows.0.iter().map(String::as_str).collect();
        let src = FeatureSource {
            name: "feat".into(),
            manifest: manifest(&names),
            rows: rows.clone(),
        };
        let mut rejected = rej;
        rejected.extend(rej2);
        assemble_panel(v, vec![src], w(23), rejected).unwrap()
    }

    #[test]
    fn fips_validation() {
        assert!(CountyId::parse("01001").is_ok());
        assert_eq!(CountyId::parse("1003"), Err(FipsError::WrongLength("1003".into())));
        assert_eq!(CountyId::parse_padded("1003").unwrap().as_str(), "01003");
        assert!(matches!(CountyId::parse("57001"), Err(FipsError::StateOutOfRange(_))));
        assert!(matches!(CountyId::parse("00001"), Err(FipsError::StateOutOfRange(_))));
        assert!(matches!(CountyId::parse("0100a"), Err(FipsError::NonNumeric(_))));
        assert_eq!(CountyId::parse(""), Err(FipsError::Empty));
    }

    #[test]
    fn full_join_has_no_missing_cells() {
        let vacc = "fips,week,pct_fully_vaccinated\n01001,22,0.3\n01001,23,0.35\n01003,22,0.4\n01003,23,0.42\n01005,22,0.2\n01005,23,0.25\n";
        let feats = "fips,income,age\n01001,50,30\n01003,60,40\n01005,55,35\n";
        let p = panel_from(vacc, feats);
        assert_eq!(p.counties.len(), 3);
        assert!(p.missing_vaccination().is_empty());
        assert_eq!(p.missing_feature_cells(), 0);
        assert!(p.rejected.is_empty());
    }

    #[test]
    fn county_without_vaccination_is_flagged() {
        let vacc = "fips,week,pct_fully_vaccinated\n01001,23,0.3\n01005,23,0.2\n";
        let feats = "fips,income\n01001,50\n01003,60\n01005,55\n";
        let p = panel_from(vacc, feats);
        assert_eq!(p.missing_vaccination(), vec![(id("01003"), w(23))]);
    }

    #[test]
    fn four_digit_fips_is_rejected_with_diagnostic() {
        let vacc = "fips,week,pct_fully_vaccinated\n1003,23,0.3\n01005,23,0.2\n";
        let p = panel_from(vacc, "fips,x\n01005,1\n");
        assert_eq!(p.counties, vec![id("01005")]);
        assert_eq!(p.rejected.len(), 1);
        assert_eq!(p.rejected[0].line, 2);
        assert!(p.rejected[0].reason.contains("1003"), "{}", p.rejected[0].reason);
    }

    #[test]
    fn four_digit_fips_is_padded_on_request() {
        let opts = LoadOptions { pad_short_fips: true };
        let (rows, rej) =
            parse_vaccination("fips,week,pct_fully_vaccinated\n1003,23,0.3\n".as_bytes(), "v", &opts).unwrap();
        assert!(rej.is_empty());
        assert!(rows.contains_key(&(id("01003"), w(23))));
    }

    #[test]
    fn duplicate_key_names_the_key() {
        let vacc = "fips,week,pct_fully_vaccinated\n01001,23,0.3\n01001,23,0.31\n";
        let err = parse_vaccination(vacc.as_bytes(), "v", &LoadOptions::default()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("01001") && msg.contains("23"), "{msg}");
    }

    #[test]
    fn out_of_range_fraction_is_rejected() {
        let vacc = "fips,week,pct_fully_vaccinated\n01001,23,1.3\n";
        let (rows, rej) = parse_vaccination(vacc.as_bytes(), "v", &LoadOptions::default()).unwrap();
        assert!(rows.is_empty());
        assert_eq!(rej.len(), 1);
    }

    #[test]
    fn join_is_order_independent() {
        let a = "fips,week,pct_fully_vaccinated\n01001,22,0.3\n01003,22,0.4\n01001,23,0.35\n01003,23,0.42\n";
        let b = "fips,week,pct_fully_vaccinated\n01003,23,0.42\n01001,23,0.35\n01003,22,0.4\n01001,22,0.3\n";
        let fa = "fips,x,y\n01001,1,2\n01003,3,4\n";
        let fb = "fips,x,y\n01003,3,4\n01001,1,2\n";
        assert_eq!(panel_from(a, fa), panel_from(b, fb));
    }

    fn chain_panel(values: &[Option<f64>]) -> (CountyPanel, AdjacencyMap) {
        let counties: Vec<CountyId> = (0..values.len()).map(|i| id(&format!("010{:02}", i + 1))).collect();
        let mut adj = AdjacencyMap::new();
        for pair in counties.windows(2) {
            adj.add_edge(pair[0].clone(), pair[1].clone());
        }
        let panel = CountyPanel {
            counties,
            weeks: vec![w(23)],
            vaccination: values.iter().map(|v| vec![*v]).collect(),
            features: vec![],
            feature_cells: vec![vec![]; values.len()],
            week: w(23),
            rejected: vec![],
        };
        (panel, adj)
    }

    #[test]
    fn imputes_neighbor_mean() {
        // X in the middle of a chain with neighbors 0.2 and 0.4.
        let (p, adj) = chain_panel(&[Some(0.2), None, Some(0.4)]);
        let (out, report) = impute_missing(&p, &adj).unwrap();
        assert!((out.vaccination[1][0].unwrap() - 0.3).abs() < 1e-15);
        assert_eq!(report.len(), 1);
    }

    #[test]
    fn no_missing_values_is_identity() {
        let (p, adj) = chain_panel(&[Some(0.2), Some(0.3)]);
        let (out, report) = impute_missing(&p, &adj).unwrap();
        assert_eq!(out, p);
        assert!(report.is_empty());
    }

    #[test]
    fn nested_gap_fills_over_two_passes() {
        // A(missing) - B(missing) - C(0.6)
        let (p, adj) = chain_panel(&[None, None, Some(0.6)]);
        let (out, report) = impute_missing(&p, &adj).unwrap();
        assert_eq!(out.vaccination[1][0], Some(0.6));
        assert_eq!(out.vaccination[0][0], Some(0.6));
        let b = report.iter().find(|c| c.county == id("01002")).unwrap();
        let a = report.iter().find(|c| c.county == id("01001")).unwrap();
        assert_eq!((b.pass, a.pass), (1, 2));
    }

    #[test]
    fn component_without_observations_is_unresolvable() {
        let (p, _) = chain_panel(&[Some(0.5), None, None]);
        // Only 01002-01003 are connected, so 01001's value never reaches them.
        let mut adj = AdjacencyMap::new();
        adj.add_edge(id("01002"), id("01003"));
        match impute_missing(&p, &adj) {
            Err(PanelError::UnresolvableImputation { counties, .. }) => {
                assert_eq!(counties, vec![id("01002"), id("01003")]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn monotonicize_applies_running_max() {
        let s = VaccinationSeries {
            county: id("01001"),
            q: [(1, 0.1), (2, 0.3), (3, 0.25), (4, 0.4)]
                .into_iter()
                .map(|(k, v)| (w(k), v))
                .collect(),
        };
        let m = monotonicize(&s);
        let vals: Vec<f64> = m.series.q.values().copied().collect();
        assert_eq!(vals, vec![0.1, 0.3, 0.3, 0.4]);
        assert_eq!(m.adjusted, vec![w(3)]);

        let flat = VaccinationSeries {
            county: id("01001"),
            q: (1..5).map(|k| (w(k), 0.5)).collect(),
        };
        let m = monotonicize(&flat);
        assert_eq!(m.series, flat);
        assert!(m.adjusted.is_empty());
    }

    #[test]
    fn median_fill_and_drop() {
        let vacc = "fips,week,pct_fully_vaccinated\n01001,23,0.3\n01003,23,0.3\n01005,23,0.3\n";
        let feats = "fips,a,b\n01001,1,\n01003,,\n01005,5,\n";
        let p = panel_from(vacc, feats);
        let (table, report) = p.feature_table().unwrap();
        assert_eq!(table.feature_names(), vec!["a"]);
        assert_eq!(table.values.column(0), vec![1.0, 3.0, 5.0]);
        assert_eq!(report.dropped, vec!["b"]);
        assert_eq!(report.filled.len(), 1);
    }

    #[test]
    fn dynamic_manifest_requires_snapshot_week() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dyn.manifest.json");
        std::fs::write(
            &path,
            r#"{"features":[{"name":"searches","kind":"dynamic","source":"google"}]}"#,
        )
        .unwrap();
        assert!(matches!(FeatureManifest::load(&path), Err(PanelError::Manifest { .. })));
        assert_eq!(
            FeatureManifest::sidecar_path(Path::new("/x/dyn.csv")),
            PathBuf::from("/x/dyn.manifest.json")
        );
    }
}
