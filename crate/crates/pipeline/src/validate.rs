//! Agreement of VHb with an external, survey-based hesitancy estimate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;
use vhb_core::county::CountyId;
use vhb_core::numerics::pearson_matrix;
use vhb_core::Matrix;

use crate::error::PipelineError;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    pub week: u32,
    pub n: usize,
    /// Pearson r between VHb and the external estimate; within [-1, 1].
    pub r: f64,
    /// `(county, vhb, external)` for every joined county.
    pub scatter: Vec<(CountyId, f64, f64)>,
}

/// Reads `fips,estimate` with an optional `week` column. With a week column
/// only rows for `week` are kept.
pub fn read_external(path: &Path, week: u32) -> Result<BTreeMap<CountyId, f64>, PipelineError> {
    let err = |e: String| PipelineError::stage("validate", format!("{}: {e}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let header = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| header.iter().position(|h| h.trim() == name);
    let i_fips = col("fips").ok_or_else(|| err("missing column \"fips\"".into()))?;
    let i_est = col("estimate").ok_or_else(|| err("missing column \"estimate\"".into()))?;
    let i_week = col("week");
    let mut out = BTreeMap::new();
    for (n, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        if let Some(iw) = i_week {
            if rec[iw].trim().parse::<u32>().ok() != Some(week) {
                continue;
            }
        }
        match (CountyId::parse(&rec[i_fips]), rec[i_est].trim().parse::<f64>()) {
            (Ok(c), Ok(v)) if v.is_finite() => {
                if out.insert(c.clone(), v).is_some() {
                    return Err(err(format!("duplicate estimate for {c}")));
                }
            }
            _ => log::warn!("{}:{}: rejected external row", path.display(), n + 2),
        }
    }
    Ok(out)
}

/// Inner-joins VHb with the external estimates by FIPS and correlates them.
pub fn validate_external(
    vhb: &BTreeMap<CountyId, f64>,
    external_csv: &Path,
    week: u32,
) -> Result<ValidationReport, PipelineError> {
    let external = read_external(external_csv, week)?;
    let scatter: Vec<(CountyId, f64, f64)> = vhb
        .iter()
        .filter_map(|(c, &v)| external.get(c).map(|&e| (c.clone(), v, e)))
        .collect();
    if scatter.len() < 3 {
        return Err(PipelineError::InsufficientOverlap(scatter.len()));
    }
    let rows: Vec<[f64; 2]> = scatter.iter().map(|(_, v, e)| [*v, *e]).collect();
    let corr = pearson_matrix(&Matrix::from_rows(&rows), &["vhb".into(), "external".into()])
        .map_err(|e| PipelineError::stage("validate", e))?;
    if !corr.zero_variance.is_empty() {
        return Err(PipelineError::stage(
            "validate",
            format!(
                "week {week}: {} is constant over the joined counties",
                corr.zero_variance.join(" and ")
            ),
        ));
    }
    Ok(ValidationReport {
        week,
        n: scatter.len(),
        r: corr.r[(0, 1)],
        scatter,
    })
}
