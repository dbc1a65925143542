//! Static figures (SVG) and map layers (GeoJSON) from run artifacts.
//!
//! Output depends only on the input bytes: coordinates are printed with a
//! fixed number of decimals and iteration orders are fixed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::error::PipelineError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum RenderKind {
    /// `clusters_wNN.csv` joined onto a GeoJSON base layer.
    Choropleth,
    /// Horizontal bars from `importance_wNN.csv` or `permutation_wNN.csv`.
    Importance,
    /// Weekly mean F1 with +-1 sd bars from `cv_summary.csv`.
    Cv,
    /// Feature ranks over weeks from `rank_trajectory.csv`.
    Trajectory,
    /// Cluster mean VHb +-1 sd over weeks from `cluster_trend.csv`.
    Trend,
    /// VHb against the external estimate from `validation_scatter.csv`.
    Scatter,
    /// Square matrix CSV (correlation or confusion) as a heatmap.
    Heatmap,
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn read(path: &Path) -> Result<Table, PipelineError> {
        let bytes = std::fs::read(path).map_err(|e| PipelineError::io(path, e))?;
        let mut rdr = csv::Reader::from_reader(bytes.as_slice());
        let bad = |e: csv::Error| PipelineError::Render(format!("{}: {e}", path.display()));
        let header: Vec<String> = rdr.headers().map_err(bad)?.iter().map(str::to_string).collect();
        let mut rows = Vec::new();
        for r in rdr.records() {
            rows.push(r.map_err(bad)?.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(PipelineError::Render(format!("{} has no data rows", path.display())));
        }
        Ok(Table { header, rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<usize, PipelineError> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| PipelineError::Render(format!("{} lacks column {name:?}", path.display())))
    }

    fn num(&self, r: usize, c: usize) -> Option<f64> {
        self.rows[r][c].trim().parse().ok().filter(|v: &f64| v.is_finite())
    }
}

/// Renders `input` and writes the result to `output`.
pub fn render(kind: RenderKind, input: &Path, base: Option<&Path>, output: &Path) -> Result<(), PipelineError> {
    let text = render_to_string(kind, input, base)?;
    std::fs::write(output, text).map_err(|e| PipelineError::io(output, e))
}

pub fn render_to_string(kind: RenderKind, input: &Path, base: Option<&Path>) -> Result<String, PipelineError> {
    match kind {
        RenderKind::Choropleth => {
            let base = base.ok_or_else(|| PipelineError::Render("choropleth needs a GeoJSON base layer".into()))?;
            choropleth(input, base)
        }
        RenderKind::Importance => importance(input),
        RenderKind::Cv => cv(input),
        RenderKind::Trajectory => trajectory(input),
        RenderKind::Trend => trend(input),
        RenderKind::Scatter => scatter(input),
        RenderKind::Heatmap => heatmap(input),
    }
}

fn choropleth(clusters: &Path, base: &Path) -> Result<String, PipelineError> {
    let t = Table::read(clusters)?;
    let (i_fips, i_vhb, i_cluster) = (
        t.col("fips", clusters)?,
        t.col("vhb", clusters)?,
        t.col("cluster", clusters)?,
    );
    let by_fips: BTreeMap<&str, (&str, Option<f64>)> = (0..t.rows.len())
        .map(|r| {
            (
                t.rows[r][i_fips].as_str(),
                (t.rows[r][i_cluster].as_str(), t.num(r, i_vhb)),
            )
        })
        .collect();
    let text = std::fs::read_to_string(base).map_err(|e| PipelineError::io(base, e))?;
    let mut geo: Value =
        serde_json::from_str(&text).map_err(|e| PipelineError::Render(format!("{}: {e}", base.display())))?;
    let features = geo
        .get_mut("features")
        .and_then(Value::as_array_mut)
        .ok_or_else(|| PipelineError::Render(format!("{} is not a FeatureCollection", base.display())))?;
    for f in features {
        let fips = f
            .pointer("/properties/fips")
            .or_else(|| f.pointer("/properties/GEOID"))
            .and_then(|v| {
                v.as_str()
                    .map(str::to_string)
                    .or_else(|| v.as_u64().map(|n| format!("{n:05}")))
            });
        let Some(fips) = fips else { continue };
        let Some(props) = f.get_mut("properties").and_then(Value::as_object_mut) else {
            continue;
        };
        match by_fips.get(fips.as_str()) {
            Some((cluster, vhb)) => {
                props.insert("cluster".into(), Value::from(*cluster));
                props.insert("vhb".into(), vhb.map(Value::from).unwrap_or(Value::Null));
            }
            None => {
                props.insert("cluster".into(), Value::Null);
                props.insert("vhb".into(), Value::Null);
            }
        }
    }
    let mut s = serde_json::to_string_pretty(&geo).map_err(|e| PipelineError::Render(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

const W: f64 = 800.0;
const H: f64 = 500.0;
const PALETTE: [&str; 8] = [
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02", "#a6761d", "#666666",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Svg {
    body: String,
}

impl Svg {
    fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = writeln!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(body, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            body,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            W / 2.0,
            esc(title)
        );
        Svg { body }
    }

    fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}"/>"#
        );
    }

    fn text(&mut self, x: f64, y: f64, anchor: &str, s: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}">{}</text>"#,
            esc(s)
        );
    }

    fn polyline(&mut self, pts: &[(f64, f64)], stroke: &str) {
        if pts.len() < 2 {
            return;
        }
        let p: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"/>"#,
            p.join(" ")
        );
    }

    fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"/>"#
        );
    }

    fn circle(&mut self, x: f64, y: f64, fill: &str) {
        let _ = writeln!(self.body, r#"<circle cx="{x:.2}" cy="{y:.2}" r="2.5" fill="{fill}"/>"#);
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Linear map of `[lo, hi]` onto `[a, b]`; a degenerate range maps to the middle.
fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        (a + b) / 2.0
    }
}

fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Plot frame with axes and min/max tick labels; returns the plot box.
fn axes(svg: &mut Svg, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) -> (f64, f64, f64, f64) {
    let (l, r, t, b) = (70.0, W - 150.0, 40.0, H - 50.0);
    svg.line(l, b, r, b, "black");
    svg.line(l, t, l, b, "black");
    svg.text(l, b + 15.0, "middle", &format!("{:.2}", x.0));
    svg.text(r, b + 15.0, "middle", &format!("{:.2}", x.1));
    svg.text(l - 5.0, b, "end", &format!("{:.3}", y.0));
    svg.text(l - 5.0, t + 4.0, "end", &format!("{:.3}", y.1));
    svg.text((l + r) / 2.0, H - 15.0, "middle", xlabel);
    svg.text(15.0, (t + b) / 2.0, "start", ylabel);
    (l, r, t, b)
}

fn importance(path: &Path) -> Result<String, PipelineError> {
    let t = Table::read(path)?;
    let i_f = t.col("feature", path)?;
    let i_v = t.col("mean_abs_shap", path).or_else(|_| t.col("importance", path))?;
    let i_kind = t.col("kind", path).ok();
    let n = t.rows.len().min(15);
    let vals: Vec<f64> = (0..n).map(|r| t.num(r, i_v).unwrap_or(0.0)).collect();
    let max = vals.iter().cloned().fold(0.0f64, f64::max);
    let mut svg = Svg::new(&format!("Top {n} features: {}", t.header[i_v]));
    let (l, r, top) = (200.0, W - 60.0, 40.0);
    let bar = (H - 80.0) / n as f64;
    for (k, v) in vals.iter().enumerate() {
        let y = top + k as f64 * bar;
        let dynamic = i_kind.is_some_and(|c| t.rows[k][c] == "dynamic");
        let w = scale(v.max(0.0), 0.0, max, 0.0, r - l);
        svg.rect(l, y + 2.0, w, bar - 4.0, if dynamic { "#d95f02" } else { "#1b9e77" });
        svg.text(l - 5.0, y + bar / 2.0 + 4.0, "end", &t.rows[k][i_f]);
        svg.text(l + w + 4.0, y + bar / 2.0 + 4.0, "start", &format!("{v:.4}"));
    }
    Ok(svg.finish())
}

fn cv(path: &Path) -> Result<String, PipelineError> {
    let t = Table::read(path)?;
    let (i_w, i_m, i_s) = (t.col("week", path)?, t.col("mean_f1", path)?, t.col("sd_f1", path)?);
    let pts: Vec<(f64, f64, f64)> = (0..t.rows.len())
        .filter_map(|r| Some((t.num(r, i_w)?, t.num(r, i_m)?, t.num(r, i_s).unwrap_or(0.0))))
        .collect();
    if pts.is_empty() {
        return Err(PipelineError::Render(format!("{} has no numeric rows", path.display())));
    }
    let xr = bounds(pts.iter().map(|p| p.0));
    let mut svg = Svg::new("Cross-validated macro F1 (mean +- 1 sd)");
    let (l, r, top, b) = axes(&mut svg, xr, (0.0, 1.0), "week", "F1");
    let y0 = scale(0.6, 0.0, 1.0, b, top);
    svg.line(l, y0, r, y0, "#bbbbbb");
    let mut line = Vec::new();
    for &(w, m, s) in &pts {
        let x = scale(w, xr.0, xr.1, l, r);
        let (lo, hi) = (scale(m - s, 0.0, 1.0, b, top), scale(m + s, 0.0, 1.0, b, top));
        svg.line(x, lo, x, hi, "#888888");
        line.push((x, scale(m, 0.0, 1.0, b, top)));
    }
    svg.polyline(&line, PALETTE[0]);
    for (x, y) in line {
        svg.circle(x, y, PALETTE[0]);
    }
    Ok(svg.finish())
}

fn trajectory(path: &Path) -> Result<String, PipelineError> {
    let t = Table::read(path)?;
    let (i_s, i_f, i_w, i_r) = (
        t.col("scope", path)?,
        t.col("feature", path)?,
        t.col("week", path)?,
        t.col("rank", path)?,
    );
    let scope = if t.rows.iter().any(|r| r[i_s] == "global") {
        "global".to_string()
    } else {
        t.rows[0][i_s].clone()
    };
    let mut lines: BTreeMap<&str, Vec<(f64, f64)>> = BTreeMap::new();
    for (k, row) in t.rows.iter().enumerate() {
        if row[i_s] != scope {
            continue;
        }
        if let (Some(w), Some(rank)) = (t.num(k, i_w), t.num(k, i_r)) {
            lines.entry(row[i_f].as_str()).or_default().push((w, rank));
        }
    }
    // Keep the features that are ever in the top 10.
    lines.retain(|_, pts| pts.iter().any(|p| p.1 <= 10.0));
    let xr = bounds(lines.values().flatten().map(|p| p.0));
    let yr = bounds(lines.values().flatten().map(|p| p.1));
    let mut svg = Svg::new(&format!("Feature rank over weeks ({scope})"));
    let (l, r, top, b) = axes(&mut svg, xr, yr, "week", "rank (1 = top)");
    for (j, (name, pts)) in lines.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let p: Vec<(f64, f64)> = pts
            .iter()
            .map(|&(w, rank)| (scale(w, xr.0, xr.1, l, r), scale(rank, yr.0, yr.1, top, b)))
            .collect();
        svg.polyline(&p, color);
        svg.text(r + 8.0, top + 14.0 * j as f64, "start", name);
        svg.rect(r + 2.0, top + 14.0 * j as f64 - 7.0, 5.0, 5.0, color);
    }
    Ok(svg.finish())
}

fn trend(path: &Path) -> Result<String, PipelineError> {
    let t = Table::read(path)?;
    let (i_c, i_w, i_m, i_s) = (
        t.col("cluster", path)?,
        t.col("week", path)?,
        t.col("mean_vhb", path)?,
        t.col("sd_vhb", path)?,
    );
    let mut lines: BTreeMap<&str, Vec<(f64, f64, f64)>> = BTreeMap::new();
    for (k, row) in t.rows.iter().enumerate() {
        if let (Some(w), Some(m)) = (t.num(k, i_w), t.num(k, i_m)) {
            lines
                .entry(row[i_c].as_str())
                .or_default()
                .push((w, m, t.num(k, i_s).unwrap_or(0.0)));
        }
    }
    let xr = bounds(lines.values().flatten().map(|p| p.0));
    let yr = bounds(lines.values().flatten().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let mut svg = Svg::new("Cluster VHb over weeks (mean +- 1 sd)");
    let (l, r, top, b) = axes(&mut svg, xr, yr, "week", "VHb");
    for (j, (name, pts)) in lines.iter().enumerate() {
        let color = PALETTE[j % PALETTE.len()];
        let mut p = Vec::new();
        for &(w, m, s) in pts {
            let x = scale(w, xr.0, xr.1, l, r);
            svg.line(
                x,
                scale(m - s, yr.0, yr.1, b, top),
                x,
                scale(m + s, yr.0, yr.1, b, top),
                color,
            );
            p.push((x, scale(m, yr.0, yr.1, b, top)));
        }
        svg.polyline(&p, color);
        svg.text(r + 8.0, top + 14.0 * j as f64, "start", name);
        svg.rect(r + 2.0, top + 14.0 * j as f64 - 7.0, 5.0, 5.0, color);
    }
    Ok(svg.finish())
}

fn scatter(path: &Path) -> Result<String, PipelineError> {
    let t = Table::read(path)?;
    let (i_v, i_e) = (t.col("vhb", path)?, t.col("external", path)?);
    let pts: Vec<(f64, f64)> = (0..t.rows.len())
        .filter_map(|r| Some((t.num(r, i_v)?, t.num(r, i_e)?)))
        .collect();
    if pts.is_empty() {
        return Err(PipelineError::Render(format!("{} has no numeric rows", path.display())));
    }
    let xr = bounds(pts.iter().map(|p| p.0));
    let yr = bounds(pts.iter().map(|p| p.1));
    let mut svg = Svg::new("VHb against the external estimate");
    let (l, r, top, b) = axes(&mut svg, xr, yr, "VHb", "external estimate");
    for (x, y) in pts {
        svg.circle(scale(x, xr.0, xr.1, l, r), scale(y, yr.0, yr.1, b, top), PALETTE[2]);
    }
    Ok(svg.finish())
}

fn heatmap(path: &Path) -> Result<String, PipelineError> {
    let t = Table::read(path)?;
    let n_cols = t.header.len() - 1;
    if n_cols == 0 {
        return Err(PipelineError::Render(format!(
            "{} has no value columns",
            path.display()
        )));
    }
    let mut svg = Svg::new(&format!(
        "{}",
        path.file_name().map(|s| s.to_string_lossy()).unwrap_or_default()
    ));
    let (l, top) = (150.0, 120.0);
    let cell = ((W - l - 20.0) / n_cols as f64).min((H - top - 20.0) / t.rows.len() as f64);
    for (j, h) in t.header.iter().skip(1).enumerate() {
        let x = l + (j as f64 + 0.5) * cell;
        let _ = writeln!(
            svg.body,
            r#"<text x="{x:.2}" y="{:.2}" transform="rotate(-60 {x:.2} {:.2})">{}</text>"#,
            top - 4.0,
            top - 4.0,
            esc(h)
        );
    }
    for (i, row) in t.rows.iter().enumerate() {
        let y = top + i as f64 * cell;
        svg.text(l - 4.0, y + cell / 2.0 + 4.0, "end", &row[0]);
        for j in 0..n_cols {
            let v = t.num(i, j + 1).unwrap_or(0.0).clamp(-1.0, 1.0);
            // Blue for negative, red for positive, white at 0.
            let a = (255.0 * (1.0 - v.abs())).round() as u8;
            let fill = if v >= 0.0 {
                format!("#ff{a:02x}{a:02x}")
            } else {
                format!("#{a:02x}{a:02x}ff")
            };
            svg.rect(l + j as f64 * cell, y, cell, cell, &fill);
        }
    }
    Ok(svg.finish())
}
