//! Synthetic county panels with planted structure.
//!
//! Counties fall into `k_planted` latent groups with distinct weekly uptake
//! rates, so VHb separates the groups. `political_lean` is a strong
//! group signal; a few other columns carry weaker signals and the rest is
//! noise. Every file is written in the loaders' input formats together with
//! a ready-to-run `config.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;
use vhb_core::county::{FeatureKind, FeatureManifest, FeatureSpec};
use vhb_core::rng::stream_rng;

use crate::artifacts::fmt_f64;
use crate::error::PipelineError;

const GROUP_STREAM: u64 = 1;
const RATE_STREAM: u64 = 2;
const VACC_STREAM: u64 = 3;
const STATIC_STREAM: u64 = 4;
const DYNAMIC_STREAM: u64 = 5;
const GRAPH_STREAM: u64 = 6;
const TEXT_STREAM: u64 = 7;
const EXTERNAL_STREAM: u64 = 8;

/// Latest supported last week; the window starts at week 4.
const FIRST_WEEK: u32 = 4;
const LAST_WEEK: u32 = 53;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthParams {
    pub n_counties: usize,
    pub n_weeks: usize,
    /// Raw feature columns across the static and weekly files.
    pub n_features: usize,
    pub k_planted: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub config: PathBuf,
    /// Planted group of each county (0 has the highest uptake), by FIPS.
    pub groups: BTreeMap<String, usize>,
    pub window: (u32, u32),
    /// Feature carrying the strongest planted signal.
    pub informative_feature: String,
    pub collinear_pair: Option<(String, String)>,
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::io(path, e)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), PipelineError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::stage("synth", e))?;
    w.write_record(header).map_err(|e| PipelineError::stage("synth", e))?;
    for r in rows {
        w.write_record(r).map_err(|e| PipelineError::stage("synth", e))?;
    }
    w.flush().map_err(io(path))
}

fn write_json(path: &Path, v: &impl serde::Serialize) -> Result<(), PipelineError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| PipelineError::stage("synth", e))?;
    s.push('\n');
    std::fs::write(path, s).map_err(io(path))
}

/// Five-digit FIPS codes: up to 50 states, odd county codes.
fn fips_codes(n: usize) -> Vec<String> {
    let per_state = n.div_ceil(50).max(1);
    (0..n)
        .map(|i| format!("{:02}{:03}", i / per_state + 1, 2 * (i % per_state) + 1))
        .collect()
}

/// Group sizes, smallest for the lowest-hesitancy group. Five groups follow
/// a 142 : 234 : 511 : 935 : 1243 split; other k grow geometrically.
fn group_sizes(n: usize, k: usize) -> Vec<usize> {
    let weights: Vec<f64> = if k == 5 {
        vec![142.0, 234.0, 511.0, 935.0, 1243.0]
    } else {
        (0..k).map(|g| 1.6f64.powi(g as i32)).collect()
    };
    let total: f64 = weights.iter().sum();
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|w| ((w / total) * n as f64).floor() as usize)
        .collect();
    // Every group gets at least one county when possible; the remainder goes to the largest.
    for s in sizes.iter_mut() {
        if *s == 0 && n >= k {
            *s = 1;
        }
    }
    let assigned: usize = sizes.iter().sum();
    if assigned < n {
        sizes[k - 1] += n - assigned;
    } else {
        let mut over = assigned - n;
        for s in sizes.iter_mut().rev() {
            let take = over.min(s.saturating_sub(1));
            *s -= take;
            over -= take;
        }
    }
    sizes
}

/// Weekly uptake rate of each group, geometric from 0.10 down to 0.015.
fn group_rates(k: usize) -> Vec<f64> {
    (0..k)
        .map(|g| 0.10 * (0.015f64 / 0.10).powf(g as f64 / (k - 1) as f64))
        .collect()
}

/// Latent groups as contiguous regions of the county grid: counties are
/// ranked by a smooth random field and cut into `group_sizes`. Neighbour
/// imputation then averages counties of the same group, as it would on
/// spatially autocorrelated real data.
fn spatial_groups(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let cols = grid_cols(n);
    let mut rng = stream_rng(seed, &[GROUP_STREAM]);
    let waves: Vec<[f64; 3]> = (0..4)
        .map(|_| {
            [
                rng.random_range(-0.35..0.35),
                rng.random_range(-0.35..0.35),
                rng.random_range(0.0..std::f64::consts::TAU),
            ]
        })
        .collect();
    let field: Vec<f64> = (0..n)
        .map(|i| {
            let (r, c) = ((i / cols) as f64, (i % cols) as f64);
            waves.iter().map(|[a, b, p]| (a * r + b * c + p).sin()).sum::<f64>() + 0.05 * rng.random::<f64>()
        })
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| field[a].total_cmp(&field[b]).then(a.cmp(&b)));
    let mut groups = vec![0; n];
    let mut at = 0;
    for (g, size) in group_sizes(n, k).into_iter().enumerate() {
        for &i in &order[at..at + size] {
            groups[i] = g;
        }
        at += size;
    }
    groups
}

fn grid_cols(n: usize) -> usize {
    (n as f64).sqrt().ceil() as usize
}

struct FeatureColumn {
    name: String,
    kind: FeatureKind,
    values: Vec<Vec<f64>>,
}

/// Writes a synthetic input set into `out_dir` and returns where its
/// `config.json` lives.
pub fn generate_synthetic(params: &SynthParams, out_dir: &Path) -> Result<SynthOutput, PipelineError> {
    let SynthParams {
        n_counties: n,
        n_weeks,
        n_features,
        k_planted: k,
        seed,
    } = *params;
    if n == 0 || n_weeks == 0 || n_features == 0 {
        return Err(PipelineError::Config("synthetic sizes must be positive".into()));
    }
    if k < 2 || n < k {
        return Err(PipelineError::Config(
            "need k_planted >= 2 and at least one county per group".into(),
        ));
    }
    if n > 50 * 499 {
        return Err(PipelineError::Config(
            "at most 24950 synthetic counties are supported".into(),
        ));
    }
    std::fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let last_week = (FIRST_WEEK - 1 + n_weeks as u32).clamp(FIRST_WEEK + 1, LAST_WEEK);
    let window = (FIRST_WEEK, last_week);
    let fips = fips_codes(n);

    let groups = spatial_groups(n, k, seed);

    write_vaccination(out_dir, &fips, &groups, k, window, seed)?;
    write_adjacency(out_dir, n, seed)?;
    let (informative, pair, dynamic_names, pca_fields) =
        write_features(out_dir, &fips, &groups, k, window, n_features, seed)?;
    write_population(out_dir, &fips, &groups, seed)?;
    write_text(out_dir, &fips, &groups, k, seed)?;
    write_external(out_dir, &fips, &groups, k, seed)?;
    write_geojson(out_dir, &fips)?;
    // Ground truth for checking recovery; not referenced by the config.
    let planted: Vec<Vec<String>> = fips
        .iter()
        .zip(&groups)
        .map(|(f, g)| vec![f.clone(), (g + 1).to_string()])
        .collect();
    write_csv(&out_dir.join("planted_groups.csv"), &["fips", "group"], &planted)?;

    let mut feature_files = vec!["static.csv".to_string()];
    if !dynamic_names.is_empty() {
        feature_files.extend((window.0..=window.1).map(|w| format!("weekly_w{w:02}.csv")));
    }
    let mut tracked = vec![informative.clone()];
    tracked.extend(dynamic_names.iter().take(2).cloned());
    let pca_groups = if pca_fields.len() >= 2 {
        json!([{ "name": "weather", "fields": pca_fields, "variance": 0.9 }])
    } else {
        json!([])
    };
    let config = json!({
        "vaccination": "vaccination.csv",
        "feature_files": feature_files,
        "adjacency": "adjacency.csv",
        "population": "population.csv",
        "external": "external.csv",
        "geojson": "counties.geojson",
        "text": {
            "tweets": "tweets.csv",
            "tones": "tones.csv",
            "k_grid": [2, 3, 4],
            "iterations": 50,
            "ngram_min_count": 20
        },
        "output_dir": "run",
        "lag": 1,
        "window": [window.0, window.1],
        "k": k,
        "forest": { "n_trees": 100, "max_depth": 12, "balanced_bootstrap": true },
        "cv_folds": 5,
        "permutation_repeats": 5,
        "top_n": 15,
        "pca_groups": pca_groups,
        "tracked_features": tracked,
        "seeds": {
            "forest": seed ^ 0x5eed_f0e5,
            "permutation": seed ^ 0x5eed_9e7a,
            "lda": seed ^ 0x5eed_0da0
        }
    });
    let config_path = out_dir.join("config.json");
    write_json(&config_path, &config)?;
    Ok(SynthOutput {
        config: config_path,
        groups: fips.iter().cloned().zip(groups.iter().copied()).collect(),
        window,
        informative_feature: informative,
        collinear_pair: pair,
    })
}

fn write_vaccination(
    dir: &Path,
    fips: &[String],
    groups: &[usize],
    k: usize,
    window: (u32, u32),
    seed: u64,
) -> Result<(), PipelineError> {
    let rates = group_rates(k);
    let mut rate_rng = stream_rng(seed, &[RATE_STREAM]);
    let county_noise = Normal::new(0.0, 0.03).expect("valid sd");
    let week_noise = Normal::new(0.0, 0.03).expect("valid sd");
    // National pace varies smoothly over the weeks; it scales every group alike.
    let national: Vec<f64> = (0..=window.1)
        .map(|w| 1.0 + 0.25 * (f64::from(w) / 6.0).sin())
        .collect();
    let mut rows = Vec::new();
    for (i, f) in fips.iter().enumerate() {
        let mut rng = stream_rng(seed, &[VACC_STREAM, i as u64]);
        let g = groups[i];
        let base_rate = rates[g] * (1.0 + county_noise.sample(&mut rate_rng));
        // Starting coverage depends on the group; the county term is small so
        // that same-group neighbours stay interchangeable for imputation.
        let mut q = 0.02 + 0.06 * (1.0 - g as f64 / (k - 1) as f64) + 0.003 * rng.random::<f64>();
        for w in (window.0 - 1)..=window.1 {
            if w >= window.0 {
                let r = (base_rate * national[w as usize] * (1.0 + week_noise.sample(&mut rng))).clamp(0.0, 0.5);
                q = 1.0 - (1.0 - q) * (1.0 - r);
            }
            let u: f64 = rng.random();
            if u < 0.005 {
                continue; // not reported
            }
            // Occasional downward revision.
            let reported = if u < 0.007 { q * 0.97 } else { q };
            rows.push(vec![f.clone(), w.to_string(), fmt_f64(reported)]);
        }
    }
    write_csv(
        &dir.join("vaccination.csv"),
        &["fips", "week", "pct_fully_vaccinated"],
        &rows,
    )
}

/// Counties on a near-square grid, linked to the right and lower
/// neighbours plus occasional diagonals.
fn grid_edges(n: usize, seed: u64) -> Vec<(usize, usize)> {
    let cols = grid_cols(n);
    let mut rng = stream_rng(seed, &[GRAPH_STREAM]);
    let mut edges = Vec::new();
    for i in 0..n {
        let c = i % cols;
        if c + 1 < cols && i + 1 < n {
            edges.push((i, i + 1));
        }
        if i + cols < n {
            edges.push((i, i + cols));
        }
        if c + 1 < cols && i + cols + 1 < n && rng.random::<f64>() < 0.3 {
            edges.push((i, i + cols + 1));
        }
    }
    edges
}

fn write_adjacency(dir: &Path, n: usize, seed: u64) -> Result<(), PipelineError> {
    let fips = fips_codes(n);
    let rows: Vec<Vec<String>> = grid_edges(n, seed)
        .into_iter()
        .map(|(a, b)| vec![fips[a].clone(), fips[b].clone()])
        .collect();
    write_csv(&dir.join("adjacency.csv"), &["fips_a", "fips_b"], &rows)
}

#[allow(clippy::type_complexity)]
fn write_features(
    dir: &Path,
    fips: &[String],
    groups: &[usize],
    k: usize,
    window: (u32, u32),
    n_features: usize,
    seed: u64,
) -> Result<(String, Option<(String, String)>, Vec<String>, Vec<String>), PipelineError> {
    let n = fips.len();
    let mut rng = stream_rng(seed, &[STATIC_STREAM]);
    let z = Normal::new(0.0, 1.0).expect("valid sd");
    // Group position in [0, 1]; 0 is the lowest-hesitancy group.
    let pos: Vec<f64> = groups.iter().map(|&g| g as f64 / (k - 1) as f64).collect();
    let spacing = 1.0 / (k - 1) as f64;
    let mut budget = n_features;
    let mut statics: Vec<FeatureColumn> = Vec::new();
    let draw = |rng: &mut ChaCha8Rng, f: &dyn Fn(usize, f64) -> f64| -> Vec<f64> {
        (0..n).map(|i| f(i, z.sample(rng))).collect()
    };
    let take = |budget: &mut usize| {
        if *budget == 0 {
            false
        } else {
            *budget -= 1;
            true
        }
    };

    // Strong signal: lean drops by a fixed step per group.
    let lean_step = 0.36 * spacing;
    take(&mut budget);
    statics.push(FeatureColumn {
        name: "political_lean".into(),
        kind: FeatureKind::Static,
        values: vec![draw(&mut rng, &|i, e| 0.62 - 0.36 * pos[i] + 0.2 * lean_step * e)],
    });

    let mut pair = None;
    if budget >= 2 {
        take(&mut budget);
        take(&mut budget);
        let college = draw(&mut rng, &|i, e| 0.40 - 0.12 * pos[i] + 0.08 * e);
        let graduate: Vec<f64> = {
            let c = college.clone();
            draw(&mut rng, &|i, e| 0.5 * c[i] + 0.01 * e)
        };
        statics.push(FeatureColumn {
            name: "college_degree".into(),
            kind: FeatureKind::Static,
            values: vec![college],
        });
        statics.push(FeatureColumn {
            name: "graduate_degree".into(),
            kind: FeatureKind::Static,
            values: vec![graduate],
        });
        pair = Some(("college_degree".to_string(), "graduate_degree".to_string()));
    }

    let weak: [(&str, f64, f64, f64); 4] = [
        ("income_per_capita", 70000.0, -20000.0, 15000.0),
        ("uninsured_rate", 0.07, 0.07, 0.04),
        ("life_expectancy", 80.0, -3.0, 2.5),
        ("metro", 0.7, -0.5, 0.4),
    ];
    for (name, base, slope, sd) in weak {
        if !take(&mut budget) {
            break;
        }
        statics.push(FeatureColumn {
            name: name.into(),
            kind: FeatureKind::Static,
            values: vec![draw(&mut rng, &|i, e| base + slope * pos[i] + sd * e)],
        });
    }

    // Weekly columns: two dynamic signals and a seven-field weather block.
    let weeks: Vec<u32> = (window.0..=window.1).collect();
    let mut dynamics: Vec<FeatureColumn> = Vec::new();
    let mut dyn_rng = stream_rng(seed, &[DYNAMIC_STREAM]);
    let dyn_signals: [(&str, f64, f64, f64); 2] =
        [("search_interest", 30.0, -15.0, 8.0), ("stringency", 40.0, -5.0, 6.0)];
    for (name, base, slope, sd) in dyn_signals {
        if !take(&mut budget) {
            break;
        }
        let level: Vec<f64> = (0..n)
            .map(|i| base + slope * pos[i] + sd * z.sample(&mut dyn_rng))
            .collect();
        let values = weeks
            .iter()
            .map(|_| (0..n).map(|i| level[i] + 0.3 * sd * z.sample(&mut dyn_rng)).collect())
            .collect();
        dynamics.push(FeatureColumn {
            name: name.into(),
            kind: FeatureKind::Dynamic,
            values,
        });
    }
    let n_weather = budget.min(7);
    let mut pca_fields = Vec::new();
    if n_weather >= 2 {
        budget -= n_weather;
        let factors: Vec<[f64; 2]> = (0..n)
            .map(|_| [z.sample(&mut dyn_rng), z.sample(&mut dyn_rng)])
            .collect();
        for j in 0..n_weather {
            let (a, b) = ((j as f64 * 0.7).cos(), (j as f64 * 0.7).sin());
            let values = weeks
                .iter()
                .map(|&w| {
                    let season = (f64::from(w) / 8.0).sin();
                    (0..n)
                        .map(|i| season + a * factors[i][0] + b * factors[i][1] + 0.3 * z.sample(&mut dyn_rng))
                        .collect()
                })
                .collect();
            let name = format!("weather_{}", j + 1);
            pca_fields.push(name.clone());
            dynamics.push(FeatureColumn {
                name,
                kind: FeatureKind::Dynamic,
                values,
            });
        }
    }
    for j in 0..budget {
        statics.push(FeatureColumn {
            name: format!("noise_{:02}", j + 1),
            kind: FeatureKind::Static,
            values: vec![draw(&mut rng, &|_, e| e)],
        });
    }

    // Static file with ~0.3% of cells missing.
    let mut miss = stream_rng(seed, &[STATIC_STREAM, 1]);
    let mut header: Vec<&str> = vec!["fips"];
    header.extend(statics.iter().map(|c| c.name.as_str()));
    let rows: Vec<Vec<String>> = (0..n)
        .map(|i| {
            let mut r = vec![fips[i].clone()];
            r.extend(statics.iter().map(|c| {
                if miss.random::<f64>() < 0.003 {
                    String::new()
                } else {
                    fmt_f64(c.values[0][i])
                }
            }));
            r
        })
        .collect();
    let path = dir.join("static.csv");
    write_csv(&path, &header, &rows)?;
    write_json(&FeatureManifest::sidecar_path(&path), &manifest(None, &statics))?;

    if !dynamics.is_empty() {
        let mut header: Vec<&str> = vec!["fips"];
        header.extend(dynamics.iter().map(|c| c.name.as_str()));
        for (t, &w) in weeks.iter().enumerate() {
            let rows: Vec<Vec<String>> = (0..n)
                .map(|i| {
                    let mut r = vec![fips[i].clone()];
                    r.extend(dynamics.iter().map(|c| fmt_f64(c.values[t][i])));
                    r
                })
                .collect();
            let path = dir.join(format!("weekly_w{w:02}.csv"));
            write_csv(&path, &header, &rows)?;
            write_json(&FeatureManifest::sidecar_path(&path), &manifest(Some(w), &dynamics))?;
        }
    }
    let dynamic_names = dynamics
        .iter()
        .filter(|c| !c.name.starts_with("weather_"))
        .map(|c| c.name.clone())
        .collect();
    Ok(("political_lean".into(), pair, dynamic_names, pca_fields))
}

fn manifest(week: Option<u32>, cols: &[FeatureColumn]) -> FeatureManifest {
    FeatureManifest {
        snapshot_week: week,
        features: cols
            .iter()
            .map(|c| FeatureSpec {
                name: c.name.clone(),
                kind: c.kind,
                source: "synthetic".into(),
            })
            .collect(),
    }
}

fn write_population(dir: &Path, fips: &[String], groups: &[usize], seed: u64) -> Result<(), PipelineError> {
    let mut rng = stream_rng(seed, &[STATIC_STREAM, 2]);
    let rows: Vec<Vec<String>> = fips
        .iter()
        .zip(groups)
        .map(|(f, &g)| {
            // Low-hesitancy groups are more urban and larger.
            let scale = 200_000.0 / (1.0 + g as f64);
            let pop = (scale * (0.2 + 1.6 * rng.random::<f64>())).round().max(100.0);
            vec![f.clone(), fmt_f64(pop)]
        })
        .collect();
    write_csv(&dir.join("population.csv"), &["fips", "population"], &rows)
}

const TOPIC_WORDS: [&[&str]; 3] = [
    &[
        "appointment",
        "clinic",
        "dose",
        "pharmacy",
        "booster",
        "shot",
        "schedule",
        "walk",
    ],
    &[
        "mandate",
        "government",
        "freedom",
        "choice",
        "law",
        "school",
        "employer",
        "rule",
    ],
    &["side", "effect", "fever", "arm", "symptom", "reaction", "data", "study"],
];
const POSITIVE: [&str; 6] = ["good", "great", "safe", "happy", "grateful", "hope"];
const NEGATIVE: [&str; 6] = ["bad", "scared", "terrible", "worried", "fake", "danger"];

fn write_text(dir: &Path, fips: &[String], groups: &[usize], k: usize, seed: u64) -> Result<(), PipelineError> {
    let mut rng = stream_rng(seed, &[TEXT_STREAM]);
    let mut tweets = Vec::new();
    let mut tones = Vec::new();
    let mut article = 0usize;
    for (i, f) in fips.iter().enumerate() {
        let pos = groups[i] as f64 / (k - 1) as f64;
        let p_positive = 0.8 - 0.5 * pos;
        let n_tweets = rng.random_range(1..=3);
        for t in 0..n_tweets {
            let topic = rng.random_range(0..TOPIC_WORDS.len());
            let mut words: Vec<&str> = (0..rng.random_range(6..=10))
                .map(|_| TOPIC_WORDS[topic][rng.random_range(0..TOPIC_WORDS[topic].len())])
                .collect();
            let lex = if rng.random::<f64>() < p_positive {
                &POSITIVE
            } else {
                &NEGATIVE
            };
            words.insert(rng.random_range(0..=words.len()), lex[rng.random_range(0..lex.len())]);
            if rng.random::<f64>() < 0.1 {
                words.insert(0, "not");
            }
            tweets.push(vec![
                format!("t{i}_{t}"),
                f.clone(),
                words.join(" "),
                rng.random_range(0..50u32).to_string(),
                rng.random_range(0..10u32).to_string(),
                rng.random_range(0..5u32).to_string(),
            ]);
        }
        if rng.random::<f64>() < 0.8 {
            let tone =
                (3.0 - 6.0 * pos + 2.0 * Normal::new(0.0, 1.0).expect("sd").sample(&mut rng)).clamp(-100.0, 100.0);
            tones.push(vec![format!("a{article}"), f.clone(), fmt_f64(tone)]);
            article += 1;
        }
    }
    write_csv(
        &dir.join("tweets.csv"),
        &["id", "fips", "text", "likes", "retweets", "replies"],
        &tweets,
    )?;
    write_csv(&dir.join("tones.csv"), &["article_id", "fips", "tone"], &tones)
}

/// Survey-style hesitancy estimate: increases with the group, plus noise.
fn write_external(dir: &Path, fips: &[String], groups: &[usize], k: usize, seed: u64) -> Result<(), PipelineError> {
    let mut rng = stream_rng(seed, &[EXTERNAL_STREAM]);
    let noise = Normal::new(0.0, 0.04).expect("valid sd");
    let rows: Vec<Vec<String>> = fips
        .iter()
        .zip(groups)
        .map(|(f, &g)| {
            let v = 0.1 + 0.15 * g as f64 / (k - 1) as f64 + noise.sample(&mut rng);
            vec![f.clone(), fmt_f64(v)]
        })
        .collect();
    write_csv(&dir.join("external.csv"), &["fips", "estimate"], &rows)
}

/// One unit square per county on the adjacency grid.
fn write_geojson(dir: &Path, fips: &[String]) -> Result<(), PipelineError> {
    let cols = (fips.len() as f64).sqrt().ceil() as usize;
    let features: Vec<serde_json::Value> = fips
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let (x, y) = ((i % cols) as f64, -((i / cols) as f64));
            json!({
                "type": "Feature",
                "properties": { "fips": f },
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[[x, y], [x + 1.0, y], [x + 1.0, y - 1.0], [x, y - 1.0], [x, y]]]
                }
            })
        })
        .collect();
    write_json(
        &dir.join("counties.geojson"),
        &json!({ "type": "FeatureCollection", "features": features }),
    )
}
