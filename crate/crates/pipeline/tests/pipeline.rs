use std::collections::BTreeMap;
use std::path::Path;

use vhb_core::breaks::jenks_breaks;
use vhb_core::county::CountyId;
use vhb_pipeline::artifacts::hash_directory;
use vhb_pipeline::config::BreaksMode;
use vhb_pipeline::render::{render_to_string, RenderKind};
use vhb_pipeline::{
    generate_synthetic, run_series, run_week, validate_external, PipelineError, RunConfig, RunOptions, Stage,
    SynthOutput, SynthParams,
};

fn synth(dir: &Path, n_counties: usize, n_weeks: usize, k: usize, seed: u64) -> (SynthOutput, RunConfig) {
    let out = generate_synthetic(
        &SynthParams {
            n_counties,
            n_weeks,
            n_features: 20,
            k_planted: k,
            seed,
        },
        dir,
    )
    .unwrap();
    let mut cfg = RunConfig::load(&out.config).unwrap();
    cfg.forest.n_trees = 20;
    cfg.permutation_repeats = 2;
    if let Some(t) = &mut cfg.text {
        t.iterations = 20;
    }
    (out, cfg)
}

fn read_rows(path: &Path) -> Vec<BTreeMap<String, String>> {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header: Vec<String> = r.headers().unwrap().iter().map(String::from).collect();
    r.records()
        .map(|rec| {
            header
                .iter()
                .cloned()
                .zip(rec.unwrap().iter().map(String::from))
                .collect()
        })
        .collect()
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn column(path: &Path, key: &str, value: &str) -> BTreeMap<String, String> {
    read_rows(path)
        .into_iter()
        .map(|r| (r[key].clone(), r[value].clone()))
        .collect()
}

#[test]
fn week_run_writes_every_artifact() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, cfg) = synth(tmp.path(), 100, 20, 3, 1);
    let outcome = run_week(&cfg, 23, RunOptions::default()).unwrap();
    for name in [
        "vhb_w23.csv",
        "breaks_w23.json",
        "clusters_w23.csv",
        "forest_w23.json",
        "cv_w23.json",
        "permutation_w23.csv",
        "importance_w23.csv",
        "profiles_w23.csv",
        "shap_w23.csv",
        "run_manifest_w23.json",
    ] {
        assert!(cfg.output_dir.join(name).is_file(), "{name} missing");
    }
    let manifest = json(&cfg.output_dir.join("run_manifest_w23.json"));
    assert_eq!(manifest["config_hash"], cfg.hash());
    assert_eq!(manifest["seeds"]["forest"], vhb_pipeline::run::forest_seed(&cfg, 23));
    // Every file the week wrote is listed with its hash.
    let on_disk = hash_directory(&cfg.output_dir).unwrap();
    let listed = manifest["artifacts"].as_object().unwrap();
    for (name, hash) in listed {
        assert_eq!(on_disk[name], hash.as_str().unwrap(), "{name}");
    }
    for name in on_disk.keys().filter(|n| n.contains("_w23")) {
        assert!(
            listed.contains_key(name) || name == "run_manifest_w23.json",
            "{name} unlisted"
        );
    }
    assert!(outcome.mean_f1.is_some() && outcome.shap_ranking.is_some());
}

#[test]
fn week_outside_window_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, cfg) = synth(tmp.path(), 30, 6, 2, 2);
    match run_week(&cfg, cfg.window.1 + 1, RunOptions::default()) {
        Err(PipelineError::WeekOutsideWindow { week, .. }) => assert_eq!(week, cfg.window.1 + 1),
        other => panic!("expected a window error, got {other:?}"),
    }
}

#[test]
fn rerun_is_byte_identical_and_cache_reproduces_downstream() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, cfg) = synth(tmp.path(), 80, 10, 3, 3);
    run_week(&cfg, 9, RunOptions::default()).unwrap();
    let first = hash_directory(&cfg.output_dir).unwrap();
    run_week(&cfg, 9, RunOptions::default()).unwrap();
    assert_eq!(first, hash_directory(&cfg.output_dir).unwrap());

    // Delete everything downstream of the forest and rebuild from the cache.
    for name in [
        "cv_w09.json",
        "confusion_w09.csv",
        "permutation_w09.csv",
        "shap_w09.csv",
        "shap_base_w09.csv",
        "importance_w09.csv",
        "profiles_w09.csv",
        "cluster_features_w09.csv",
        "run_manifest_w09.json",
    ] {
        std::fs::remove_file(cfg.output_dir.join(name)).unwrap();
    }
    run_week(
        &cfg,
        9,
        RunOptions {
            reuse: true,
            stop_after: None,
        },
    )
    .unwrap();
    assert_eq!(first, hash_directory(&cfg.output_dir).unwrap());
}

#[test]
fn stop_after_limits_the_chain() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, cfg) = synth(tmp.path(), 40, 6, 2, 4);
    run_week(
        &cfg,
        6,
        RunOptions {
            reuse: false,
            stop_after: Some(Stage::Breaks),
        },
    )
    .unwrap();
    assert!(cfg.output_dir.join("clusters_w06.csv").is_file());
    assert!(!cfg.output_dir.join("forest_w06.json").exists());
    let m = json(&cfg.output_dir.join("run_manifest_w06.json"));
    assert_eq!(m["stages"], serde_json::json!(["ingest", "metric", "breaks"]));
}

#[test]
fn frozen_breaks_reuse_reference_boundaries() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut cfg) = synth(tmp.path(), 150, 14, 3, 5);
    let opts = RunOptions {
        reuse: false,
        stop_after: Some(Stage::Breaks),
    };
    run_week(&cfg, 10, opts).unwrap();
    run_week(&cfg, 15, opts).unwrap();
    let recomputed = json(&cfg.output_dir.join("breaks_w15.json"))["breaks"]["boundaries"].clone();

    // Oracle: boundaries from an independent Jenks fit on the week-10 values.
    let vhb10: Vec<f64> = column(&cfg.output_dir.join("clusters_w10.csv"), "fips", "vhb")
        .values()
        .map(|v| v.parse().unwrap())
        .collect();
    let reference = jenks_breaks(&vhb10, cfg.k).unwrap().boundaries;

    cfg.breaks_mode = BreaksMode::Frozen { week: 10 };
    cfg.output_dir = tmp.path().join("frozen");
    run_week(&cfg, 15, opts).unwrap();
    let b = json(&cfg.output_dir.join("breaks_w15.json"));
    let frozen: Vec<f64> = serde_json::from_value(b["breaks"]["boundaries"].clone()).unwrap();
    assert_eq!(frozen, reference);
    assert_ne!(serde_json::to_value(&frozen).unwrap(), recomputed);
    for r in read_rows(&cfg.output_dir.join("clusters_w15.csv")) {
        let v: f64 = r["vhb"].parse().unwrap();
        let class = 1 + reference.iter().filter(|&&x| v >= x).count();
        assert_eq!(r["cluster"], format!("C{class}"), "{}", r["fips"]);
    }
}

#[test]
fn two_week_series_aggregates() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut cfg) = synth(tmp.path(), 60, 12, 3, 6);
    cfg.window = (10, 11);
    let s = run_series(&cfg, RunOptions::default()).unwrap();
    assert_eq!(s.weeks.len(), 2);

    let traj = read_rows(&cfg.output_dir.join("rank_trajectory.csv"));
    let mut per_feature: BTreeMap<(String, String), usize> = BTreeMap::new();
    for r in &traj {
        *per_feature
            .entry((r["scope"].clone(), r["feature"].clone()))
            .or_default() += 1;
    }
    assert!(!per_feature.is_empty());
    assert!(per_feature.values().all(|&n| n == 2));

    let trend = read_rows(&cfg.output_dir.join("cluster_trend.csv"));
    assert_eq!(trend.len(), cfg.k * 2);
    let mut keys: Vec<(String, String)> = trend
        .iter()
        .map(|r| (r["cluster"].clone(), r["week"].clone()))
        .collect();
    keys.dedup();
    assert_eq!(keys.len(), cfg.k * 2);

    let manifest = json(&cfg.output_dir.join("manifest.json"));
    let listed = manifest["files"].as_object().unwrap();
    let on_disk = hash_directory(&cfg.output_dir).unwrap();
    assert_eq!(listed.len() + 1, on_disk.len());
    for (name, hash) in listed {
        assert_eq!(on_disk[name], hash.as_str().unwrap());
    }
}

fn write_external(path: &Path, rows: &[(CountyId, f64)]) {
    let mut w = csv::Writer::from_path(path).unwrap();
    w.write_record(["fips", "estimate"]).unwrap();
    for (c, v) in rows {
        w.write_record([c.to_string(), v.to_string()]).unwrap();
    }
    w.flush().unwrap();
}

fn counties(n: usize) -> Vec<CountyId> {
    (0..n)
        .map(|i| CountyId::parse(&format!("{:02}{:03}", i / 400 + 1, i % 400 + 1)).unwrap())
        .collect()
}

#[test]
fn validation_affine_is_perfect() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = counties(50);
    let vhb: BTreeMap<CountyId, f64> = ids
        .iter()
        .enumerate()
        .map(|(i, c)| (c.clone(), 0.8 + (i as f64).sin() * 0.1))
        .collect();
    let ext: Vec<(CountyId, f64)> = vhb.iter().map(|(c, v)| (c.clone(), 3.0 * v - 1.0)).collect();
    let p = tmp.path().join("ext.csv");
    write_external(&p, &ext);
    let r = validate_external(&vhb, &p, 20).unwrap();
    assert_eq!(r.n, 50);
    assert!((r.r - 1.0).abs() < 1e-12);
}

#[test]
fn validation_against_noise_is_weak() {
    use rand::{Rng, SeedableRng};
    let tmp = tempfile::tempdir().unwrap();
    let ids = counties(500);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(500);
    let vhb: BTreeMap<CountyId, f64> = ids.iter().map(|c| (c.clone(), rng.random_range(0.8..1.0))).collect();
    let ext: Vec<(CountyId, f64)> = ids.iter().map(|c| (c.clone(), rng.random_range(0.0..1.0))).collect();
    let p = tmp.path().join("ext.csv");
    write_external(&p, &ext);
    let r = validate_external(&vhb, &p, 20).unwrap();
    assert!(r.r.abs() < 0.2, "r = {}", r.r);
}

#[test]
fn validation_needs_three_counties() {
    let tmp = tempfile::tempdir().unwrap();
    let ids = counties(10);
    let vhb: BTreeMap<CountyId, f64> = ids.iter().take(5).map(|c| (c.clone(), 0.9)).collect();
    let p = tmp.path().join("ext.csv");
    write_external(
        &p,
        &[(ids[0].clone(), 0.3), (ids[1].clone(), 0.4), (ids[7].clone(), 0.5)],
    );
    assert!(matches!(
        validate_external(&vhb, &p, 20),
        Err(PipelineError::InsufficientOverlap(2))
    ));
}

/// Fraction of counties whose cluster matches the planted group under the
/// best one-to-one relabeling (all permutations).
fn best_agreement(pairs: &[(usize, usize)], k: usize) -> f64 {
    let mut counts = vec![vec![0usize; k]; k];
    for &(a, b) in pairs {
        counts[a][b] += 1;
    }
    fn go(i: usize, used: &mut Vec<bool>, counts: &[Vec<usize>]) -> usize {
        if i == counts.len() {
            return 0;
        }
        let mut best = 0;
        for j in 0..counts.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(counts[i][j] + go(i + 1, used, counts));
                used[j] = false;
            }
        }
        best
    }
    go(0, &mut vec![false; k], &counts) as f64 / pairs.len() as f64
}

#[test]
fn synthetic_groups_are_recovered_and_pair_is_filtered() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, cfg) = synth(tmp.path(), 3000, 40, 5, 11);
    run_week(
        &cfg,
        20,
        RunOptions {
            reuse: false,
            stop_after: Some(Stage::Filter),
        },
    )
    .unwrap();
    let clusters = column(&cfg.output_dir.join("clusters_w20.csv"), "fips", "cluster");
    let pairs: Vec<(usize, usize)> = clusters
        .iter()
        .map(|(f, c)| (out.groups[f], c[1..].parse::<usize>().unwrap() - 1))
        .collect();
    let agreement = best_agreement(&pairs, 5);
    assert!(agreement >= 0.9, "agreement {agreement}");

    let (a, b) = out.collinear_pair.clone().unwrap();
    let filter = json(&cfg.output_dir.join("filter_w20.json"));
    let dropped: Vec<&str> = filter["dropped"]
        .as_array()
        .unwrap()
        .iter()
        .map(|d| d["name"].as_str().unwrap())
        .collect();
    assert_eq!(
        dropped.iter().filter(|d| **d == a || **d == b).count(),
        1,
        "{dropped:?}"
    );
}

#[test]
fn synthetic_generation_is_seed_pinned() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    synth(&a, 120, 8, 3, 9);
    synth(&b, 120, 8, 3, 9);
    assert_eq!(hash_directory(&a).unwrap(), hash_directory(&b).unwrap());
    let c = tmp.path().join("c");
    synth(&c, 120, 8, 3, 10);
    assert_ne!(hash_directory(&a).unwrap(), hash_directory(&c).unwrap());
}

#[test]
fn renders_are_deterministic_and_join_clusters() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, cfg) = synth(tmp.path(), 60, 8, 3, 12);
    run_week(&cfg, 8, RunOptions::default()).unwrap();
    let dir = &cfg.output_dir;
    for (kind, file) in [
        (RenderKind::Importance, "importance_w08.csv"),
        (RenderKind::Importance, "permutation_w08.csv"),
        (RenderKind::Heatmap, "collinearity_w08.csv"),
        (RenderKind::Heatmap, "confusion_w08.csv"),
    ] {
        let a = render_to_string(kind, &dir.join(file), None).unwrap();
        let b = render_to_string(kind, &dir.join(file), None).unwrap();
        assert_eq!(a, b);
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
    }

    let geo = render_to_string(
        RenderKind::Choropleth,
        &dir.join("clusters_w08.csv"),
        cfg.geojson.as_deref(),
    )
    .unwrap();
    let geo: serde_json::Value = serde_json::from_str(&geo).unwrap();
    let clusters = column(&dir.join("clusters_w08.csv"), "fips", "cluster");
    let features = geo["features"].as_array().unwrap();
    assert_eq!(features.len(), 60);
    for f in features {
        let fips = f["properties"]["fips"].as_str().unwrap();
        assert_eq!(
            f["properties"]["cluster"].as_str(),
            clusters.get(fips).map(String::as_str)
        );
    }
    let err = render_to_string(RenderKind::Choropleth, &dir.join("clusters_w08.csv"), None).unwrap_err();
    assert!(err.to_string().contains("base layer"));
}

#[test]
fn empty_artifact_error_names_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path().join("importance_w10.csv");
    std::fs::write(&p, "rank,feature,mean_abs_shap,kind\n").unwrap();
    let err = render_to_string(RenderKind::Importance, &p, None).unwrap_err();
    assert!(err.to_string().contains("importance_w10.csv"), "{err}");
    std::fs::write(&p, "").unwrap();
    let err = render_to_string(RenderKind::Importance, &p, None).unwrap_err();
    assert!(err.to_string().contains("importance_w10.csv"), "{err}");
}

#[test]
fn series_renders() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mut cfg) = synth(tmp.path(), 60, 10, 3, 13);
    cfg.window = (8, 10);
    run_series(&cfg, RunOptions::default()).unwrap();
    for (kind, file) in [
        (RenderKind::Cv, "cv_summary.csv"),
        (RenderKind::Trajectory, "rank_trajectory.csv"),
        (RenderKind::Trend, "cluster_trend.csv"),
        (RenderKind::Scatter, "validation_scatter.csv"),
    ] {
        let s = render_to_string(kind, &cfg.output_dir.join(file), None).unwrap();
        assert!(s.contains("<polyline") || s.contains("<circle"), "{file}");
    }
}

#[test]
fn cli_failure_is_stage_tagged() {
    let tmp = tempfile::tempdir().unwrap();
    let (out, _) = synth(tmp.path(), 30, 6, 2, 14);
    let o = std::process::Command::new(env!("CARGO_BIN_EXE_vhb"))
        .args(["run-week", "--config"])
        .arg(&out.config)
        .args(["--week", "52"])
        .output()
        .unwrap();
    assert!(!o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("week 52 lies outside"), "{err}");

    let o = std::process::Command::new(env!("CARGO_BIN_EXE_vhb"))
        .args(["render", "importance", "missing.csv", "--out"])
        .arg(tmp.path().join("x.svg"))
        .output()
        .unwrap();
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.csv"));
}
