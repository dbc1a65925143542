use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use vhb_core::hesitancy::Aggregation;
use vhb_pipeline::artifacts::{fmt_f64, week_tag, ArtifactWriter};
use vhb_pipeline::config::{BreaksMode, MetricMode};
use vhb_pipeline::render::{render, RenderKind};
use vhb_pipeline::{
    generate_synthetic, run_series, run_week, text_stage, validate_external, PipelineError, RunConfig, RunOptions,
    Stage, SynthParams,
};

#[derive(Parser)]
#[command(
    name = "vhb",
    version,
    about = "Behavioral vaccine hesitancy: weekly county runs and attribution"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load, impute and write the week's feature table.
    Ingest(WeekArgs),
    /// Compute VHb for the week.
    Metric(WeekArgs),
    /// Natural breaks and cluster labels.
    Breaks(WeekArgs),
    /// Filter collinear features and train the week's forest.
    Train(WeekArgs),
    /// Cross-validation, permutation importance and SHAP profiles.
    Explain(WeekArgs),
    /// Tweet sentiment, topics and news tone per county.
    Text(ConfigArgs),
    /// Correlate the week's VHb with an external estimate file.
    Validate {
        #[command(flatten)]
        week: WeekArgs,
        /// Overrides `external` from the configuration.
        #[arg(long)]
        external: Option<PathBuf>,
    },
    /// Every stage for one week.
    RunWeek(WeekArgs),
    /// Every week of the window plus cross-week aggregates.
    RunSeries {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        reuse: bool,
    },
    /// Write a synthetic input set with planted structure and a config.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 3000)]
        counties: usize,
        #[arg(long, default_value_t = 40)]
        weeks: usize,
        #[arg(long, default_value_t = 40)]
        features: usize,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// SVG figure or GeoJSON layer from an artifact.
    Render {
        #[arg(value_enum)]
        kind: RenderKind,
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// GeoJSON base layer (choropleth only).
        #[arg(long)]
        base: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    lag: Option<i64>,
    /// First and last week, e.g. `--window 4 43`.
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    window: Option<Vec<u32>>,
    #[arg(long)]
    k: Option<usize>,
    /// `monotone` or `raw`.
    #[arg(long)]
    metric_mode: Option<String>,
    /// Reuse the breaks computed at this week for every week.
    #[arg(long)]
    frozen_breaks: Option<u32>,
    /// `population` or `unweighted`.
    #[arg(long)]
    aggregation: Option<String>,
    #[arg(long)]
    collinearity_threshold: Option<f64>,
    #[arg(long)]
    n_trees: Option<usize>,
    #[arg(long)]
    max_depth: Option<usize>,
    #[arg(long)]
    min_leaf: Option<usize>,
    #[arg(long)]
    cv_folds: Option<usize>,
    #[arg(long)]
    permutation_repeats: Option<usize>,
    #[arg(long)]
    top_n: Option<usize>,
    #[arg(long)]
    seed_forest: Option<u64>,
    #[arg(long)]
    seed_permutation: Option<u64>,
    #[arg(long)]
    seed_lda: Option<u64>,
}

#[derive(Args)]
struct WeekArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    week: u32,
    /// Read upstream artifacts from the output directory when present.
    #[arg(long)]
    reuse: bool,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(v) = &self.output_dir {
            cfg.output_dir = v.clone();
        }
        if let Some(v) = self.lag {
            cfg.lag = v;
        }
        if let Some(v) = &self.window {
            cfg.window = (v[0], v[1]);
        }
        if let Some(v) = self.k {
            cfg.k = v;
        }
        if let Some(v) = &self.metric_mode {
            cfg.metric_mode = match v.as_str() {
                "monotone" => MetricMode::Monotone,
                "raw" => MetricMode::Raw,
                _ => return Err(PipelineError::Config(format!("unknown metric mode {v:?}"))),
            };
        }
        if let Some(week) = self.frozen_breaks {
            cfg.breaks_mode = BreaksMode::Frozen { week };
        }
        if let Some(v) = &self.aggregation {
            cfg.aggregation = match v.as_str() {
                "population" => Aggregation::Population,
                "unweighted" => Aggregation::Unweighted,
                _ => return Err(PipelineError::Config(format!("unknown aggregation {v:?}"))),
            };
        }
        if let Some(v) = self.collinearity_threshold {
            cfg.collinearity_threshold = v;
        }
        if let Some(v) = self.n_trees {
            cfg.forest.n_trees = v;
        }
        if let Some(v) = self.max_depth {
            cfg.forest.max_depth = Some(v);
        }
        if let Some(v) = self.min_leaf {
            cfg.forest.min_leaf = v;
        }
        if let Some(v) = self.cv_folds {
            cfg.cv_folds = v;
        }
        if let Some(v) = self.permutation_repeats {
            cfg.permutation_repeats = v;
        }
        if let Some(v) = self.top_n {
            cfg.top_n = v;
        }
        if let Some(v) = self.seed_forest {
            cfg.seeds.forest = v;
        }
        if let Some(v) = self.seed_permutation {
            cfg.seeds.permutation = v;
        }
        if let Some(v) = self.seed_lda {
            cfg.seeds.lda = Some(v);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn week_stage(args: &WeekArgs, stop: Stage) -> Result<(), PipelineError> {
    let cfg = args.config.load()?;
    let outcome = run_week(
        &cfg,
        args.week,
        RunOptions {
            reuse: args.reuse,
            stop_after: Some(stop),
        },
    )?;
    for (name, hash) in &outcome.artifacts {
        log::info!("{name} {hash}");
    }
    if let (Some(m), Some(s)) = (outcome.mean_f1, outcome.sd_f1) {
        println!("week {}: macro F1 {m:.4} +- {s:.4}", outcome.week);
    }
    println!(
        "week {}: {} artifacts in {}",
        outcome.week,
        outcome.artifacts.len(),
        cfg.output_dir.display()
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Ingest(a) => week_stage(&a, Stage::Ingest),
        Command::Metric(a) => week_stage(&a, Stage::Metric),
        Command::Breaks(a) => week_stage(&a, Stage::Breaks),
        Command::Train(a) => week_stage(&a, Stage::Train),
        Command::Explain(a) => week_stage(&a, Stage::Shap),
        Command::RunWeek(a) => week_stage(&a, Stage::Shap),
        Command::Text(c) => {
            let cfg = c.load()?;
            let t = text_stage::run_text(&cfg)?;
            println!(
                "{} documents, {} topics, columns: {}",
                t.n_documents,
                t.best_k,
                t.columns.join(",")
            );
            Ok(())
        }
        Command::Validate { week, external } => {
            let cfg = week.config.load()?;
            let path = external
                .or_else(|| cfg.external.clone())
                .ok_or_else(|| PipelineError::Config("no external estimate file given".into()))?;
            let outcome = run_week(
                &cfg,
                week.week,
                RunOptions {
                    reuse: week.reuse,
                    stop_after: Some(Stage::Metric),
                },
            )?;
            let report = validate_external(&outcome.vhb, &path, week.week)?;
            let mut out = ArtifactWriter::new(&cfg.output_dir)?;
            let rows = report
                .scatter
                .iter()
                .map(|(c, v, e)| vec![c.to_string(), fmt_f64(*v), fmt_f64(*e)]);
            out.write_rows(
                &format!("validation_{}.csv", week_tag(week.week)),
                "validate",
                &["fips", "vhb", "external"],
                rows.collect::<Vec<_>>(),
            )?;
            println!("week {}: r = {:.4} over {} counties", report.week, report.r, report.n);
            Ok(())
        }
        Command::RunSeries { config, reuse } => {
            let cfg = config.load()?;
            let s = run_series(
                &cfg,
                RunOptions {
                    reuse,
                    stop_after: None,
                },
            )?;
            for w in &s.weeks {
                if let (Some(m), Some(sd)) = (w.mean_f1, w.sd_f1) {
                    println!("week {}: macro F1 {m:.4} +- {sd:.4}", w.week);
                }
            }
            for v in &s.validation {
                println!("week {}: external r = {:.4} (n = {})", v.week, v.r, v.n);
            }
            println!("{} files in {}", s.manifest.len(), cfg.output_dir.display());
            Ok(())
        }
        Command::Synth {
            out,
            counties,
            weeks,
            features,
            k,
            seed,
        } => {
            let s = generate_synthetic(
                &SynthParams {
                    n_counties: counties,
                    n_weeks: weeks,
                    n_features: features,
                    k_planted: k,
                    seed,
                },
                &out,
            )?;
            println!("config written to {}", s.config.display());
            Ok(())
        }
        Command::Render { kind, input, out, base } => render(kind, &input, base.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
