//! County text features: tweet sentiment per dominant topic and news tone.
//!
//! Tweets carry no week, so the resulting columns are static and shared by
//! every weekly run.

use std::collections::BTreeMap;

use serde::Serialize;
use vhb_core::county::{CountyId, FeatureKind, FeatureManifest, FeatureSpec, FeatureTable, RejectedRecord, WeekIndex};
use vhb_core::text::{
    apply_ngrams, county_news_tone, county_topic_sentiment, dominant_topic, grid_search_lda, mine_ngrams, normalize,
    read_tones, read_tweets, score_sentiment, Corpus, EngagementWeighting, GridCell, Lexicon, SentimentRules,
    StopWords, SuffixStripper,
};
use vhb_core::Matrix;

use crate::artifacts::{fmt_f64, ArtifactWriter};
use crate::config::{RunConfig, TextConfig};
use crate::error::PipelineError;
use crate::run::load_imputed_panel;

pub const TEXT_FEATURES: &str = "text_features.csv";
pub const TEXT_MANIFEST: &str = "text_features.manifest.json";

const NGRAM_MAX: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TextOutcome {
    pub n_documents: usize,
    pub best_k: usize,
    pub columns: Vec<String>,
    pub artifacts: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct TopicReport<'a> {
    n_documents: usize,
    n_tokens: usize,
    vocabulary: usize,
    best_k: usize,
    best_index: usize,
    grid: &'a [GridCell],
    topics: Vec<TopicWords>,
    ngrams: Vec<(String, usize)>,
    rejected: &'a [RejectedRecord],
    counties_without_tweets: usize,
    news: Option<NewsSummary>,
}

#[derive(Serialize)]
struct TopicWords {
    topic: usize,
    words: Vec<(String, f64)>,
}

#[derive(Serialize)]
struct NewsSummary {
    counties_without_articles: usize,
    duplicates_removed: usize,
    out_of_range: usize,
}

fn err(e: impl std::fmt::Display) -> PipelineError {
    PipelineError::stage("text", e)
}

/// Runs the text stage and writes `text_features.csv` (with manifest),
/// `topic_report.json` and `tweet_scores.csv` into the output directory.
pub fn run_text(cfg: &RunConfig) -> Result<TextOutcome, PipelineError> {
    let text = cfg
        .text
        .as_ref()
        .ok_or_else(|| PipelineError::Config("no text inputs configured".into()))?;
    let seed = cfg
        .seeds
        .lda
        .ok_or_else(|| PipelineError::Config("seeds.lda is required for the text stage".into()))?;
    let week = WeekIndex::new(cfg.window.0).map_err(|e| PipelineError::Config(e.to_string()))?;
    let (panel, _) = load_imputed_panel(cfg, &cfg.feature_files, week)?;
    let counties = panel.counties;
    let mut out = ArtifactWriter::new(&cfg.output_dir)?;
    let outcome = text_features(text, seed, &counties, week, cfg.pad_short_fips, &mut out)?;
    Ok(TextOutcome {
        artifacts: out.into_hashes(),
        ..outcome
    })
}

fn text_features(
    text: &TextConfig,
    seed: u64,
    counties: &[CountyId],
    week: WeekIndex,
    pad: bool,
    out: &mut ArtifactWriter,
) -> Result<TextOutcome, PipelineError> {
    let file = std::fs::File::open(&text.tweets).map_err(|e| PipelineError::io(&text.tweets, e))?;
    let (docs, rejected) = read_tweets(file, &text.tweets.display().to_string(), pad).map_err(err)?;
    for r in &rejected {
        log::warn!("{}:{}: rejected: {}", r.source, r.line, r.reason);
    }
    let lexicon = match &text.lexicon {
        Some(p) => {
            let s = std::fs::read_to_string(p).map_err(|e| PipelineError::io(p, e))?;
            Lexicon::parse_tsv(&s, &p.display().to_string()).map_err(err)?
        }
        None => Lexicon::default(),
    };
    let rules = SentimentRules::default();
    let engagement = EngagementWeighting {
        scale: text.engagement_scale,
    };
    let scores: Vec<_> = docs
        .iter()
        .map(|d| score_sentiment(d, &lexicon, &rules, &engagement))
        .collect();

    let stop = StopWords::default();
    let tokens: Vec<Vec<String>> = docs
        .iter()
        .map(|d| normalize(&d.text, &stop, &SuffixStripper))
        .collect();
    let ngrams = mine_ngrams(&tokens, NGRAM_MAX, text.ngram_min_count);
    let tokens = apply_ngrams(&tokens, &ngrams);
    let corpus = Corpus::from_tokens(&tokens);
    let grid = grid_search_lda(
        &corpus,
        &text.k_grid,
        &text.alpha_grid,
        &text.beta_grid,
        text.iterations,
        seed,
        text.top_m,
    )
    .map_err(err)?;
    let model = &grid.best;
    let topics: Vec<Option<usize>> = (0..docs.len()).map(|d| dominant_topic(model, d)).collect();

    let sentiment = county_topic_sentiment(&docs, &topics, &scores, model.k, counties, text.per_topic);
    let without_tweets = sentiment.missing.iter().filter(|r| r.iter().all(|m| *m)).count();
    let mut columns = sentiment.columns.clone();
    let mut values = sentiment.values.clone();
    let mut news = None;
    if let Some(p) = &text.tones {
        let file = std::fs::File::open(p).map_err(|e| PipelineError::io(p, e))?;
        let (records, rej) = read_tones(file, &p.display().to_string(), pad).map_err(err)?;
        let tone = county_news_tone(&records, counties);
        columns.push("news_tone".to_string());
        let mut m = Matrix::zeros(counties.len(), columns.len());
        for (i, c) in counties.iter().enumerate() {
            m.row_mut(i)[..values.cols()].copy_from_slice(values.row(i));
            m[(i, columns.len() - 1)] = tone.tone[c];
        }
        values = m;
        news = Some(NewsSummary {
            counties_without_articles: tone.missing.len(),
            duplicates_removed: tone.duplicates_removed,
            out_of_range: tone.out_of_range + rej.len(),
        });
    }

    let table = FeatureTable {
        counties: counties.to_vec(),
        features: columns
            .iter()
            .map(|n| FeatureSpec {
                name: n.clone(),
                kind: FeatureKind::Static,
                source: "text".into(),
            })
            .collect(),
        values,
        week,
    };
    out.write_csv(TEXT_FEATURES, "text", |b| table.write_csv(b))?;
    out.write_json(
        TEXT_MANIFEST,
        &FeatureManifest {
            snapshot_week: None,
            features: table.features.clone(),
        },
    )?;

    let report = TopicReport {
        n_documents: docs.len(),
        n_tokens: corpus.n_tokens(),
        vocabulary: corpus.vocab.len(),
        best_k: model.k,
        best_index: grid.best_index,
        grid: &grid.table,
        topics: (0..model.k)
            .map(|t| TopicWords {
                topic: t + 1,
                words: model.top_words(t, text.top_m),
            })
            .collect(),
        ngrams: ngrams.iter().take(50).map(|g| (g.phrase.clone(), g.count)).collect(),
        rejected: &rejected,
        counties_without_tweets: without_tweets,
        news,
    };
    out.write_json("topic_report.json", &report)?;
    let rows = docs.iter().zip(&scores).zip(&topics).map(|((d, s), t)| {
        vec![
            d.id.clone(),
            d.county.to_string(),
            fmt_f64(s.compound),
            fmt_f64(s.engagement_weight),
            t.map(|t| (t + 1).to_string()).unwrap_or_default(),
        ]
    });
    out.write_rows(
        "tweet_scores.csv",
        "text",
        &["id", "fips", "compound", "engagement_weight", "topic"],
        rows,
    )?;
    Ok(TextOutcome {
        n_documents: docs.len(),
        best_k: model.k,
        columns,
        artifacts: BTreeMap::new(),
    })
}
