//! Text signals: tokenization, n-grams, lexicon sentiment, LDA topics and
//! county-level aggregation of tweet sentiment and news tone.

mod aggregate;
mod lda;
mod ngrams;
mod normalize;
mod sentiment;

pub use aggregate::{
    county_news_tone, county_topic_sentiment, read_tones, read_tweets, CountyTone, ToneRecord, TopicSentiment,
};
pub use lda::{
    coherence, dominant_topic, fit_lda, grid_search_lda, infer_theta, resolve_alpha, resolve_beta, Coherence, Corpus,
    GibbsState, GridCell, GridResult, LdaParams, Prior, PriorName, TopicModel,
};
pub use ngrams::{apply_ngrams, mine_ngrams, Ngram};
pub use normalize::{normalize, tokenize, Lemmatizer, NoLemmatizer, StopWords, SuffixStripper};
pub use sentiment::{score_sentiment, EngagementWeighting, Lexicon, SentimentRules, SentimentScore};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::county::CountyId;

#[derive(Debug, Error)]
pub enum TextError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{source_name} line {line}: {reason}")]
    Parse {
        source_name: String,
        line: usize,
        reason: String,
    },
    #[error("corpus has no tokens")]
    EmptyCorpus,
    #[error("invalid topic model parameters: {0}")]
    InvalidParams(String),
    #[error("lexicon is empty")]
    EmptyLexicon,
    #[error("search grid is empty")]
    EmptyGrid,
}

/// A tweet or similar short post attributed to a county.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub county: CountyId,
    pub text: String,
    pub likes: u64,
    pub retweets: u64,
    pub replies: u64,
}
