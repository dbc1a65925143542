use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::normalize::{tokenize, word_list};
use super::{Document, TextError};

const LEXICON: &str = include_str!("../../data/lexicon.tsv");
const NEGATORS: &str = include_str!("../../data/negators.txt");
const BOOSTERS_UP: &str = include_str!("../../data/boosters_up.txt");
const BOOSTERS_DOWN: &str = include_str!("../../data/boosters_down.txt");

/// Added to a hit's magnitude per booster among the preceding tokens.
pub const BOOSTER_INCREMENT: f64 = 0.293;
/// Normalization constant of the compound score.
pub const COMPOUND_ALPHA: f64 = 15.0;
/// How many preceding tokens negators and boosters reach.
pub const SCOPE: usize = 3;

/// Largest double strictly below 1.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

#[derive(Clone, Debug, PartialEq)]
pub struct Lexicon(BTreeMap<String, f64>);

impl Lexicon {
    /// `token<TAB>valence` lines; blank lines and `#` comments ignored.
    pub fn parse_tsv(text: &str, source_name: &str) -> Result<Self, TextError> {
        let mut map = BTreeMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |reason: String| TextError::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                reason,
            };
            let mut parts = line.split('\t');
            let (Some(tok), Some(val)) = (parts.next(), parts.next()) else {
                return Err(err("expected token<TAB>valence".into()));
            };
            let v: f64 = val
                .trim()
                .parse()
                .map_err(|_| err(format!("valence {val:?} is not a number")))?;
            if !v.is_finite() {
                return Err(err("valence must be finite".into()));
            }
            map.insert(tok.trim().to_lowercase(), v);
        }
        if map.is_empty() {
            return Err(TextError::EmptyLexicon);
        }
        Ok(Self(map))
    }

    pub fn from_map(map: BTreeMap<String, f64>) -> Self {
        Self(map)
    }

    pub fn get(&self, token: &str) -> Option<f64> {
        self.0.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The same lexicon with every valence negated.
    pub fn negated(&self) -> Self {
        Self(self.0.iter().map(|(k, v)| (k.clone(), -v)).collect())
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::parse_tsv(LEXICON, "lexicon.tsv").expect("bundled lexicon parses")
    }
}

/// Negator and booster word sets.
#[derive(Clone, Debug, PartialEq)]
pub struct SentimentRules {
    pub negators: BTreeSet<String>,
    pub boosters_up: BTreeSet<String>,
    pub boosters_down: BTreeSet<String>,
}

impl SentimentRules {
    pub fn from_lists(negators: &str, up: &str, down: &str) -> Self {
        Self {
            negators: word_list(negators),
            boosters_up: word_list(up),
            boosters_down: word_list(down),
        }
    }
}

impl Default for SentimentRules {
    fn default() -> Self {
        Self::from_lists(NEGATORS, BOOSTERS_UP, BOOSTERS_DOWN)
    }
}

/// Aggregation weight `1 + scale * ln(1 + likes + retweets)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct EngagementWeighting {
    pub scale: f64,
}

impl Default for EngagementWeighting {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl EngagementWeighting {
    pub fn weight(&self, likes: u64, retweets: u64) -> f64 {
        1.0 + self.scale * ((likes + retweets) as f64).ln_1p()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SentimentScore {
    /// Raw adjusted valence sum.
    pub sum: f64,
    /// `sum / sqrt(sum^2 + 15)`, strictly inside (-1, 1).
    pub compound: f64,
    pub engagement_weight: f64,
    pub hits: usize,
}

fn valence_sum(tokens: &[String], lexicon: &Lexicon, rules: &SentimentRules) -> (f64, usize) {
    let mut sum = 0.0;
    let mut hits = 0;
    for (i, tok) in tokens.iter().enumerate() {
        let Some(v) = lexicon.get(tok) else { continue };
        hits += 1;
        let window = &tokens[i.saturating_sub(SCOPE)..i];
        let mut boost = 0.0;
        for w in window {
            if rules.boosters_up.contains(w) {
                boost += BOOSTER_INCREMENT;
            } else if rules.boosters_down.contains(w) {
                boost -= BOOSTER_INCREMENT;
            }
        }
        let mut s = v + boost * sign(v);
        if window.iter().any(|w| rules.negators.contains(w)) {
            s = -s;
        }
        sum += s;
    }
    (sum, hits)
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

pub fn compound(sum: f64) -> f64 {
    (sum / sum.hypot(COMPOUND_ALPHA.sqrt())).clamp(-BELOW_ONE, BELOW_ONE)
}

/// Lexicon sentiment of one document. Each lexicon hit contributes its
/// valence, pushed away from zero by 0.293 per up-booster (towards zero per
/// down-booster) among the three preceding tokens, and sign-flipped when a
/// negator occurs among them.
pub fn score_sentiment(
    doc: &Document,
    lexicon: &Lexicon,
    rules: &SentimentRules,
    engagement: &EngagementWeighting,
) -> SentimentScore {
    let (sum, hits) = valence_sum(&tokenize(&doc.text), lexicon, rules);
    SentimentScore {
        sum,
        compound: compound(sum),
        engagement_weight: engagement.weight(doc.likes, doc.retweets),
        hits,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::county::CountyId;

    fn doc(text: &str) -> Document {
        Document {
            id: "1".into(),
            county: CountyId::parse("01001").unwrap(),
            text: text.into(),
            likes: 0,
            retweets: 0,
            replies: 0,
        }
    }

    fn score(text: &str) -> SentimentScore {
        score_sentiment(
            &doc(text),
            &Lexicon::default(),
            &SentimentRules::default(),
            &Default::default(),
        )
    }

    #[test]
    fn good_and_not_good() {
        let expect = 1.9 / (1.9f64 * 1.9 + 15.0).sqrt();
        assert!((score("good").compound - expect).abs() < 1e-12);
        assert!((score("good").compound - 0.440).abs() < 1e-3);
        assert!((score("not good").compound + expect).abs() < 1e-12);
        assert_eq!(score("the weather today").compound, 0.0);
    }

    #[test]
    fn bundled_reference_valences() {
        let lex = Lexicon::default();
        assert_eq!(lex.get("good"), Some(1.9));
        assert_eq!(lex.get("horrible"), Some(-2.5));
    }

    #[test]
    fn boosters() {
        assert!((score("very good").sum - (1.9 + 0.293)).abs() < 1e-12);
        assert!((score("very bad").sum + (2.5 + 0.293)).abs() < 1e-12);
        assert!((score("slightly good").sum - (1.9 - 0.293)).abs() < 1e-12);
        // Out of scope: four tokens back.
        assert!((score("not a b c good").sum - 1.9).abs() < 1e-12);
    }

    #[test]
    fn engagement_weight() {
        let mut d = doc("good");
        d.likes = 3;
        d.retweets = 4;
        let s = score_sentiment(&d, &Lexicon::default(), &SentimentRules::default(), &Default::default());
        assert!((s.engagement_weight - (1.0 + 8f64.ln())).abs() < 1e-15);
    }

    #[test]
    fn compound_stays_open_interval() {
        assert!(compound(1e300) < 1.0);
        assert!(compound(-1e300) > -1.0);
    }
}
