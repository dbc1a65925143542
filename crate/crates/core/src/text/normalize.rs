use std::collections::BTreeSet;

const STOPWORDS: &str = include_str!("../../data/stopwords.txt");

/// Word list with one entry per line; blank lines and `#` comments ignored.
pub(crate) fn word_list(text: &str) -> BTreeSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct StopWords(pub BTreeSet<String>);

impl StopWords {
    pub fn parse(text: &str) -> Self {
        Self(word_list(text))
    }

    pub fn contains(&self, w: &str) -> bool {
        self.0.contains(w)
    }
}

impl Default for StopWords {
    fn default() -> Self {
        Self::parse(STOPWORDS)
    }
}

/// Maps an inflected token to a base form.
pub trait Lemmatizer: Sync {
    fn lemma(&self, token: &str) -> String;
}

pub struct NoLemmatizer;

impl Lemmatizer for NoLemmatizer {
    fn lemma(&self, token: &str) -> String {
        token.to_string()
    }
}

/// Rule-based suffix stripping: `-ies` to `-y`, `-sses` to `-ss`, `-ing`
/// (undoubling a trailing consonant), plural `-s`.
pub struct SuffixStripper;

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| "aeiouy".contains(c))
}

impl Lemmatizer for SuffixStripper {
    fn lemma(&self, t: &str) -> String {
        if !t.is_ascii() {
            return t.to_string();
        }
        if let Some(stem) = t.strip_suffix("ies") {
            if stem.len() >= 2 {
                return format!("{stem}y");
            }
        }
        if let Some(stem) = t.strip_suffix("sses") {
            return format!("{stem}ss");
        }
        if let Some(stem) = t.strip_suffix("ing") {
            if stem.len() >= 3 && has_vowel(stem) {
                let b = stem.as_bytes();
                let n = b.len();
                if b[n - 1] == b[n - 2] && !b"aeiouylsz".contains(&b[n - 1]) {
                    return stem[..n - 1].to_string();
                }
                return stem.to_string();
            }
        }
        if let Some(stem) = t.strip_suffix('s') {
            if t.len() > 3 && !["ss", "us", "is"].iter().any(|s| t.ends_with(s)) {
                return stem.to_string();
            }
        }
        t.to_string()
    }
}

/// Lowercased word tokens with URLs and @-mentions removed and `#` stripped
/// from hashtags. Apostrophes inside words are kept so contractions such as
/// "don't" survive; stop words are kept. This is the sentiment track.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let lower = chunk.to_lowercase();
        if lower.starts_with("http://") || lower.starts_with("https://") || lower.starts_with("www.") {
            continue;
        }
        if lower.starts_with('@') {
            continue;
        }
        for piece in lower.split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '\u{2019}')) {
            let w = piece
                .trim_matches(|c| c == '\'' || c == '\u{2019}')
                .replace('\u{2019}', "'");
            if !w.is_empty() {
                out.push(w);
            }
        }
    }
    out
}

/// Topic-track tokens: [`tokenize`], apostrophes dropped, stop words removed,
/// then lemmatized.
pub fn normalize(text: &str, stop: &StopWords, lemmatizer: &dyn Lemmatizer) -> Vec<String> {
    tokenize(text)
        .into_iter()
        .map(|t| t.replace('\'', ""))
        .filter(|t| !t.is_empty() && !stop.contains(t))
        .map(|t| lemmatizer.lemma(&t))
        .filter(|t| !stop.contains(t))
        .collect()
}
