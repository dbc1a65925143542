use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Ngram {
    /// Constituent tokens joined with `_`.
    pub phrase: String,
    pub n: usize,
    pub count: usize,
}

fn count_ngrams(corpus: &[Vec<String>], n: usize) -> BTreeMap<Vec<&str>, usize> {
    let mut counts = BTreeMap::new();
    for doc in corpus {
        for w in doc.windows(n) {
            *counts.entry(w.iter().map(String::as_str).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Contiguous 2..=`n_max` word sequences occurring at least `min_count`
/// times, most frequent first (ties by phrase).
pub fn mine_ngrams(corpus: &[Vec<String>], n_max: usize, min_count: usize) -> Vec<Ngram> {
    let mut out = Vec::new();
    for n in 2..=n_max.max(2) {
        for (words, count) in count_ngrams(corpus, n) {
            if count >= min_count {
                out.push(Ngram {
                    phrase: words.join("_"),
                    n,
                    count,
                });
            }
        }
    }
    out.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.phrase.cmp(&b.phrase)));
    out
}

/// Replaces every occurrence of a mined phrase with its joined token,
/// scanning left to right and preferring the longest phrase at each position.
pub fn apply_ngrams(corpus: &[Vec<String>], ngrams: &[Ngram]) -> Vec<Vec<String>> {
    let phrases: BTreeSet<&str> = ngrams.iter().map(|g| g.phrase.as_str()).collect();
    let n_max = ngrams.iter().map(|g| g.n).max().unwrap_or(1);
    corpus
        .iter()
        .map(|doc| {
            let mut out = Vec::with_capacity(doc.len());
            let mut i = 0;
            while i < doc.len() {
                let hit = (2..=n_max.min(doc.len() - i)).rev().find_map(|n| {
                    let p = doc[i..i + n].join("_");
                    phrases.contains(p.as_str()).then_some((n, p))
                });
                match hit {
                    Some((n, p)) => {
                        out.push(p);
                        i += n;
                    }
                    None => {
                        out.push(doc[i].clone());
                        i += 1;
                    }
                }
            }
            out
        })
        .collect()
}
