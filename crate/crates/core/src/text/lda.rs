use std::collections::BTreeMap;
use std::fmt;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::TextError;
use crate::rng::{derive_seed, stream_rng};
use crate::Matrix;

const LDA_STREAM: u64 = 0x006c_6461;
const GRID_STREAM: u64 = 0x6772_6964;
const INFER_STREAM: u64 = 0x696e_6672;

/// Tokenized documents over an integer vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    /// Sorted vocabulary.
    pub vocab: Vec<String>,
    pub docs: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn from_tokens(docs: &[Vec<String>]) -> Self {
        let mut index: BTreeMap<&str, u32> = docs.iter().flatten().map(|w| (w.as_str(), 0)).collect();
        for (i, v) in index.values_mut().enumerate() {
            *v = i as u32;
        }
        let encoded = docs
            .iter()
            .map(|d| d.iter().map(|w| index[w.as_str()]).collect())
            .collect();
        Self {
            vocab: index.keys().map(|s| s.to_string()).collect(),
            docs: encoded,
        }
    }

    pub fn n_tokens(&self) -> usize {
        self.docs.iter().map(Vec::len).sum()
    }

    /// Word ids of `tokens` that are in the vocabulary.
    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens
            .iter()
            .filter_map(|t| self.vocab.binary_search(t).ok().map(|i| i as u32))
            .collect()
    }
}

/// Dirichlet prior setting as accepted in configuration: a number or one of
/// `"symmetric"`, `"asymmetric"`, `"auto"`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Prior {
    Value(f64),
    Named(PriorName),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorName {
    Symmetric,
    Asymmetric,
    Auto,
}

impl fmt::Display for Prior {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Prior::Value(v) => write!(f, "{v}"),
            Prior::Named(PriorName::Symmetric) => f.write_str("symmetric"),
            Prior::Named(PriorName::Asymmetric) => f.write_str("asymmetric"),
            Prior::Named(PriorName::Auto) => f.write_str("auto"),
        }
    }
}

/// Document-topic prior vector. `symmetric` and `auto` give `1/K` per topic;
/// `asymmetric` gives `alpha_k` proportional to `1/(k + sqrt K)`, normalized
/// to sum to 1.
pub fn resolve_alpha(prior: Prior, k: usize) -> Result<Vec<f64>, TextError> {
    match prior {
        Prior::Value(v) if v > 0.0 && v.is_finite() => Ok(vec![v; k]),
        Prior::Value(v) => Err(TextError::InvalidParams(format!("alpha must be positive, got {v}"))),
        Prior::Named(PriorName::Symmetric | PriorName::Auto) => Ok(vec![1.0 / k as f64; k]),
        Prior::Named(PriorName::Asymmetric) => {
            let raw: Vec<f64> = (0..k).map(|i| 1.0 / (i as f64 + (k as f64).sqrt())).collect();
            let s: f64 = raw.iter().sum();
            Ok(raw.into_iter().map(|r| r / s).collect())
        }
    }
}

/// Topic-word prior. `symmetric` and `auto` give `1/K`; `asymmetric` is not
/// supported for the topic-word side.
pub fn resolve_beta(prior: Prior, k: usize) -> Result<f64, TextError> {
    match prior {
        Prior::Value(v) if v > 0.0 && v.is_finite() => Ok(v),
        Prior::Value(v) => Err(TextError::InvalidParams(format!("beta must be positive, got {v}"))),
        Prior::Named(PriorName::Symmetric | PriorName::Auto) => Ok(1.0 / k as f64),
        Prior::Named(PriorName::Asymmetric) => Err(TextError::InvalidParams("asymmetric beta is not supported".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LdaParams {
    pub k: usize,
    pub alpha: Prior,
    pub beta: Prior,
    pub iterations: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TopicModel {
    pub k: usize,
    pub vocab: Vec<String>,
    /// `K x V` topic-word distributions.
    pub phi: Matrix,
    /// `D x K` document-topic distributions.
    pub theta: Matrix,
    pub alpha: Vec<f64>,
    pub beta: f64,
    pub doc_lengths: Vec<usize>,
    pub seed: u64,
    pub iterations: usize,
    #[serde(skip)]
    pub assignments: Vec<Vec<u16>>,
}

impl TopicModel {
    /// Word ids of topic `t` by descending probability, lowest id on ties.
    pub fn top_word_ids(&self, t: usize, m: usize) -> Vec<usize> {
        let row = self.phi.row(t);
        let mut ids: Vec<usize> = (0..row.len()).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(m);
        ids
    }

    pub fn top_words(&self, t: usize, m: usize) -> Vec<(String, f64)> {
        self.top_word_ids(t, m)
            .into_iter()
            .map(|w| (self.vocab[w].clone(), self.phi[(t, w)]))
            .collect()
    }
}

/// Collapsed Gibbs sampler state.
pub struct GibbsState {
    k: usize,
    v: usize,
    alpha: Vec<f64>,
    beta: f64,
    z: Vec<Vec<u16>>,
    ndk: Vec<u32>,
    nkw: Vec<u32>,
    nk: Vec<u32>,
    rng: ChaCha8Rng,
    probs: Vec<f64>,
}

impl GibbsState {
    pub fn new(corpus: &Corpus, params: &LdaParams) -> Result<Self, TextError> {
        if params.k == 0 || params.k > u16::MAX as usize {
            return Err(TextError::InvalidParams(format!("K = {} out of range", params.k)));
        }
        if params.iterations == 0 {
            return Err(TextError::InvalidParams("iterations must be positive".into()));
        }
        if corpus.n_tokens() == 0 {
            return Err(TextError::EmptyCorpus);
        }
        let (k, v) = (params.k, corpus.vocab.len());
        let alpha = resolve_alpha(params.alpha, k)?;
        let beta = resolve_beta(params.beta, k)?;
        let mut rng = stream_rng(params.seed, &[LDA_STREAM]);
        let mut ndk = vec![0u32; corpus.docs.len() * k];
        let mut nkw = vec![0u32; k * v];
        let mut nk = vec![0u32; k];
        let z = corpus
            .docs
            .iter()
            .enumerate()
            .map(|(d, doc)| {
                doc.iter()
                    .map(|&w| {
                        let t = rng.random_range(0..k);
                        ndk[d * k + t] += 1;
                        nkw[t * v + w as usize] += 1;
                        nk[t] += 1;
                        t as u16
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            k,
            v,
            alpha,
            beta,
            z,
            ndk,
            nkw,
            nk,
            rng,
            probs: vec![0.0; k],
        })
    }

    /// One pass resampling every token's topic.
    pub fn sweep(&mut self, corpus: &Corpus) {
        let (k, v) = (self.k, self.v);
        let vbeta = v as f64 * self.beta;
        for (d, doc) in corpus.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let w = w as usize;
                let old = self.z[d][i] as usize;
                self.ndk[d * k + old] -= 1;
                self.nkw[old * v + w] -= 1;
                self.nk[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    total += (f64::from(self.ndk[d * k + t]) + self.alpha[t])
                        * (f64::from(self.nkw[t * v + w]) + self.beta)
                        / (f64::from(self.nk[t]) + vbeta);
                    self.probs[t] = total;
                }
                let u = self.rng.random::<f64>() * total;
                let new = self.probs.iter().position(|&c| u < c).unwrap_or(k - 1);
                self.ndk[d * k + new] += 1;
                self.nkw[new * v + w] += 1;
                self.nk[new] += 1;
                self.z[d][i] = new as u16;
            }
        }
    }

    /// Whether the count tables agree with the assignments and with each other.
    pub fn counts_consistent(&self, corpus: &Corpus) -> bool {
        let (k, v) = (self.k, self.v);
        let mut ndk = vec![0u32; corpus.docs.len() * k];
        let mut nkw = vec![0u32; k * v];
        for (d, doc) in corpus.docs.iter().enumerate() {
            for (i, &w) in doc.iter().enumerate() {
                let t = self.z[d][i] as usize;
                ndk[d * k + t] += 1;
                nkw[t * v + w as usize] += 1;
            }
        }
        let doc_ok = corpus
            .docs
            .iter()
            .enumerate()
            .all(|(d, doc)| self.ndk[d * k..(d + 1) * k].iter().map(|&c| c as usize).sum::<usize>() == doc.len());
        let topic_ok = (0..k).all(|t| self.nkw[t * v..(t + 1) * v].iter().sum::<u32>() == self.nk[t]);
        doc_ok && topic_ok && ndk == self.ndk && nkw == self.nkw
    }

    pub fn assignments(&self) -> &[Vec<u16>] {
        &self.z
    }

    pub fn into_model(self, corpus: &Corpus, params: &LdaParams) -> TopicModel {
        let (k, v) = (self.k, self.v);
        let mut phi = Matrix::zeros(k, v);
        for t in 0..k {
            let denom = f64::from(self.nk[t]) + v as f64 * self.beta;
            for w in 0..v {
                phi[(t, w)] = (f64::from(self.nkw[t * v + w]) + self.beta) / denom;
            }
        }
        let alpha_sum: f64 = self.alpha.iter().sum();
        let mut theta = Matrix::zeros(corpus.docs.len(), k);
        for (d, doc) in corpus.docs.iter().enumerate() {
            let denom = doc.len() as f64 + alpha_sum;
            for t in 0..k {
                theta[(d, t)] = (f64::from(self.ndk[d * k + t]) + self.alpha[t]) / denom;
            }
        }
        TopicModel {
            k,
            vocab: corpus.vocab.clone(),
            phi,
            theta,
            alpha: self.alpha,
            beta: self.beta,
            doc_lengths: corpus.docs.iter().map(Vec::len).collect(),
            seed: params.seed,
            iterations: params.iterations,
            assignments: self.z,
        }
    }
}

/// Fits LDA by collapsed Gibbs sampling; phi and theta come from the final
/// sweep's counts smoothed by the priors.
pub fn fit_lda(corpus: &Corpus, params: &LdaParams) -> Result<TopicModel, TextError> {
    let mut state = GibbsState::new(corpus, params)?;
    for _ in 0..params.iterations {
        state.sweep(corpus);
        debug_assert!(state.counts_consistent(corpus));
    }
    Ok(state.into_model(corpus, params))
}

/// Index of the largest entry, lowest index on ties; `None` when empty or
/// not finite.
pub(crate) fn argmax_topic(theta: &[f64]) -> Option<usize> {
    if theta.is_empty() || theta.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let mut best = 0;
    for (t, &p) in theta.iter().enumerate() {
        if p > theta[best] {
            best = t;
        }
    }
    Some(best)
}

/// Dominant (0-based) topic of training document `doc`; `None` for an empty
/// document.
pub fn dominant_topic(model: &TopicModel, doc: usize) -> Option<usize> {
    if model.doc_lengths[doc] == 0 {
        return None;
    }
    argmax_topic(model.theta.row(doc))
}

/// Topic mixture of an unseen document by fold-in Gibbs sampling with the
/// model's topics held fixed. `None` for documents with no known words.
pub fn infer_theta(model: &TopicModel, word_ids: &[u32], iterations: usize, seed: u64) -> Option<Vec<f64>> {
    if word_ids.is_empty() {
        return None;
    }
    let k = model.k;
    let mut rng = stream_rng(seed, &[INFER_STREAM]);
    let mut counts = vec![0u32; k];
    let mut z: Vec<usize> = word_ids
        .iter()
        .map(|_| {
            let t = rng.random_range(0..k);
            counts[t] += 1;
            t
        })
        .collect();
    let mut probs = vec![0.0; k];
    for _ in 0..iterations.max(1) {
        for (i, &w) in word_ids.iter().enumerate() {
            counts[z[i]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                total += (f64::from(counts[t]) + model.alpha[t]) * model.phi[(t, w as usize)];
                probs[t] = total;
            }
            let u = rng.random::<f64>() * total;
            z[i] = probs.iter().position(|&c| u < c).unwrap_or(k - 1);
            counts[z[i]] += 1;
        }
    }
    let denom = word_ids.len() as f64 + model.alpha.iter().sum::<f64>();
    Some(
        (0..k)
            .map(|t| (f64::from(counts[t]) + model.alpha[t]) / denom)
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Coherence {
    pub per_topic: Vec<f64>,
    pub mean: f64,
    pub warnings: Vec<String>,
}

/// Document co-occurrence coherence of each topic's `top_m` words:
/// sum over pairs `j < i` of `ln((D(w_i, w_j) + 1) / D(w_j))`.
pub fn coherence(model: &TopicModel, corpus: &Corpus, top_m: usize) -> Coherence {
    let m = top_m.min(model.vocab.len());
    let mut needed: Vec<usize> = (0..model.k).flat_map(|t| model.top_word_ids(t, m)).collect();
    needed.sort_unstable();
    needed.dedup();
    let slot: BTreeMap<usize, usize> = needed.iter().enumerate().map(|(i, &w)| (w, i)).collect();
    // Per needed word, the sorted ids of documents containing it.
    let mut postings: Vec<Vec<u32>> = vec![Vec::new(); needed.len()];
    for (d, doc) in corpus.docs.iter().enumerate() {
        for &w in doc {
            if let Some(&s) = slot.get(&(w as usize)) {
                if postings[s].last() != Some(&(d as u32)) {
                    postings[s].push(d as u32);
                }
            }
        }
    }
    let co = |a: &[u32], b: &[u32]| {
        let (mut i, mut j, mut n) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    n += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        n
    };
    let mut warnings = Vec::new();
    let per_topic: Vec<f64> = (0..model.k)
        .map(|t| {
            let top: Vec<usize> = model.top_word_ids(t, m);
            let mut score = 0.0;
            for i in 1..top.len() {
                for j in 0..i {
                    let pj = &postings[slot[&top[j]]];
                    if pj.is_empty() {
                        continue;
                    }
                    let pi = &postings[slot[&top[i]]];
                    score += ((co(pi, pj) as f64 + 1.0) / pj.len() as f64).ln();
                }
            }
            for &w in &top {
                if postings[slot[&w]].is_empty() {
                    warnings.push(format!(
                        "topic {t}: word {:?} occurs in no document; pairs skipped",
                        model.vocab[w]
                    ));
                }
            }
            score
        })
        .collect();
    let mean = per_topic.iter().sum::<f64>() / per_topic.len() as f64;
    Coherence {
        per_topic,
        mean,
        warnings,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridCell {
    pub k: usize,
    pub alpha: String,
    pub beta: String,
    /// The priors the named settings resolved to.
    pub alpha_resolved: Vec<f64>,
    pub beta_resolved: f64,
    pub seed: u64,
    pub coherence: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GridResult {
    pub best: TopicModel,
    pub best_index: usize,
    pub table: Vec<GridCell>,
}

/// Fits every (K, alpha, beta) combination and keeps the model with the
/// highest mean coherence; ties go to the smaller K, then to grid order.
pub fn grid_search_lda(
    corpus: &Corpus,
    ks: &[usize],
    alphas: &[Prior],
    betas: &[Prior],
    iterations: usize,
    seed: u64,
    top_m: usize,
) -> Result<GridResult, TextError> {
    if ks.is_empty() || alphas.is_empty() || betas.is_empty() {
        return Err(TextError::EmptyGrid);
    }
    let mut cells = Vec::new();
    for &k in ks {
        for (ai, &alpha) in alphas.iter().enumerate() {
            for (bi, &beta) in betas.iter().enumerate() {
                let cell_seed = derive_seed(seed, &[GRID_STREAM, k as u64, ai as u64, bi as u64]);
                cells.push(LdaParams {
                    k,
                    alpha,
                    beta,
                    iterations,
                    seed: cell_seed,
                });
            }
        }
    }
    let fitted: Vec<Result<(TopicModel, f64), TextError>> = cells
        .par_iter()
        .map(|p| {
            let model = fit_lda(corpus, p)?;
            let c = coherence(&model, corpus, top_m).mean;
            Ok((model, c))
        })
        .collect();
    let mut models = Vec::with_capacity(fitted.len());
    for r in fitted {
        models.push(r?);
    }
    let best_index = (0..models.len())
        .min_by(|&a, &b| {
            models[b]
                .1
                .total_cmp(&models[a].1)
                .then(cells[a].k.cmp(&cells[b].k))
                .then(a.cmp(&b))
        })
        .expect("grid is nonempty");
    let table = cells
        .iter()
        .zip(&models)
        .map(|(p, (m, c))| GridCell {
            k: p.k,
            alpha: p.alpha.to_string(),
            beta: p.beta.to_string(),
            alpha_resolved: m.alpha.clone(),
            beta_resolved: m.beta,
            seed: p.seed,
            coherence: *c,
        })
        .collect();
    let best = models.swap_remove(best_index).0;
    Ok(GridResult {
        best,
        best_index,
        table,
    })
}
