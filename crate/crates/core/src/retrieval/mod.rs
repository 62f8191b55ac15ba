//! Passage retrieval: an inverted index with BM25 scoring, a seeded random
//! baseline, and query rewriting for pseudo-relevance retrieval.

mod index;
mod persist;
mod rewrite;

pub use index::{InvertedIndex, Posting};
pub use rewrite::{ConcatRewriter, QueryRewriter};

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::seed::rng_from_seed;

/// BM25 free parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 0.9, b: 0.4 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.k1 >= 0.0 && self.k1.is_finite()) {
            return Err(RacError::config(format!("k1 must be >= 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(RacError::config(format!("b must lie in [0, 1], got {}", self.b)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    #[default]
    Bm25,
    Random,
}

impl std::str::FromStr for Strategy {
    type Err = RacError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "bm25" => Ok(Strategy::Bm25),
            "random" => Ok(Strategy::Random),
            other => Err(RacError::config(format!("unknown retrieval strategy `{other}`"))),
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Strategy::Bm25 => "bm25",
            Strategy::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalConfig {
    pub k: usize,
    pub strategy: Strategy,
    pub seed: u64,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            k: 5,
            strategy: Strategy::Bm25,
            seed: 0,
        }
    }
}

/// A retrieved passage with its score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassage {
    pub passage_id: String,
    pub score: f64,
}

/// `ln((N - df + 0.5) / (df + 0.5) + 1)`; never negative.
pub fn idf(num_docs: usize, df: usize) -> f64 {
    let n = num_docs as f64;
    let df = df as f64;
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Saturating term-frequency component of BM25.
pub fn tf_component(tf: f64, doc_len: f64, avg_doc_len: f64, params: Bm25Params) -> f64 {
    if tf == 0.0 {
        return 0.0;
    }
    let norm = if avg_doc_len > 0.0 {
        1.0 - params.b + params.b * doc_len / avg_doc_len
    } else {
        1.0
    };
    tf * (params.k1 + 1.0) / (tf + params.k1 * norm)
}

/// Unique query terms in order of first occurrence.
pub(crate) fn unique_terms<S: AsRef<str>>(query: &[S]) -> Vec<&str> {
    let mut seen = std::collections::HashSet::new();
    query
        .iter()
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect()
}

/// BM25 score of one passage for a query.
pub fn bm25_score<S: AsRef<str>>(
    index: &InvertedIndex,
    query: &[S],
    passage_id: &str,
    params: Bm25Params,
) -> Result<f64> {
    let doc = index
        .position(passage_id)
        .ok_or_else(|| RacError::UnknownPassage(passage_id.to_string()))?;
    let dl = index.doc_len(doc) as f64;
    let mut score = 0.0;
    for term in unique_terms(query) {
        let Some(postings) = index.postings(term) else {
            continue;
        };
        let tf = postings
            .binary_search_by_key(&(doc as u32), |p| p.doc)
            .map(|i| postings[i].tf as f64)
            .unwrap_or(0.0);
        if tf > 0.0 {
            score += idf(index.num_docs(), postings.len())
                * tf_component(tf, dl, index.avg_doc_len(), params);
        }
    }
    Ok(score)
}

/// Top-`k` passages by BM25 score, descending, ties by ascending passage id.
/// Zero-score passages are never returned, so fewer than `k` may come back.
pub fn retrieve_topk<S: AsRef<str>>(
    index: &InvertedIndex,
    query: &[S],
    k: usize,
    params: Bm25Params,
) -> Vec<ScoredPassage> {
    if k == 0 || index.num_docs() == 0 {
        return Vec::new();
    }
    let mut scores = vec![0.0f64; index.num_docs()];
    for term in unique_terms(query) {
        let Some(postings) = index.postings(term) else {
            continue;
        };
        let w = idf(index.num_docs(), postings.len());
        for p in postings {
            let d = p.doc as usize;
            scores[d] += w * tf_component(
                p.tf as f64,
                index.doc_len(d) as f64,
                index.avg_doc_len(),
                params,
            );
        }
    }
    let mut hits: Vec<(usize, f64)> = scores
        .into_iter()
        .enumerate()
        .filter(|&(_, s)| s > 0.0)
        .collect();
    // Passages are stored sorted by id, so position order is id order.
    hits.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    hits.truncate(k);
    hits.into_iter()
        .map(|(d, score)| ScoredPassage {
            passage_id: index.passage(d).passage_id.clone(),
            score,
        })
        .collect()
}

/// `k` distinct passages drawn uniformly without replacement.
pub fn random_retrieve(index: &InvertedIndex, k: usize, seed: u64) -> Result<Vec<String>> {
    if k > index.num_docs() {
        return Err(RacError::NotEnoughPassages {
            k,
            available: index.num_docs(),
        });
    }
    let mut rng = rng_from_seed(seed);
    Ok(sample(&mut rng, index.num_docs(), k)
        .into_iter()
        .map(|d| index.passage(d).passage_id.clone())
        .collect())
}

/// Dispatches on the configured strategy; random hits carry score 0.
pub fn retrieve<S: AsRef<str>>(
    index: &InvertedIndex,
    query: &[S],
    cfg: &RetrievalConfig,
    params: Bm25Params,
) -> Result<Vec<ScoredPassage>> {
    match cfg.strategy {
        Strategy::Bm25 => Ok(retrieve_topk(index, query, cfg.k, params)),
        Strategy::Random => Ok(random_retrieve(index, cfg.k, cfg.seed)?
            .into_iter()
            .map(|passage_id| ScoredPassage {
                passage_id,
                score: 0.0,
            })
            .collect()),
    }
}
