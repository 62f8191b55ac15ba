//! End-to-end orchestration: synthetic data, dataset adaptation, the
//! T1/T2 construction, training, evaluation and the ablation sweeps.

pub mod artifacts;
mod config;
pub mod corpus;
mod run;
pub mod stages;
mod sweeps;
mod t2;

pub use config::{NegativeSource, PositiveSource, RunConfig, SftData};
pub use corpus::{make_synthetic_corpus, GoldPair, SyntheticCorpus, SyntheticCorpusSpec};
pub use run::{
    evaluate_model, prepare, prepare_from, run_end_to_end, run_pipeline, train_base_models, train_policy, BaseModels,
    Counts, FinalReport, ModelReport, Prepared, RunOutput,
};
pub use sweeps::{
    gate_marked, sweep_alpha, sweep_passages, sweep_retrieval, AlphaReport, AlphaRow, PassageRow, SWEEP_DEV_FRACTION,
    PassageSweep, RetrievalRow, RetrievalSweep,
};
pub use t2::{build_t2, NegativeRecord, PreferenceRecord, T2Options, T2Output};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::decode::{generate, SampleConfig};
use crate::error::{RacError, Result};
use crate::eval::EvalRecord;
use crate::lm::{context_ids, LMParams, ModelRole};
use crate::retrieval::{retrieve_topk, Bm25Params, InvertedIndex, QueryRewriter};
use crate::seed::rng_from_seed;
use crate::text::{chunk_corpus, tokenize, Vocab};
use crate::train::ClarificationExample;

/// One adapted record: the query, its rewrite, the ranked evidence and the
/// gold clarification, all as normalized tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationTuple {
    pub record_id: String,
    pub query: Vec<String>,
    pub rewritten: Vec<String>,
    pub passage_ids: Vec<String>,
    pub question: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptOutput {
    pub tuples: Vec<ClarificationTuple>,
    /// Record ids whose rewritten query retrieved nothing.
    pub dropped: Vec<String>,
}

/// Rewrites every query with its clarification and retrieves the top `k`
/// passages for the rewrite with BM25. Records with no hit are dropped.
pub fn adapt_dataset(
    gold: &[GoldPair],
    index: &InvertedIndex,
    k: usize,
    params: Bm25Params,
    rewriter: &dyn QueryRewriter,
) -> AdaptOutput {
    let mut out = AdaptOutput {
        tuples: Vec::new(),
        dropped: Vec::new(),
    };
    for g in gold {
        let query = tokenize(&g.query);
        let question = tokenize(&g.question);
        let rewritten = rewriter.rewrite(&query, &question);
        let hits = retrieve_topk(index, &rewritten, k, params);
        if hits.is_empty() {
            out.dropped.push(g.record_id.clone());
            continue;
        }
        out.tuples.push(ClarificationTuple {
            record_id: g.record_id.clone(),
            query,
            rewritten,
            passage_ids: hits.into_iter().map(|h| h.passage_id).collect(),
            question,
        });
    }
    out
}

/// Seeded partition of `0..n` into (first, second) with `round(n * fraction)`
/// items in the second part. Both parts keep ascending order.
pub fn split_indices(n: usize, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(seed));
    let second_len = ((n as f64) * fraction).round() as usize;
    let mut second = order[..second_len].to_vec();
    let mut first = order[second_len..].to_vec();
    first.sort_unstable();
    second.sort_unstable();
    (first, second)
}

pub fn select<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Vocabulary over the documents, queries and clarifications.
pub fn build_vocab(corpus: &SyntheticCorpus) -> Vocab {
    let docs = corpus.documents.iter().map(|d| tokenize(&d.text));
    let gold = corpus
        .gold
        .iter()
        .flat_map(|g| [tokenize(&g.query), tokenize(&g.question)]);
    Vocab::build(docs.chain(gold))
}

/// Token ids of the passages behind `ids`, in the given order.
pub fn passage_ids_to_tokens(index: &InvertedIndex, vocab: &Vocab, ids: &[String]) -> Result<Vec<Vec<u32>>> {
    Ok(index.resolve(ids)?.into_iter().map(|p| vocab.encode(&p.tokens)).collect())
}

/// Encodes a tuple, keeping at most `k` passages when given.
pub fn to_example(
    t: &ClarificationTuple,
    index: &InvertedIndex,
    vocab: &Vocab,
    k: Option<usize>,
) -> Result<ClarificationExample> {
    let n = k.unwrap_or(t.passage_ids.len()).min(t.passage_ids.len());
    Ok(ClarificationExample {
        query: vocab.encode(&t.query),
        passages: passage_ids_to_tokens(index, vocab, &t.passage_ids[..n])?,
        question: vocab.encode(&t.question),
    })
}

pub fn to_examples(
    tuples: &[ClarificationTuple],
    index: &InvertedIndex,
    vocab: &Vocab,
    k: Option<usize>,
) -> Result<Vec<ClarificationExample>> {
    tuples.iter().map(|t| to_example(t, index, vocab, k)).collect()
}

/// Greedy questions from `params` for each tuple, packaged for evaluation
/// against the tuple's own evidence and gold question.
pub fn generate_eval_records(
    params: &LMParams,
    role: ModelRole,
    tuples: &[ClarificationTuple],
    index: &InvertedIndex,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<EvalRecord>> {
    let sample = SampleConfig::greedy(max_len);
    tuples
        .iter()
        .map(|t| {
            let passages = index.resolve(&t.passage_ids)?;
            let ids: Vec<Vec<u32>> = passages.iter().map(|p| vocab.encode(&p.tokens)).collect();
            let ctx = context_ids(role, &vocab.encode(&t.query), &ids);
            let out = generate(params, &ctx, &sample)?;
            Ok(EvalRecord {
                query: t.query.clone(),
                passages: passages.iter().map(|p| p.tokens.clone()).collect(),
                candidate: vocab.decode(&out.tokens),
                reference: Some(t.question.clone()),
            })
        })
        .collect()
}

pub(crate) fn require_nonempty<T>(items: &[T], what: &str) -> Result<()> {
    if items.is_empty() {
        return Err(RacError::EmptyDataset(what.to_string()));
    }
    Ok(())
}

/// Chunks the corpus documents and builds the index.
pub fn index_corpus(corpus: &SyntheticCorpus, chunk_size: usize) -> Result<InvertedIndex> {
    InvertedIndex::build(chunk_corpus(&corpus.documents, chunk_size)?)
}
