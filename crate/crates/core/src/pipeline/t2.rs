use serde::{Deserialize, Serialize};

use crate::decode::{generate, noisy_generate, MixtureConfig, NoisyGeneration, SampleConfig};
use crate::error::{RacError, Result};
use crate::lm::{context_ids, LMParams, ModelRole};
use crate::retrieval::InvertedIndex;
use crate::seed::stage_seed;
use crate::text::{detokenize, Vocab};
use crate::train::PreferenceExample;

use super::config::PositiveSource;
use super::{passage_ids_to_tokens, require_nonempty, ClarificationTuple};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct T2Options {
    pub positive_source: PositiveSource,
    pub negatives_per_tuple: usize,
    /// Length budget for the greedy positives.
    pub max_len: usize,
}

/// One mixture-decoded negative as written to the negatives file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NegativeRecord {
    pub record_id: String,
    pub alpha: f64,
    pub seed: u64,
    /// Raw surfaces, one per gate.
    pub tokens: Vec<String>,
    pub gates: Vec<bool>,
    pub text: String,
}

/// One T2 record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceRecord {
    pub record_id: String,
    pub query: Vec<String>,
    pub passage_ids: Vec<String>,
    pub chosen: Vec<String>,
    pub rejected: Vec<String>,
}

impl PreferenceRecord {
    pub fn to_example(&self, index: &InvertedIndex, vocab: &Vocab) -> Result<PreferenceExample> {
        Ok(PreferenceExample {
            query: vocab.encode(&self.query),
            passages: passage_ids_to_tokens(index, vocab, &self.passage_ids)?,
            chosen: vocab.encode(&self.chosen),
            rejected: vocab.encode(&self.rejected),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct T2Output {
    pub pairs: Vec<PreferenceRecord>,
    pub negatives: Vec<NegativeRecord>,
    /// Pairs abandoned because chosen and rejected stayed identical or the
    /// negative came out empty twice.
    pub dropped: usize,
}

impl T2Output {
    pub fn examples(&self, index: &InvertedIndex, vocab: &Vocab) -> Result<Vec<PreferenceExample>> {
        self.pairs.iter().map(|p| p.to_example(index, vocab)).collect()
    }
}

/// Builds preference pairs over `contexts`. The chosen question is the
/// grounded model's greedy output (or the gold question); the rejected one
/// is mixture-decoded from `grounded` and `negative` with seed
/// `mix.sample.seed ^ slot`. An identical pair is regenerated once with a
/// fresh seed and then dropped.
pub fn build_t2(
    contexts: &[ClarificationTuple],
    index: &InvertedIndex,
    vocab: &Vocab,
    grounded: &LMParams,
    negative: &LMParams,
    mix: &MixtureConfig,
    opts: &T2Options,
) -> Result<T2Output> {
    require_nonempty(contexts, "no contexts for T2")?;
    let greedy = SampleConfig::greedy(opts.max_len);
    let mut out = T2Output {
        pairs: Vec::new(),
        negatives: Vec::new(),
        dropped: 0,
    };
    for (i, t) in contexts.iter().enumerate() {
        let query = vocab.encode(&t.query);
        let passages = passage_ids_to_tokens(index, vocab, &t.passage_ids)?;
        let chosen = match opts.positive_source {
            PositiveSource::Gold => t.question.clone(),
            PositiveSource::Generated => {
                let ctx = context_ids(ModelRole::Grounded, &query, &passages);
                vocab.decode(&generate(grounded, &ctx, &greedy)?.tokens)
            }
        };
        for j in 0..opts.negatives_per_tuple {
            let slot = (i * opts.negatives_per_tuple + j) as u64;
            let mut cfg = mix.clone();
            cfg.sample.seed = mix.sample.seed ^ slot;
            let attempt = |cfg: &MixtureConfig| match noisy_generate(grounded, negative, &query, &passages, cfg) {
                Ok(g) => Ok(Some(g)),
                Err(RacError::EmptyGeneration(_)) => Ok(None),
                Err(e) => Err(e),
            };
            let mut neg = attempt(&cfg)?;
            let decoded = |n: &Option<NoisyGeneration>| n.as_ref().map(|g| vocab.decode(&g.tokens));
            if decoded(&neg).as_ref() == Some(&chosen) {
                cfg.sample.seed = stage_seed(cfg.sample.seed, "regenerate");
                neg = attempt(&cfg)?;
            }
            let Some(neg) = neg else {
                out.dropped += 1;
                continue;
            };
            let rejected = vocab.decode(&neg.tokens);
            out.negatives.push(NegativeRecord {
                record_id: t.record_id.clone(),
                alpha: mix.alpha,
                seed: neg.seed,
                text: detokenize(&rejected),
                tokens: neg.tokens.iter().map(|&id| vocab.surface(id).to_string()).collect(),
                gates: neg.gates,
            });
            if rejected == chosen {
                out.dropped += 1;
                continue;
            }
            out.pairs.push(PreferenceRecord {
                record_id: t.record_id.clone(),
                query: t.query.clone(),
                passage_ids: t.passage_ids.clone(),
                chosen: chosen.clone(),
                rejected,
            });
        }
    }
    Ok(out)
}
