//! Ablation sweeps: the mixture weight, the number of retrieved passages
//! and the retrieval strategy.

use serde::{Deserialize, Serialize};

use crate::decode::noisy_generate;
use crate::error::{RacError, Result};
use crate::eval::{hallucination_rate, EvalReport};
use crate::lm::ModelRole;
use crate::retrieval::Strategy;
use crate::text::{Stopwords, Vocab};
use crate::train::{masked_nll, train_sft, train_sft_early_stopped};

use super::config::RunConfig;
use super::run::{evaluate_model, prepare, BaseModels, Prepared};
use super::{passage_ids_to_tokens, require_nonempty, select, split_indices, to_examples, ClarificationTuple};

/// Renders a generation with the tokens drawn from the query-only model
/// wrapped in square brackets, e.g. `which [blue] one ?`.
pub fn gate_marked(tokens: &[String], gates: &[bool]) -> String {
    let mut out: Vec<String> = Vec::new();
    let mut open = false;
    for (i, (tok, &g)) in tokens.iter().zip(gates).enumerate() {
        let mut piece = String::new();
        if g && !open {
            piece.push('[');
            open = true;
        }
        piece.push_str(tok);
        let next_noisy = gates.get(i + 1).copied().unwrap_or(false);
        if open && !next_noisy {
            piece.push(']');
            open = false;
        }
        out.push(piece);
    }
    out.join(" ")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub alpha: f64,
    /// Mean over the non-empty generations.
    pub mean_hallucination: f64,
    /// Share of emitted tokens that came from the query-only model.
    pub gate_fraction: f64,
    pub mean_len: f64,
    /// Generations that stayed empty after the retry.
    pub empty: usize,
    pub examples: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub config_hash: String,
    pub seed: u64,
    pub records: usize,
    pub rows: Vec<AlphaRow>,
}

impl AlphaReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("alpha,mean_hallucination,gate_fraction,mean_len,empty\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.alpha, r.mean_hallucination, r.gate_fraction, r.mean_len, r.empty
            ));
        }
        s
    }
}

/// Mixture-decodes every tuple of `slice` at each α. Record `i` uses seed
/// `seed ^ i` at every α, so rows differ only in the gate weight.
pub fn sweep_alpha(
    p: &Prepared,
    models: &BaseModels,
    alphas: &[f64],
    slice: &[ClarificationTuple],
    seed: u64,
    examples_per_alpha: usize,
) -> Result<AlphaReport> {
    require_nonempty(slice, "no records for the alpha sweep")?;
    let stopwords = Stopwords::default();
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let mut mix = p.cfg.mixture(seed);
        mix.alpha = alpha;
        let (mut hall, mut gated, mut emitted, mut done, mut empty) = (0.0, 0usize, 0usize, 0usize, 0usize);
        let mut examples = Vec::new();
        for (i, t) in slice.iter().enumerate() {
            let passages = passage_ids_to_tokens(&p.index, &p.vocab, &t.passage_ids)?;
            mix.sample.seed = seed ^ i as u64;
            let g = match noisy_generate(
                &models.grounded.params,
                &models.uncond.params,
                &p.vocab.encode(&t.query),
                &passages,
                &mix,
            ) {
                Ok(g) => g,
                Err(RacError::EmptyGeneration(_)) => {
                    empty += 1;
                    continue;
                }
                Err(e) => return Err(e),
            };
            let evidence: Vec<Vec<String>> =
                p.index.resolve(&t.passage_ids)?.into_iter().map(|e| e.tokens.clone()).collect();
            let candidate = p.vocab.decode(&g.tokens);
            hall += hallucination_rate(&candidate, &evidence, &stopwords);
            gated += g.gates.iter().filter(|&&x| x).count();
            emitted += g.tokens.len();
            done += 1;
            if examples.len() < examples_per_alpha {
                examples.push(gate_marked(&surfaces(&p.vocab, &g.tokens), &g.gates));
            }
        }
        let per = |x: f64, n: usize| if n == 0 { 0.0 } else { x / n as f64 };
        rows.push(AlphaRow {
            alpha,
            mean_hallucination: per(hall, done),
            gate_fraction: per(gated as f64, emitted),
            mean_len: per(emitted as f64, done),
            empty,
            examples,
        });
    }
    Ok(AlphaReport {
        config_hash: p.cfg.hash(),
        seed,
        records: slice.len(),
        rows,
    })
}

fn surfaces(vocab: &Vocab, ids: &[u32]) -> Vec<String> {
    ids.iter().map(|&id| vocab.surface(id).to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageRow {
    pub k: usize,
    /// Held-out per-token NLL of the gold questions under the selected weights.
    pub val_nll: f64,
    /// The same after the last epoch, without selection.
    pub last_epoch_val_nll: f64,
    /// Epoch (0-based) with the lowest development NLL.
    pub best_epoch: usize,
    /// Greedy generations scored against the default-`k` evidence.
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassageSweep {
    pub config_hash: String,
    pub seed: u64,
    /// Evidence depth used for the grounding metrics.
    pub eval_k: usize,
    pub rows: Vec<PassageRow>,
}

impl PassageSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "k,val_nll,last_epoch_val_nll,best_epoch,parent_recall,grounding_precision,hallucination\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.k,
                r.val_nll,
                r.last_epoch_val_nll,
                r.best_epoch,
                r.report.parent_recall,
                r.report.grounding_precision,
                r.report.hallucination
            ));
        }
        s
    }
}

/// Share of the training half held out to pick the epoch in [`sweep_passages`].
pub const SWEEP_DEV_FRACTION: f64 = 0.2;

/// Retrains the grounded model on its half of the training split once per `k`
/// (k = 0 is the query-only condition) and scores it on the validation split.
///
/// A seeded slice of that half is held out, and each `k` keeps the weights
/// from the epoch with the lowest NLL on it. At the default epoch budget the
/// models memorise their training questions, and the last epoch's NLL then
/// reflects overfitting more than evidence; it is reported alongside.
pub fn sweep_passages(cfg: &RunConfig, ks: &[usize]) -> Result<PassageSweep> {
    if ks.is_empty() {
        return Err(RacError::config("no passage counts given"));
    }
    let k_max = ks.iter().copied().max().unwrap_or(0).max(cfg.k);
    let p = prepare(&RunConfig { k: k_max, ..cfg.clone() })?;
    let (fit_idx, dev_idx) = split_indices(p.half_a.len(), SWEEP_DEV_FRACTION, cfg.stage_seed("sweep-dev"));
    let (fit_tuples, dev_tuples) = (select(&p.half_a, &fit_idx), select(&p.half_a, &dev_idx));
    if fit_tuples.is_empty() || dev_tuples.is_empty() {
        return Err(RacError::EmptyDataset("too few tuples for a development slice".into()));
    }
    let eval_tuples: Vec<ClarificationTuple> = p.val.iter().map(|t| truncated(t, cfg.k)).collect();
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        let role = if k == 0 { ModelRole::Ungrounded } else { ModelRole::Grounded };
        let train = to_examples(&fit_tuples, &p.index, &p.vocab, Some(k))?;
        let dev = to_examples(&dev_tuples, &p.index, &p.vocab, Some(k))?;
        let run = train_sft_early_stopped(&p.base, &train, &dev, role, &cfg.train_config("sft-grounded"))?;
        let trained = run.best;
        let val = to_examples(&p.val, &p.index, &p.vocab, Some(k))?;
        let enc = val
            .iter()
            .map(|e| e.encode(role, cfg.context_len))
            .collect::<Result<Vec<_>>>()?;
        let val_nll = masked_nll(&trained.params, &enc)?;
        let last_epoch_val_nll = masked_nll(&run.last, &enc)?;
        let gen_tuples: Vec<ClarificationTuple> = p.val.iter().map(|t| truncated(t, k)).collect();
        let mut m = evaluate_model(&p, &trained.params, role, &gen_tuples)?;
        if k != cfg.k {
            for (r, t) in m.records.iter_mut().zip(&eval_tuples) {
                r.passages = p.index.resolve(&t.passage_ids)?.into_iter().map(|x| x.tokens.clone()).collect();
            }
            m = rescore(m.records)?;
        }
        rows.push(PassageRow {
            k,
            val_nll,
            last_epoch_val_nll,
            best_epoch: run.best_epoch,
            report: m.report,
        });
    }
    Ok(PassageSweep {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        eval_k: cfg.k,
        rows,
    })
}

fn truncated(t: &ClarificationTuple, k: usize) -> ClarificationTuple {
    let mut t = t.clone();
    t.passage_ids.truncate(k);
    t
}

fn rescore(records: Vec<crate::eval::EvalRecord>) -> Result<super::ModelReport> {
    use crate::eval::{Evaluator, LexicalScorer};
    use crate::text::QuestionTemplates;
    let (stopwords, templates, scorer) = (Stopwords::default(), QuestionTemplates::default(), LexicalScorer::default());
    let ev = Evaluator {
        stopwords: &stopwords,
        templates: &templates,
        scorer: &scorer,
    };
    let (report, metrics) = ev.evaluate_run(&records)?;
    Ok(super::ModelReport {
        report,
        records,
        metrics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub strategy: Strategy,
    pub report: EvalReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSweep {
    pub config_hash: String,
    pub seed: u64,
    pub rows: Vec<RetrievalRow>,
}

impl RetrievalSweep {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("strategy,parent_recall,grounding_precision,hallucination,entailment\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                r.strategy, r.report.parent_recall, r.report.grounding_precision, r.report.hallucination, r.report.entailment
            ));
        }
        s
    }
}

/// Trains the grounded model once per retrieval strategy with the same
/// protocol and scores each against its own evidence.
pub fn sweep_retrieval(cfg: &RunConfig, strategies: &[Strategy]) -> Result<RetrievalSweep> {
    if strategies.is_empty() {
        return Err(RacError::config("no retrieval strategies given"));
    }
    let mut rows = Vec::with_capacity(strategies.len());
    for &strategy in strategies {
        let p = prepare(&RunConfig { strategy, ..cfg.clone() })?;
        let data = to_examples(&p.half_a, &p.index, &p.vocab, None)?;
        let grounded = train_sft(&p.base, &data, ModelRole::Grounded, &cfg.train_config("sft-grounded"))?;
        let m = evaluate_model(&p, &grounded.params, ModelRole::Grounded, &p.val)?;
        rows.push(RetrievalRow {
            strategy,
            report: m.report,
        });
    }
    Ok(RetrievalSweep {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn marks_noisy_spans() {
        let toks: Vec<String> = ["which", "red", "blue", "one", "?"].iter().map(|s| s.to_string()).collect();
        let gates = [false, true, true, false, true];
        assert_eq!(gate_marked(&toks, &gates), "which [red blue] one [?]");
        assert_eq!(gate_marked(&toks[..1], &[false]), "which");
    }
}
