use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::eval::{EvalRecord, EvalReport, Evaluator, LexicalScorer, RecordMetrics};
use crate::lm::{self, LMParams, ModelRole};
use crate::retrieval::InvertedIndex;
use crate::text::{QuestionTemplates, Stopwords, Vocab};
use crate::train::{train_dpo, train_sft, EpochLog, TrainLog, Trained};

use super::artifacts::{names, write_json, write_jsonl, Header};
use super::config::{NegativeSource, RunConfig, SftData};
use super::stages::{adapt_with, base_model, splits};
use super::t2::{build_t2, T2Options, T2Output};
use super::{
    build_vocab, generate_eval_records, index_corpus, make_synthetic_corpus, to_examples, AdaptOutput,
    ClarificationTuple, SyntheticCorpus,
};

/// Everything upstream of model training.
pub struct Prepared {
    pub cfg: RunConfig,
    pub corpus: SyntheticCorpus,
    pub index: InvertedIndex,
    pub vocab: Vocab,
    pub adapt: AdaptOutput,
    pub train: Vec<ClarificationTuple>,
    pub val: Vec<ClarificationTuple>,
    /// Trains the grounded and query-only models.
    pub half_a: Vec<ClarificationTuple>,
    /// Supplies contexts for preference pairs.
    pub half_b: Vec<ClarificationTuple>,
    /// Base model (optionally pre-trained on the documents).
    pub base: LMParams,
    pub base_log: Option<TrainLog>,
}

impl Prepared {
    pub fn header(&self, kind: &str) -> Header {
        Header {
            kind: kind.to_string(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
        }
    }
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.in_stage(name))
}

/// Corpus, index, adaptation, splits and the base model.
pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    stage("config", || cfg.validate())?;
    let corpus = stage("corpus", || make_synthetic_corpus(&cfg.corpus_spec()))?;
    let index = stage("index", || index_corpus(&corpus, cfg.chunk_size))?;
    prepare_from(cfg, corpus, index)
}

/// [`prepare`] over an existing corpus and index.
pub fn prepare_from(cfg: &RunConfig, corpus: SyntheticCorpus, index: InvertedIndex) -> Result<Prepared> {
    let vocab = build_vocab(&corpus);
    let adapt = stage("adapt", || adapt_with(cfg, &corpus.gold, &index))?;
    stage("adapt", || super::require_nonempty(&adapt.tuples, "T1 is empty after adaptation"))?;
    let (train, val, half_a, half_b) = splits(cfg, &adapt.tuples);
    let (base, base_log) = stage("pretrain", || base_model(cfg, &vocab, &corpus.documents))?;
    Ok(Prepared {
        cfg: cfg.clone(),
        corpus,
        index,
        vocab,
        adapt,
        train,
        val,
        half_a,
        half_b,
        base,
        base_log,
    })
}

/// The grounded reference model and the query-only model.
pub struct BaseModels {
    pub grounded: Trained,
    pub uncond: Trained,
}

pub fn train_base_models(p: &Prepared) -> Result<BaseModels> {
    let data = stage("train-sft", || to_examples(&p.half_a, &p.index, &p.vocab, None))?;
    let grounded = stage("train-sft", || {
        train_sft(&p.base, &data, ModelRole::Grounded, &p.cfg.train_config("sft-grounded"))
    })?;
    let uncond = stage("train-uncond", || {
        train_sft(&p.base, &data, ModelRole::Ungrounded, &p.cfg.train_config("sft-uncond"))
    })?;
    Ok(BaseModels { grounded, uncond })
}

/// Builds T2 from the second half and trains the aligned policy from the
/// grounded model, which also serves as the frozen reference.
pub fn train_policy(p: &Prepared, models: &BaseModels, source: NegativeSource) -> Result<(T2Output, Trained)> {
    let negative = match source {
        NegativeSource::Uncond => &models.uncond.params,
        NegativeSource::BaseLm => &p.base,
    };
    let t2 = stage("gen-negatives", || {
        build_t2(
            &p.half_b,
            &p.index,
            &p.vocab,
            &models.grounded.params,
            negative,
            &p.cfg.mixture(p.cfg.stage_seed("t2")),
            &T2Options {
                positive_source: p.cfg.positive_source,
                negatives_per_tuple: p.cfg.negatives_per_tuple,
                max_len: p.cfg.max_gen_len,
            },
        )
    })?;
    let policy = stage("train-dpo", || {
        let pairs = t2.examples(&p.index, &p.vocab)?;
        let t1 = to_examples(&p.train, &p.index, &p.vocab, None)?;
        let g = &models.grounded.params;
        train_dpo(g, g, &pairs, &t1, &p.cfg.dpo_train_config())
    })?;
    Ok((t2, policy))
}

/// Greedy generations of one model on a tuple set and their scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub report: EvalReport,
    pub records: Vec<EvalRecord>,
    pub metrics: Vec<RecordMetrics>,
}

pub fn evaluate_model(
    p: &Prepared,
    params: &LMParams,
    role: ModelRole,
    tuples: &[ClarificationTuple],
) -> Result<ModelReport> {
    stage("evaluate", || {
        let records = generate_eval_records(params, role, tuples, &p.index, &p.vocab, p.cfg.max_gen_len)?;
        let (stopwords, templates) = (Stopwords::default(), QuestionTemplates::default());
        let scorer = LexicalScorer::default();
        let ev = Evaluator {
            stopwords: &stopwords,
            templates: &templates,
            scorer: &scorer,
        };
        let (report, metrics) = ev.evaluate_run(&records)?;
        Ok(ModelReport {
            report,
            records,
            metrics,
        })
    })
}

/// Record counts through every stage.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub documents: usize,
    pub passages: usize,
    pub gold: usize,
    pub adapted: usize,
    pub adapt_dropped: usize,
    pub train: usize,
    pub val: usize,
    pub half_a: usize,
    pub half_b: usize,
    pub t2_pairs: usize,
    pub t2_dropped: usize,
}

/// Comparison of the supervised and the aligned model on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinalReport {
    pub config_hash: String,
    pub seed: u64,
    pub counts: Counts,
    pub rac_sft: EvalReport,
    pub rac_dpo: EvalReport,
    /// Query-only model, for reference.
    pub q_cond: EvalReport,
    pub dpo_epochs: Vec<EpochLog>,
}

struct Sink(Option<PathBuf>);

impl Sink {
    fn write(&self, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        match &self.0 {
            Some(dir) => f(dir),
            None => Ok(()),
        }
    }
}

fn save_model(dir: &Path, name: &str, params: &LMParams, p: &Prepared, role: &str) -> Result<()> {
    let meta = serde_json::json!({
        "config_hash": p.cfg.hash(),
        "seed": p.cfg.seed,
        "role": role,
    });
    lm::save(params, meta, dir.join(name))
}

fn log_name(ckpt: &str) -> String {
    format!("{}.log.jsonl", ckpt.trim_end_matches(".ckpt"))
}

/// Runs every stage. With a work directory, each stage's artifacts are
/// written as soon as they exist, so a failure leaves the earlier ones.
pub fn run_end_to_end(cfg: &RunConfig, work_dir: Option<&Path>) -> Result<FinalReport> {
    run_pipeline(cfg, work_dir).map(|o| o.report)
}

/// Everything a full run produced, for callers that build on its models.
pub struct RunOutput {
    pub report: FinalReport,
    pub prepared: Prepared,
    pub models: BaseModels,
    pub t2: T2Output,
    pub policy: Trained,
}

/// [`run_end_to_end`], keeping the intermediate data and models.
pub fn run_pipeline(cfg: &RunConfig, work_dir: Option<&Path>) -> Result<RunOutput> {
    let sink = Sink(work_dir.map(Path::to_path_buf));
    sink.write(|d| {
        std::fs::create_dir_all(d)?;
        cfg.save(d.join(names::CONFIG))
    })?;
    stage("config", || cfg.validate())?;
    let corpus = stage("corpus", || make_synthetic_corpus(&cfg.corpus_spec()))?;
    let header = |kind: &str| Header {
        kind: kind.to_string(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
    };
    sink.write(|d| {
        write_jsonl(d.join(names::DOCUMENTS), &header("documents"), &corpus.documents)?;
        write_jsonl(d.join(names::GOLD), &header("gold"), &corpus.gold)
    })?;
    let index = stage("index", || index_corpus(&corpus, cfg.chunk_size))?;
    sink.write(|d| index.save(d.join(names::INDEX)))?;
    let p = prepare_from(cfg, corpus, index)?;
    sink.write(|d| {
        p.vocab.save(d.join(names::VOCAB))?;
        write_jsonl(d.join(names::T1), &p.header("t1"), &p.adapt.tuples)?;
        write_json(
            d.join(names::SPLIT),
            &serde_json::json!({
                "config_hash": cfg.hash(),
                "seed": cfg.seed,
                "train": p.train.iter().map(|t| &t.record_id).collect::<Vec<_>>(),
                "val": p.val.iter().map(|t| &t.record_id).collect::<Vec<_>>(),
                "half_a": p.half_a.iter().map(|t| &t.record_id).collect::<Vec<_>>(),
                "half_b": p.half_b.iter().map(|t| &t.record_id).collect::<Vec<_>>(),
                "adapt_dropped": p.adapt.dropped,
            }),
        )?;
        save_model(d, names::BASE, &p.base, &p, "base_lm")?;
        if let Some(log) = &p.base_log {
            write_jsonl(d.join(log_name(names::BASE)), &p.header("train-log"), &log.steps)?;
        }
        Ok(())
    })?;

    let models = train_base_models(&p)?;
    sink.write(|d| {
        for (name, role, t) in [
            (names::GROUNDED, "grounded", &models.grounded),
            (names::UNCOND, "ungrounded", &models.uncond),
        ] {
            save_model(d, name, &t.params, &p, role)?;
            write_jsonl(d.join(log_name(name)), &p.header("train-log"), &t.log.steps)?;
        }
        Ok(())
    })?;

    let sft_full;
    let rac_sft = match cfg.sft_data {
        SftData::Half => &models.grounded.params,
        SftData::Full => {
            sft_full = stage("train-sft", || {
                let data = to_examples(&p.train, &p.index, &p.vocab, None)?;
                train_sft(&p.base, &data, ModelRole::Grounded, &cfg.train_config("sft-full"))
            })?;
            sink.write(|d| save_model(d, names::SFT_FULL, &sft_full.params, &p, "grounded"))?;
            &sft_full.params
        }
    };

    let (t2, policy) = train_policy(&p, &models, cfg.negative_source)?;
    sink.write(|d| {
        write_jsonl(d.join(names::NEGATIVES), &p.header("negatives"), &t2.negatives)?;
        write_jsonl(d.join(names::T2), &p.header("t2"), &t2.pairs)?;
        save_model(d, names::DPO, &policy.params, &p, "policy")?;
        write_jsonl(d.join(log_name(names::DPO)), &p.header("train-log"), &policy.log.steps)
    })?;

    let (sft_eval, dpo_eval, qc_eval) = stage("evaluate", || {
        Ok((
            evaluate_model(&p, rac_sft, ModelRole::Grounded, &p.val)?,
            evaluate_model(&p, &policy.params, ModelRole::Policy, &p.val)?,
            evaluate_model(&p, &models.uncond.params, ModelRole::Ungrounded, &p.val)?,
        ))
    })?;
    sink.write(|d| {
        for (name, r) in [("rac_sft", &sft_eval), ("rac_dpo", &dpo_eval), ("q_cond", &qc_eval)] {
            write_jsonl(d.join(format!("eval_{name}.jsonl")), &p.header("eval-records"), &r.metrics)?;
            write_jsonl(d.join(format!("generations_{name}.jsonl")), &p.header("generations"), &r.records)?;
        }
        Ok(())
    })?;

    let report = FinalReport {
        config_hash: cfg.hash(),
        seed: cfg.seed,
        counts: Counts {
            documents: p.corpus.documents.len(),
            passages: p.index.num_docs(),
            gold: p.corpus.gold.len(),
            adapted: p.adapt.tuples.len(),
            adapt_dropped: p.adapt.dropped.len(),
            train: p.train.len(),
            val: p.val.len(),
            half_a: p.half_a.len(),
            half_b: p.half_b.len(),
            t2_pairs: t2.pairs.len(),
            t2_dropped: t2.dropped,
        },
        rac_sft: sft_eval.report,
        rac_dpo: dpo_eval.report,
        q_cond: qc_eval.report,
        dpo_epochs: policy.log.epochs.clone(),
    };
    sink.write(|d| write_json(d.join(names::REPORT), &report))?;
    if report.counts.gold != report.counts.adapted + report.counts.adapt_dropped {
        return Err(RacError::config("adaptation lost records"));
    }
    Ok(RunOutput {
        report,
        prepared: p,
        models,
        t2,
        policy,
    })
}
