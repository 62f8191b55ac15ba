//! File-backed stages. Each stage reads what earlier stages left in a work
//! directory and writes its own outputs there, so any stage can be rerun in
//! isolation.

use std::collections::HashMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::eval::{EvalRecord, EvalReport, Evaluator, LexicalScorer, RecordMetrics};
use crate::lm::{self, init_params, LMParams, ModelRole};
use crate::retrieval::{ConcatRewriter, InvertedIndex, Strategy};
use crate::text::{tokenize, Document, QuestionTemplates, Stopwords, Vocab};
use crate::train::{pretrain_lm, train_dpo, train_sft, TrainLog, Trained};

use super::artifacts::{names, read_json, read_jsonl, read_records, write_json, write_jsonl, Header};
use super::config::{NegativeSource, RunConfig, SftData};
use super::run::{Prepared, BaseModels};
use super::t2::{build_t2, PreferenceRecord, T2Options};
use super::{
    adapt_dataset, generate_eval_records, make_synthetic_corpus, select, split_indices, sweep_alpha,
    sweep_passages, sweep_retrieval, to_examples, AdaptOutput, ClarificationTuple, GoldPair, SyntheticCorpus,
};

/// Which slice of the adapted data a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    HalfA,
    HalfB,
}

impl std::str::FromStr for Split {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Self::Train),
            "val" => Ok(Self::Val),
            "half_a" => Ok(Self::HalfA),
            "half_b" => Ok(Self::HalfB),
            other => Err(RacError::config(format!("unknown split `{other}`"))),
        }
    }
}

/// Split membership as stored on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitFile {
    pub config_hash: String,
    pub seed: u64,
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub half_a: Vec<String>,
    pub half_b: Vec<String>,
    pub adapt_dropped: Vec<String>,
}

/// One record of the evaluation input. Evidence is given either as passage
/// ids (resolved through an index) or as passage texts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalInput {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record_id: Option<String>,
    pub query: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passage_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub passages: Option<Vec<String>>,
    pub candidate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
}

impl EvalInput {
    pub fn to_record(&self, index: Option<&InvertedIndex>) -> Result<EvalRecord> {
        let passages = match (&self.passages, &self.passage_ids, index) {
            (Some(texts), _, _) => texts.iter().map(|t| tokenize(t)).collect(),
            (None, Some(ids), Some(index)) => index.resolve(ids)?.into_iter().map(|p| p.tokens.clone()).collect(),
            (None, Some(_), None) => return Err(RacError::config("passage_ids given without an index")),
            (None, None, _) => return Err(RacError::config("record has neither passages nor passage_ids")),
        };
        Ok(EvalRecord {
            query: tokenize(&self.query),
            passages,
            candidate: tokenize(&self.candidate),
            reference: self.reference.as_deref().map(tokenize),
        })
    }
}

/// Scores evaluation inputs with the lexical entailment scorer.
pub fn evaluate_inputs(inputs: &[EvalInput], index: Option<&InvertedIndex>) -> Result<(EvalReport, Vec<RecordMetrics>)> {
    let records = inputs.iter().map(|r| r.to_record(index)).collect::<Result<Vec<_>>>()?;
    let (stopwords, templates, scorer) = (Stopwords::default(), QuestionTemplates::default(), LexicalScorer::default());
    Evaluator {
        stopwords: &stopwords,
        templates: &templates,
        scorer: &scorer,
    }
    .evaluate_run(&records)
}

/// Reads a document file with or without a header line.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<Document>> {
    Ok(read_records(path)?.1)
}

/// A work directory plus the effective config of the current command.
pub struct WorkDir {
    pub root: PathBuf,
    pub cfg: RunConfig,
}

impl WorkDir {
    pub fn new(root: impl Into<PathBuf>, cfg: RunConfig) -> Result<Self> {
        cfg.validate()?;
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root, cfg })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn header(&self, kind: &str) -> Header {
        Header {
            kind: kind.to_string(),
            config_hash: self.cfg.hash(),
            seed: self.cfg.seed,
        }
    }

    fn save_model(&self, name: &str, params: &LMParams, role: ModelRole) -> Result<PathBuf> {
        let path = self.path(name);
        let meta = serde_json::json!({
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
            "role": role,
        });
        lm::save(params, meta, &path)?;
        Ok(path)
    }

    fn save_log(&self, ckpt: &str, log: &TrainLog) -> Result<()> {
        let name = format!("{}.log.jsonl", ckpt.trim_end_matches(".ckpt"));
        write_jsonl(self.path(&name), &self.header("train-log"), &log.steps)
    }

    pub fn load_model(&self, name: &str) -> Result<LMParams> {
        Ok(lm::load(self.path(name))?.0)
    }

    /// Writes the config, the synthetic documents and the gold pairs.
    pub fn make_corpus(&self) -> Result<SyntheticCorpus> {
        let corpus = make_synthetic_corpus(&self.cfg.corpus_spec())?;
        self.cfg.save(self.path(names::CONFIG))?;
        write_jsonl(self.path(names::DOCUMENTS), &self.header("documents"), &corpus.documents)?;
        write_jsonl(self.path(names::GOLD), &self.header("gold"), &corpus.gold)?;
        Ok(corpus)
    }

    fn corpus(&self) -> Result<SyntheticCorpus> {
        Ok(SyntheticCorpus {
            documents: read_documents(self.path(names::DOCUMENTS))?,
            gold: read_jsonl::<GoldPair>(self.path(names::GOLD))?.1,
        })
    }

    /// Chunks and indexes `corpus` (default: the work directory's documents).
    pub fn index(&self, corpus: Option<&Path>, out: Option<&Path>) -> Result<InvertedIndex> {
        let docs = read_documents(corpus.map_or_else(|| self.path(names::DOCUMENTS), Path::to_path_buf))?;
        let index = InvertedIndex::build(crate::text::chunk_corpus(&docs, self.cfg.chunk_size)?)?;
        index.save(out.map_or_else(|| self.path(names::INDEX), Path::to_path_buf))?;
        Ok(index)
    }

    /// Builds T1, the splits, the vocabulary and the base model.
    pub fn adapt(&self) -> Result<AdaptOutput> {
        let corpus = self.corpus()?;
        let index = InvertedIndex::load(self.path(names::INDEX))?;
        let p = super::run::prepare_from(&self.cfg, corpus, index)?;
        write_jsonl(self.path(names::T1), &self.header("t1"), &p.adapt.tuples)?;
        let ids = |ts: &[ClarificationTuple]| ts.iter().map(|t| t.record_id.clone()).collect();
        write_json(
            self.path(names::SPLIT),
            &SplitFile {
                config_hash: self.cfg.hash(),
                seed: self.cfg.seed,
                train: ids(&p.train),
                val: ids(&p.val),
                half_a: ids(&p.half_a),
                half_b: ids(&p.half_b),
                adapt_dropped: p.adapt.dropped.clone(),
            },
        )?;
        p.vocab.save(self.path(names::VOCAB))?;
        self.save_model(names::BASE, &p.base, ModelRole::BaseLm)?;
        if let Some(log) = &p.base_log {
            self.save_log(names::BASE, log)?;
        }
        Ok(p.adapt)
    }

    /// Reassembles everything upstream of training from the work directory.
    pub fn prepared(&self) -> Result<Prepared> {
        let corpus = self.corpus()?;
        let index = InvertedIndex::load(self.path(names::INDEX))?;
        let vocab = Vocab::load(self.path(names::VOCAB))?;
        let (_, tuples) = read_jsonl::<ClarificationTuple>(self.path(names::T1))?;
        let split: SplitFile = read_json(self.path(names::SPLIT))?;
        let pos: HashMap<&str, usize> = tuples.iter().enumerate().map(|(i, t)| (t.record_id.as_str(), i)).collect();
        let pick = |ids: &[String]| -> Result<Vec<ClarificationTuple>> {
            let idx = ids
                .iter()
                .map(|id| {
                    pos.get(id.as_str())
                        .copied()
                        .ok_or_else(|| RacError::config(format!("split names unknown record `{id}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(select(&tuples, &idx))
        };
        let (train, val, half_a, half_b) = (pick(&split.train)?, pick(&split.val)?, pick(&split.half_a)?, pick(&split.half_b)?);
        let base = self.load_model(names::BASE)?;
        Ok(Prepared {
            cfg: self.cfg.clone(),
            corpus,
            index,
            vocab,
            adapt: AdaptOutput {
                tuples: tuples.clone(),
                dropped: split.adapt_dropped,
            },
            train,
            val,
            half_a,
            half_b,
            base,
            base_log: None,
        })
    }

    /// Grounded SFT on half of T1 (`grounded.ckpt`) or on all of it.
    pub fn train_sft(&self, data: SftData) -> Result<Trained> {
        let p = self.prepared()?;
        let (tuples, stage, name) = match data {
            SftData::Half => (&p.half_a, "sft-grounded", names::GROUNDED),
            SftData::Full => (&p.train, "sft-full", names::SFT_FULL),
        };
        let examples = to_examples(tuples, &p.index, &p.vocab, None)?;
        let trained = train_sft(&p.base, &examples, ModelRole::Grounded, &self.cfg.train_config(stage))?;
        self.save_model(name, &trained.params, ModelRole::Grounded)?;
        self.save_log(name, &trained.log)?;
        Ok(trained)
    }

    pub fn train_uncond(&self) -> Result<Trained> {
        let p = self.prepared()?;
        let examples = to_examples(&p.half_a, &p.index, &p.vocab, None)?;
        let trained = train_sft(&p.base, &examples, ModelRole::Ungrounded, &self.cfg.train_config("sft-uncond"))?;
        self.save_model(names::UNCOND, &trained.params, ModelRole::Ungrounded)?;
        self.save_log(names::UNCOND, &trained.log)?;
        Ok(trained)
    }

    fn base_models(&self) -> Result<BaseModels> {
        let load = |name| -> Result<Trained> {
            Ok(Trained {
                params: self.load_model(name)?,
                log: TrainLog::default(),
            })
        };
        Ok(BaseModels {
            grounded: load(names::GROUNDED)?,
            uncond: load(names::UNCOND)?,
        })
    }

    /// Builds T2 from the second half of the training split.
    pub fn gen_negatives(&self) -> Result<super::T2Output> {
        let p = self.prepared()?;
        let grounded = self.load_model(names::GROUNDED)?;
        let negative = match self.cfg.negative_source {
            NegativeSource::Uncond => self.load_model(names::UNCOND)?,
            NegativeSource::BaseLm => p.base.clone(),
        };
        let t2 = build_t2(
            &p.half_b,
            &p.index,
            &p.vocab,
            &grounded,
            &negative,
            &self.cfg.mixture(self.cfg.stage_seed("t2")),
            &T2Options {
                positive_source: self.cfg.positive_source,
                negatives_per_tuple: self.cfg.negatives_per_tuple,
                max_len: self.cfg.max_gen_len,
            },
        )?;
        write_jsonl(self.path(names::NEGATIVES), &self.header("negatives"), &t2.negatives)?;
        write_jsonl(self.path(names::T2), &self.header("t2"), &t2.pairs)?;
        Ok(t2)
    }

    /// Joint-objective training from the grounded model.
    pub fn train_dpo(&self) -> Result<Trained> {
        let p = self.prepared()?;
        let grounded = self.load_model(names::GROUNDED)?;
        let (_, pairs) = read_jsonl::<PreferenceRecord>(self.path(names::T2))?;
        let pairs = pairs.iter().map(|r| r.to_example(&p.index, &p.vocab)).collect::<Result<Vec<_>>>()?;
        let t1 = to_examples(&p.train, &p.index, &p.vocab, None)?;
        let trained = train_dpo(&grounded, &grounded, &pairs, &t1, &self.cfg.dpo_train_config())?;
        self.save_model(names::DPO, &trained.params, ModelRole::Policy)?;
        self.save_log(names::DPO, &trained.log)?;
        Ok(trained)
    }

    /// Greedy generations of a checkpoint on a split, written as evaluation
    /// inputs.
    pub fn generate(&self, model: &Path, role: ModelRole, split: Split, out: &Path) -> Result<Vec<EvalInput>> {
        let p = self.prepared()?;
        let (params, _) = lm::load(model)?;
        let tuples = match split {
            Split::Train => &p.train,
            Split::Val => &p.val,
            Split::HalfA => &p.half_a,
            Split::HalfB => &p.half_b,
        };
        let records = generate_eval_records(&params, role, tuples, &p.index, &p.vocab, self.cfg.max_gen_len)?;
        let inputs: Vec<EvalInput> = tuples
            .iter()
            .zip(&records)
            .map(|(t, r)| EvalInput {
                record_id: Some(t.record_id.clone()),
                query: crate::text::detokenize(&t.query),
                passage_ids: Some(t.passage_ids.clone()),
                passages: None,
                candidate: crate::text::detokenize(&r.candidate),
                reference: Some(crate::text::detokenize(&t.question)),
            })
            .collect();
        write_jsonl(out, &self.header("generations"), &inputs)?;
        Ok(inputs)
    }

    /// Mixture sweep on the validation split with the trained pair of models.
    pub fn sweep_alpha(&self, alphas: &[f64], examples: usize) -> Result<super::AlphaReport> {
        let p = self.prepared()?;
        let report = sweep_alpha(&p, &self.base_models()?, alphas, &p.val, self.cfg.stage_seed("sweep-alpha"), examples)?;
        std::fs::write(self.path("sweep_alpha.csv"), report.to_csv())?;
        write_jsonl(self.path("sweep_alpha.jsonl"), &self.header("sweep-alpha"), &report.rows)?;
        Ok(report)
    }

    pub fn sweep_passages(&self, ks: &[usize]) -> Result<super::PassageSweep> {
        let report = sweep_passages(&self.cfg, ks)?;
        std::fs::write(self.path("sweep_passages.csv"), report.to_csv())?;
        write_jsonl(self.path("sweep_passages.jsonl"), &self.header("sweep-passages"), &report.rows)?;
        Ok(report)
    }

    pub fn sweep_retrieval(&self, strategies: &[Strategy]) -> Result<super::RetrievalSweep> {
        let report = sweep_retrieval(&self.cfg, strategies)?;
        std::fs::write(self.path("sweep_retrieval.csv"), report.to_csv())?;
        write_jsonl(self.path("sweep_retrieval.jsonl"), &self.header("sweep-retrieval"), &report.rows)?;
        Ok(report)
    }
}

/// Base model for a config: seeded initialisation, optionally pre-trained
/// on the documents.
pub(crate) fn base_model(cfg: &RunConfig, vocab: &Vocab, docs: &[Document]) -> Result<(LMParams, Option<TrainLog>)> {
    let init = init_params(&cfg.lm_config(vocab.len()))?;
    if cfg.pretrain_epochs == 0 {
        return Ok((init, None));
    }
    let docs: Vec<Vec<u32>> = docs.iter().map(|d| vocab.encode(&tokenize(&d.text))).collect();
    let mut tc = cfg.train_config("pretrain");
    tc.epochs = cfg.pretrain_epochs;
    let trained = pretrain_lm(&init, &docs, &tc)?;
    Ok((trained.params, Some(trained.log)))
}

/// Adaptation output of a config over an index.
pub(crate) fn adapt_with(cfg: &RunConfig, gold: &[GoldPair], index: &InvertedIndex) -> Result<AdaptOutput> {
    let mut adapt = adapt_dataset(gold, index, cfg.k, cfg.bm25(), &ConcatRewriter::default());
    if cfg.strategy == Strategy::Random {
        let seed = cfg.retrieval().seed;
        for (i, t) in adapt.tuples.iter_mut().enumerate() {
            t.passage_ids = crate::retrieval::random_retrieve(index, cfg.k, seed ^ i as u64)?;
        }
    }
    Ok(adapt)
}

/// Seeded train/validation split and the two halves of the training part.
pub(crate) fn splits(
    cfg: &RunConfig,
    tuples: &[ClarificationTuple],
) -> (Vec<ClarificationTuple>, Vec<ClarificationTuple>, Vec<ClarificationTuple>, Vec<ClarificationTuple>) {
    let (tr, va) = split_indices(tuples.len(), cfg.val_fraction, cfg.stage_seed("split"));
    let train = select(tuples, &tr);
    let val = select(tuples, &va);
    let (ha, hb) = split_indices(train.len(), 0.5, cfg.stage_seed("half"));
    let half_a = select(&train, &ha);
    let half_b = select(&train, &hb);
    (train, val, half_a, half_b)
}
