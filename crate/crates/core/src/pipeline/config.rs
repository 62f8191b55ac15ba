use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decode::{MixtureConfig, SampleConfig};
use crate::error::{RacError, Result};
use crate::lm::LMConfig;
use crate::retrieval::{Bm25Params, RetrievalConfig, Strategy};
use crate::seed::stage_seed;
use crate::train::{Schedule, TrainConfig};

use super::corpus::SyntheticCorpusSpec;

/// Where the rejected questions of T2 come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Mixture of the grounded and the query-only fine-tune.
    #[default]
    Uncond,
    /// Mixture of the grounded model and the untuned base model.
    BaseLm,
}

/// Where the chosen questions of T2 come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositiveSource {
    /// Greedy decoding of the grounded model.
    #[default]
    Generated,
    Gold,
}

/// Training data for the reported SFT model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftData {
    /// The half of T1 the grounded reference model was trained on.
    #[default]
    Half,
    Full,
}

macro_rules! parse_enum {
    ($ty:ty, $($s:literal => $v:expr),+) => {
        impl std::str::FromStr for $ty {
            type Err = RacError;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($s => Ok($v),)+
                    other => Err(RacError::config(format!("unknown value `{other}`"))),
                }
            }
        }
    };
}
parse_enum!(NegativeSource, "uncond" => NegativeSource::Uncond, "base_lm" => NegativeSource::BaseLm);
parse_enum!(PositiveSource, "generated" => PositiveSource::Generated, "gold" => PositiveSource::Gold);
parse_enum!(SftData, "half" => SftData::Half, "full" => SftData::Full);

/// Every knob of a run, stored as one flat JSON object. Missing keys take
/// their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    pub num_topics: usize,
    pub facets_per_topic: usize,
    pub docs_per_facet: usize,
    pub facet_pool: usize,
    pub filler_words: usize,
    pub chunk_size: usize,

    pub k: usize,
    pub k1: f64,
    pub b: f64,
    pub strategy: Strategy,

    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,

    /// Epochs of every supervised stage.
    pub epochs: usize,
    /// Epochs of preference training.
    pub dpo_epochs: usize,
    pub batch_size: usize,
    /// Billion-parameter models typically use 1e-5.
    pub lr_sft: f64,
    /// Billion-parameter models typically use 2e-6.
    pub lr_dpo: f64,
    pub beta: f64,
    pub gamma: f64,
    pub schedule: Schedule,
    /// Next-token pre-training epochs for the base model on the corpus; 0 skips it.
    pub pretrain_epochs: usize,
    pub sft_data: SftData,

    pub alpha: f64,
    pub temperature: f64,
    pub top_k: usize,
    pub max_gen_len: usize,
    pub negative_source: NegativeSource,
    pub positive_source: PositiveSource,
    pub negatives_per_tuple: usize,

    pub val_fraction: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let train = TrainConfig::default();
        let corpus = SyntheticCorpusSpec::default();
        Self {
            seed: 0,
            num_topics: corpus.num_topics,
            facets_per_topic: corpus.facets_per_topic,
            docs_per_facet: corpus.docs_per_facet,
            facet_pool: corpus.facet_pool,
            filler_words: corpus.filler_words,
            chunk_size: crate::text::DEFAULT_CHUNK_SIZE,
            k: 5,
            k1: 0.9,
            b: 0.4,
            strategy: Strategy::Bm25,
            d_model: 32,
            n_layers: 2,
            n_heads: 4,
            context_len: 128,
            epochs: 50,
            dpo_epochs: 5,
            batch_size: train.batch_size,
            lr_sft: 1e-2,
            lr_dpo: 1e-3,
            beta: train.beta,
            gamma: train.gamma,
            schedule: train.schedule,
            pretrain_epochs: 0,
            sft_data: SftData::Half,
            alpha: 0.7,
            temperature: 1.0,
            top_k: 10,
            max_gen_len: 16,
            negative_source: NegativeSource::Uncond,
            positive_source: PositiveSource::Generated,
            negatives_per_tuple: 1,
            val_fraction: 0.2,
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let cfg: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus_spec().validate()?;
        self.bm25().validate()?;
        self.train_config("validate").validate()?;
        self.dpo_train_config().validate()?;
        self.mixture(0).validate()?;
        if self.chunk_size == 0 {
            return Err(RacError::config("chunk_size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(RacError::config("val_fraction must lie in [0, 1)"));
        }
        if self.negatives_per_tuple == 0 {
            return Err(RacError::config("negatives_per_tuple must be at least 1"));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serialises");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn stage_seed(&self, stage: &str) -> u64 {
        stage_seed(self.seed, stage)
    }

    pub fn corpus_spec(&self) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            num_topics: self.num_topics,
            facets_per_topic: self.facets_per_topic,
            docs_per_facet: self.docs_per_facet,
            facet_pool: self.facet_pool,
            filler_words: self.filler_words,
            seed: self.stage_seed("corpus"),
        }
    }

    pub fn bm25(&self) -> Bm25Params {
        Bm25Params { k1: self.k1, b: self.b }
    }

    pub fn retrieval(&self) -> RetrievalConfig {
        RetrievalConfig {
            k: self.k,
            strategy: self.strategy,
            seed: self.stage_seed("retrieval"),
        }
    }

    pub fn lm_config(&self, vocab_size: usize) -> LMConfig {
        LMConfig {
            vocab_size,
            d_model: self.d_model,
            n_layers: self.n_layers,
            n_heads: self.n_heads,
            context_len: self.context_len,
            seed: self.stage_seed("init"),
        }
    }

    /// Training config whose seed is derived for `stage`.
    pub fn train_config(&self, stage: &str) -> TrainConfig {
        TrainConfig {
            lr_sft: self.lr_sft,
            lr_dpo: self.lr_dpo,
            epochs: self.epochs,
            batch_size: self.batch_size,
            beta: self.beta,
            gamma: self.gamma,
            schedule: self.schedule,
            seed: self.stage_seed(stage),
        }
    }

    /// Training config of the preference stage.
    pub fn dpo_train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.dpo_epochs,
            ..self.train_config("dpo")
        }
    }

    pub fn mixture(&self, seed: u64) -> MixtureConfig {
        MixtureConfig {
            alpha: self.alpha,
            sample: SampleConfig {
                temperature: self.temperature,
                top_k: self.top_k,
                max_len: self.max_gen_len,
                seed,
            },
        }
    }
}
