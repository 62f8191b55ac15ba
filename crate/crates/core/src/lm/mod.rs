//! A small decoder-only language model with exact analytic gradients.
//!
//! One architecture serves every role in the pipeline: the base model, the
//! passage-grounded model, the query-only model and the trained policy. Roles
//! differ only in the context they are fed (see [`encoding`]).

mod checkpoint;
pub mod encoding;
pub mod model;
mod params;

pub use checkpoint::{load, save, CHECKPOINT_MAGIC};
pub use encoding::{check_role, context_ids, encode, with_eos, ModelRole, SequenceEncoding};
pub use model::{backward, forward, forward_rows, log_softmax, next_token_logits, softmax, ForwardCache, Logits};
pub use params::{LMParams, Tensor, INIT_STD};

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::text::TokenId;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LMConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub seed: u64,
}

impl LMConfig {
    /// Feed-forward width.
    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 5 {
            return Err(RacError::config("vocab_size must be at least 5"));
        }
        if self.n_heads == 0 || self.d_model == 0 || self.d_model % self.n_heads != 0 {
            return Err(RacError::config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.context_len < 8 {
            return Err(RacError::config("context_len must be at least 8"));
        }
        Ok(())
    }
}

pub fn init_params(cfg: &LMConfig) -> Result<LMParams> {
    LMParams::init(cfg)
}

/// `sum_t log p(target_t | context, target_<t)`.
pub fn sequence_log_prob(params: &LMParams, context: &[TokenId], target: &[TokenId]) -> Result<f64> {
    if target.is_empty() {
        return Ok(0.0);
    }
    let enc = SequenceEncoding::new(context, target);
    masked_log_prob(params, &enc, 0.0, None)
}

/// Forward pass over one encoding, kept so the gradient of its masked
/// log-probability can be taken once a loss coefficient is known.
pub struct MaskedScore {
    cache: ForwardCache,
    rows: Vec<usize>,
    targets: Vec<TokenId>,
    log_probs: Vec<Vec<f64>>,
    /// Sum of target log-probabilities.
    pub log_prob: f64,
}

impl MaskedScore {
    /// Accumulates `scale * d(log_prob)/d(params)` into `grads`.
    pub fn accumulate_grad(&self, params: &LMParams, scale: f64, grads: &mut LMParams) {
        if self.rows.is_empty() {
            return;
        }
        let v = params.config.vocab_size;
        let mut dl = vec![0.0; self.rows.len() * v];
        for (r, (ls, &target)) in self.log_probs.iter().zip(&self.targets).enumerate() {
            // d log p_target / d logits = onehot - softmax
            let dst = &mut dl[r * v..(r + 1) * v];
            for (d, l) in dst.iter_mut().zip(ls) {
                *d = -scale * l.exp();
            }
            dst[target as usize] += scale;
        }
        backward(params, &self.cache, &self.rows, &dl, grads);
    }
}

pub fn score_masked(params: &LMParams, enc: &SequenceEncoding) -> Result<MaskedScore> {
    enc.check_len(params.config.context_len)?;
    let (rows, targets): (Vec<usize>, Vec<TokenId>) = enc.target_rows().into_iter().unzip();
    let (cache, logits) = forward_rows(params, &enc.ids, &rows)?;
    let mut log_prob = 0.0;
    let log_probs = (0..rows.len())
        .map(|r| {
            let ls = log_softmax(logits.row(r));
            log_prob += ls[targets[r] as usize];
            ls
        })
        .collect();
    Ok(MaskedScore {
        cache,
        rows,
        targets,
        log_probs,
        log_prob,
    })
}

/// Sum of log-probabilities over the masked positions of `enc`. When `grads`
/// is given, accumulates `scale * d(sum)/d(params)` into it.
pub fn masked_log_prob(
    params: &LMParams,
    enc: &SequenceEncoding,
    scale: f64,
    grads: Option<&mut LMParams>,
) -> Result<f64> {
    let score = score_masked(params, enc)?;
    if let Some(g) = grads {
        score.accumulate_grad(params, scale, g);
    }
    Ok(score.log_prob)
}
