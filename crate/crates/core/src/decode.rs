//! Temperature/top-k sampling and the gated two-model mixture decoder used
//! to synthesise unfaithful clarifying questions.
//!
//! Randomness: the token stream of a generation with seed `s` is drawn from
//! `rng_from_seed(s)`; the mixture gates come from a separate stream derived
//! from `s`. Token draws therefore line up one-for-one with plain
//! [`generate`], which is what makes the `alpha = 0` and `alpha = 1`
//! endpoints reproduce single-model decoding exactly.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::lm::{context_ids, log_softmax, next_token_logits, LMParams, ModelRole};
use crate::seed::{rng_from_seed, stage_seed, Rng};
use crate::text::{special, TokenId};

/// Temperatures below this are clamped.
pub const MIN_TEMPERATURE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleConfig {
    pub temperature: f64,
    pub top_k: usize,
    pub max_len: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            temperature: 1.0,
            top_k: 10,
            max_len: 24,
            seed: 0,
        }
    }
}

impl SampleConfig {
    /// Greedy decoding with the given length budget.
    pub fn greedy(max_len: usize) -> Self {
        Self {
            temperature: 1.0,
            top_k: 1,
            max_len,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.temperature.is_nan() || self.temperature <= 0.0 {
            return Err(RacError::config("temperature must be positive"));
        }
        if self.top_k == 0 {
            return Err(RacError::config("top_k must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureConfig {
    pub alpha: f64,
    pub sample: SampleConfig,
}

impl MixtureConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(RacError::config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        self.sample.validate()
    }
}

/// Applies temperature and top-k to raw logits and returns the full-length
/// probability vector (zero outside the kept set). Ties at the cut-off keep
/// the lower token id.
pub fn shape(logits: &[f64], temperature: f64, top_k: usize) -> Result<Vec<f64>> {
    if logits.iter().any(|x| !x.is_finite()) {
        return Err(RacError::NonFinite("logits".into()));
    }
    if logits.is_empty() || top_k == 0 {
        return Err(RacError::config("need at least one logit and top_k >= 1"));
    }
    let t = temperature.max(MIN_TEMPERATURE);
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    let kept = &order[..top_k.min(logits.len())];
    let scaled: Vec<f64> = kept.iter().map(|&i| logits[i] / t).collect();
    let ls = log_softmax(&scaled);
    let mut probs = vec![0.0; logits.len()];
    for (&i, l) in kept.iter().zip(ls) {
        probs[i] = l.exp();
    }
    Ok(probs)
}

/// Inverse-CDF draw over `probs` in index order.
pub fn sample_from(probs: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > 0.0 {
            cum += p;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

pub fn sample_token(logits: &[f64], cfg: &SampleConfig, rng: &mut Rng) -> Result<TokenId> {
    let probs = shape(logits, cfg.temperature, cfg.top_k)?;
    Ok(sample_from(&probs, rng) as TokenId)
}

fn check_normalised(p: &[f64]) -> Result<()> {
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > 1e-9 || p.iter().any(|x| x.is_nan() || *x < 0.0) {
        return Err(RacError::Unnormalised(s));
    }
    Ok(())
}

/// One mixture draw over already-shaped distributions: the gate picks the
/// query-only distribution with probability `alpha`, then a token is drawn
/// from the picked one. Returns the token and the gate.
pub fn mixture_step(
    grounded: &[f64],
    uncond: &[f64],
    alpha: f64,
    gate_rng: &mut Rng,
    token_rng: &mut Rng,
) -> Result<(TokenId, bool)> {
    check_normalised(grounded)?;
    check_normalised(uncond)?;
    if grounded.len() != uncond.len() {
        return Err(RacError::config("mixture components differ in length"));
    }
    let gate = draw_gate(alpha, gate_rng);
    let dist = if gate { uncond } else { grounded };
    Ok((sample_from(dist, token_rng) as TokenId, gate))
}

fn draw_gate(alpha: f64, rng: &mut Rng) -> bool {
    rng.random::<f64>() < alpha
}

/// Output of [`generate`]: tokens without the terminating EOS.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generation {
    pub tokens: Vec<TokenId>,
    /// Whether decoding stopped on EOS.
    pub ended: bool,
    /// Unshaped model log-probability of the emitted tokens, EOS included.
    pub log_prob: f64,
}

fn check_context(params: &LMParams, context: &[TokenId]) -> Result<()> {
    let max = params.config.context_len;
    if context.is_empty() || context.len() >= max {
        return Err(RacError::SequenceTooLong {
            len: context.len(),
            max,
        });
    }
    Ok(())
}

/// Autoregressive decoding until EOS, `max_len` tokens, or a full context.
pub fn generate(params: &LMParams, context: &[TokenId], cfg: &SampleConfig) -> Result<Generation> {
    cfg.validate()?;
    check_context(params, context)?;
    let mut rng = rng_from_seed(cfg.seed);
    let mut ids = context.to_vec();
    let mut out = Generation {
        tokens: Vec::new(),
        ended: false,
        log_prob: 0.0,
    };
    while out.tokens.len() < cfg.max_len && ids.len() < params.config.context_len {
        let logits = next_token_logits(params, &ids)?;
        let tok = sample_token(&logits, cfg, &mut rng)?;
        out.log_prob += log_softmax(&logits)[tok as usize];
        if tok == special::EOS {
            out.ended = true;
            break;
        }
        out.tokens.push(tok);
        ids.push(tok);
    }
    Ok(out)
}

/// Output of [`noisy_generate`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoisyGeneration {
    pub tokens: Vec<TokenId>,
    /// `gates[i]` is true when `tokens[i]` came from the query-only model.
    pub gates: Vec<bool>,
    /// Seed that produced this output (differs from the request after a retry).
    pub seed: u64,
}

/// Mixture decoding of an unfaithful question. Both models condition on the
/// same emitted prefix; only the model chosen by the gate is evaluated at
/// each step, which leaves the per-token law unchanged.
pub fn noisy_generate(
    grounded: &LMParams,
    uncond: &LMParams,
    query: &[TokenId],
    passages: &[Vec<TokenId>],
    cfg: &MixtureConfig,
) -> Result<NoisyGeneration> {
    cfg.validate()?;
    let g_ctx = context_ids(ModelRole::Grounded, query, passages);
    let u_ctx = context_ids(ModelRole::Ungrounded, query, passages);
    check_context(grounded, &g_ctx)?;
    check_context(uncond, &u_ctx)?;
    let first = mixture_once(grounded, uncond, &g_ctx, &u_ctx, cfg, cfg.sample.seed)?;
    if !first.tokens.is_empty() {
        return Ok(first);
    }
    let retry_seed = stage_seed(cfg.sample.seed, "retry");
    let second = mixture_once(grounded, uncond, &g_ctx, &u_ctx, cfg, retry_seed)?;
    if second.tokens.is_empty() {
        return Err(RacError::EmptyGeneration(cfg.sample.seed));
    }
    Ok(second)
}

fn mixture_once(
    grounded: &LMParams,
    uncond: &LMParams,
    g_ctx: &[TokenId],
    u_ctx: &[TokenId],
    cfg: &MixtureConfig,
    seed: u64,
) -> Result<NoisyGeneration> {
    let s = &cfg.sample;
    let mut token_rng = rng_from_seed(seed);
    let mut gate_rng = rng_from_seed(stage_seed(seed, "gate"));
    let (mut g_ids, mut u_ids) = (g_ctx.to_vec(), u_ctx.to_vec());
    let mut out = NoisyGeneration {
        tokens: Vec::new(),
        gates: Vec::new(),
        seed,
    };
    while out.tokens.len() < s.max_len
        && g_ids.len() < grounded.config.context_len
        && u_ids.len() < uncond.config.context_len
    {
        let gate = draw_gate(cfg.alpha, &mut gate_rng);
        let logits = if gate {
            next_token_logits(uncond, &u_ids)?
        } else {
            next_token_logits(grounded, &g_ids)?
        };
        let tok = sample_token(&logits, s, &mut token_rng)?;
        if tok == special::EOS {
            break;
        }
        out.tokens.push(tok);
        out.gates.push(gate);
        g_ids.push(tok);
        u_ids.push(tok);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_keeps_top_k() {
        let p = shape(&[1.0, 3.0, 2.0, 3.0], 1.0, 2).unwrap();
        assert_eq!(p[0], 0.0);
        assert_eq!(p[2], 0.0);
        assert!((p[1] - 0.5).abs() < 1e-15 && (p[3] - 0.5).abs() < 1e-15);
        let one = shape(&[1.0, 3.0, 2.0], 50.0, 1).unwrap();
        assert_eq!(one, vec![0.0, 1.0, 0.0]);
    }

    #[test]
    fn cold_temperature_is_argmax() {
        let p = shape(&[0.1, 0.2, 0.19], 0.0, 3).unwrap();
        assert!(p[1] >= 1.0 - 1e-9);
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(shape(&[f64::NAN, 1.0], 1.0, 1), Err(RacError::NonFinite(_))));
    }

    #[test]
    fn mixture_validates_inputs() {
        let mut a = rng_from_seed(0);
        let mut b = rng_from_seed(1);
        let err = mixture_step(&[0.5, 0.6], &[0.5, 0.5], 0.5, &mut a, &mut b).unwrap_err();
        assert!(matches!(err, RacError::Unnormalised(_)));
        let (tok, gate) = mixture_step(&[1.0, 0.0], &[0.0, 1.0], 1.0, &mut a, &mut b).unwrap();
        assert!(gate);
        assert_eq!(tok, 1);
    }
}
