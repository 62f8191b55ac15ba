use crate::error::{RacError, Result};
use crate::lm::{score_masked, LMParams, SequenceEncoding};

/// Chosen and rejected continuations of one shared context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PreferenceEncoding {
    pub chosen: SequenceEncoding,
    pub rejected: SequenceEncoding,
}

/// Reference log-probabilities for a preference pair, computed once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceScores {
    pub chosen: f64,
    pub rejected: f64,
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Per-pair DPO loss `-log sigma(beta * (d_plus - d_minus))`.
pub fn dpo_pair_loss(delta_plus: f64, delta_minus: f64, beta: f64) -> f64 {
    softplus(-beta * (delta_plus - delta_minus))
}

/// Negative log-likelihood of the masked targets, averaged over the batch.
pub fn sft_loss(params: &LMParams, batch: &[SequenceEncoding]) -> Result<(f64, LMParams)> {
    let mut grads = params.zeros_like();
    let loss = sft_accumulate(params, batch, 1.0, &mut grads)?;
    Ok((loss, grads))
}

/// Adds `weight * d(sft)/d(params)` to `grads` and returns the unweighted loss.
pub(crate) fn sft_accumulate(
    params: &LMParams,
    batch: &[SequenceEncoding],
    weight: f64,
    grads: &mut LMParams,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(RacError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let scale = -weight / n;
    let mut total = 0.0;
    for enc in batch {
        let s = score_masked(params, enc)?;
        s.accumulate_grad(params, scale, grads);
        total -= s.log_prob;
    }
    Ok(total / n)
}

/// Sequence log-probabilities of both halves of each pair under `params`.
pub fn reference_scores(params: &LMParams, batch: &[PreferenceEncoding]) -> Result<Vec<ReferenceScores>> {
    batch
        .iter()
        .map(|p| {
            Ok(ReferenceScores {
                chosen: score_masked(params, &p.chosen)?.log_prob,
                rejected: score_masked(params, &p.rejected)?.log_prob,
            })
        })
        .collect()
}

/// DPO loss of `policy` against a frozen `reference`, with policy gradients.
pub fn dpo_loss(
    policy: &LMParams,
    reference: &LMParams,
    batch: &[PreferenceEncoding],
    beta: f64,
) -> Result<(f64, LMParams)> {
    let refs = reference_scores(reference, batch)?;
    let mut grads = policy.zeros_like();
    let stats = dpo_accumulate(policy, batch, &refs, beta, 1.0, &mut grads)?;
    Ok((stats.loss, grads))
}

/// Batch summary returned alongside DPO gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct DpoBatch {
    pub loss: f64,
    /// Fraction of pairs with `d_plus > d_minus`.
    pub accuracy: f64,
}

pub(crate) fn dpo_accumulate(
    policy: &LMParams,
    batch: &[PreferenceEncoding],
    refs: &[ReferenceScores],
    beta: f64,
    weight: f64,
    grads: &mut LMParams,
) -> Result<DpoBatch> {
    if batch.is_empty() {
        return Err(RacError::EmptyBatch);
    }
    if beta.is_nan() || beta <= 0.0 {
        return Err(RacError::config("beta must be positive"));
    }
    let n = batch.len() as f64;
    let (mut total, mut correct) = (0.0, 0usize);
    for (i, (pair, r)) in batch.iter().zip(refs).enumerate() {
        if pair.chosen == pair.rejected {
            return Err(RacError::IdenticalPair(i));
        }
        let chosen = score_masked(policy, &pair.chosen)?;
        let rejected = score_masked(policy, &pair.rejected)?;
        let z = beta * ((chosen.log_prob - r.chosen) - (rejected.log_prob - r.rejected));
        total += softplus(-z);
        if z > 0.0 {
            correct += 1;
        }
        // d/dz softplus(-z) = -sigmoid(-z)
        let coef = -sigmoid(-z) * beta * weight / n;
        if coef != 0.0 {
            chosen.accumulate_grad(policy, coef, grads);
            rejected.accumulate_grad(policy, -coef, grads);
        }
    }
    Ok(DpoBatch {
        loss: total / n,
        accuracy: correct as f64 / n,
    })
}

/// `gamma * dpo + (1 - gamma) * sft`. At the endpoints only the surviving
/// term is evaluated, so the matching batch may be empty.
pub fn rac_loss(
    policy: &LMParams,
    reference: &LMParams,
    t1_batch: &[SequenceEncoding],
    t2_batch: &[PreferenceEncoding],
    gamma: f64,
    beta: f64,
) -> Result<(f64, LMParams)> {
    let refs = if gamma > 0.0 {
        reference_scores(reference, t2_batch)?
    } else {
        Vec::new()
    };
    let mut grads = policy.zeros_like();
    let out = rac_accumulate(policy, t1_batch, t2_batch, &refs, gamma, beta, &mut grads)?;
    Ok((out.loss, grads))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct RacBatch {
    pub loss: f64,
    pub pref_acc: Option<f64>,
}

pub(crate) fn rac_accumulate(
    policy: &LMParams,
    t1_batch: &[SequenceEncoding],
    t2_batch: &[PreferenceEncoding],
    refs: &[ReferenceScores],
    gamma: f64,
    beta: f64,
    grads: &mut LMParams,
) -> Result<RacBatch> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(RacError::config(format!("gamma {gamma} outside [0, 1]")));
    }
    if gamma == 0.0 {
        let loss = sft_accumulate(policy, t1_batch, 1.0, grads)?;
        return Ok(RacBatch { loss, pref_acc: None });
    }
    if gamma == 1.0 {
        let d = dpo_accumulate(policy, t2_batch, refs, beta, 1.0, grads)?;
        return Ok(RacBatch {
            loss: d.loss,
            pref_acc: Some(d.accuracy),
        });
    }
    let sft = sft_accumulate(policy, t1_batch, 1.0 - gamma, grads)?;
    let d = dpo_accumulate(policy, t2_batch, refs, beta, gamma, grads)?;
    Ok(RacBatch {
        loss: gamma * d.loss + (1.0 - gamma) * sft,
        pref_acc: Some(d.accuracy),
    })
}
