//! Objectives, optimizer and training loops.
//!
//! Three models come out of here: the grounded and query-only fine-tunes
//! (`train_sft`) and the preference-aligned policy (`train_dpo`).

mod adam;
mod loss;

pub use adam::{Adam, Schedule, BETA1, BETA2, EPSILON};
pub use loss::{
    dpo_loss, dpo_pair_loss, rac_loss, reference_scores, sft_loss, sigmoid, softplus, PreferenceEncoding,
    ReferenceScores,
};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::lm::{encode, score_masked, with_eos, LMParams, ModelRole, SequenceEncoding};
use crate::seed::{rng_from_seed, stage_seed, Rng};
use crate::text::{special, TokenId};

/// Optimisation hyperparameters.
///
/// The learning rates are far above the 1e-5 (SFT) and 2e-6 (DPO) used for
/// billion-parameter models; a model this small does not move at those rates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr_sft: f64,
    pub lr_dpo: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub beta: f64,
    pub gamma: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_sft: 3e-3,
            lr_dpo: 3e-4,
            epochs: 2,
            batch_size: 32,
            beta: 0.1,
            gamma: 0.5,
            schedule: Schedule::Linear,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_sft > 0.0 && self.lr_dpo > 0.0) {
            return Err(RacError::config("learning rates must be positive"));
        }
        if self.beta.is_nan() || self.beta <= 0.0 {
            return Err(RacError::config("beta must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(RacError::config(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(RacError::config("batch_size must be at least 1"));
        }
        Ok(())
    }
}

/// A token-id view of one `(U_q, D, C_q)` tuple.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClarificationExample {
    pub query: Vec<TokenId>,
    pub passages: Vec<Vec<TokenId>>,
    pub question: Vec<TokenId>,
}

impl ClarificationExample {
    pub fn encode(&self, role: ModelRole, context_len: usize) -> Result<SequenceEncoding> {
        encode(role, &self.query, &self.passages, &self.question, context_len)
    }
}

/// A token-id view of one `(U_q, D, C_q^+, C_q^-)` record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreferenceExample {
    pub query: Vec<TokenId>,
    pub passages: Vec<Vec<TokenId>>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
}

impl PreferenceExample {
    pub fn encode(&self, context_len: usize) -> Result<PreferenceEncoding> {
        let role = ModelRole::Policy;
        Ok(PreferenceEncoding {
            chosen: encode(role, &self.query, &self.passages, &self.chosen, context_len)?,
            rejected: encode(role, &self.query, &self.passages, &self.rejected, context_len)?,
        })
    }
}

/// One optimizer step as written to the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pref_acc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the step losses in this epoch.
    pub loss: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pref_acc: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    fn close_epoch(&mut self, epoch: usize, pref: Option<PreferenceStats>) {
        let losses: Vec<f64> = self.steps.iter().filter(|s| s.epoch == epoch).map(|s| s.loss).collect();
        let loss = losses.iter().sum::<f64>() / losses.len().max(1) as f64;
        self.epochs.push(EpochLog {
            epoch,
            loss,
            pref_acc: pref.map(|p| p.accuracy),
            margin: pref.map(|p| p.mean_margin),
        });
    }
}

/// Trained weights plus the log that produced them.
#[derive(Debug, Clone)]
pub struct Trained {
    pub params: LMParams,
    pub log: TrainLog,
}

/// Yields index batches over `0..n`, reshuffling at every epoch boundary.
/// The final batch of an epoch may be short.
pub struct EpochBatcher {
    order: Vec<usize>,
    pos: usize,
    batch_size: usize,
    rng: Rng,
}

impl EpochBatcher {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            batch_size: batch_size.max(1),
            rng: rng_from_seed(seed),
        }
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.sort_unstable();
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let batch = self.order[self.pos..end].to_vec();
        self.pos = end;
        batch
    }
}

fn pick<T: Clone>(items: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| items[i].clone()).collect()
}

/// Plain NLL fitting loop shared by SFT and pre-training.
fn fit(params: LMParams, data: &[SequenceEncoding], lr: f64, cfg: &TrainConfig) -> Result<Trained> {
    fit_with(params, data, lr, cfg, &mut |_, _| Ok(()))
}

/// The SFT loop, calling `on_epoch` with the weights after every epoch.
fn fit_with(
    mut params: LMParams,
    data: &[SequenceEncoding],
    lr: f64,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(usize, &LMParams) -> Result<()>,
) -> Result<Trained> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(RacError::EmptyDataset("no training sequences".into()));
    }
    let mut batcher = EpochBatcher::new(data.len(), cfg.batch_size, cfg.seed);
    let per_epoch = batcher.batches_per_epoch();
    let total = (per_epoch * cfg.epochs) as u64;
    let mut opt = Adam::new(&params);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        for _ in 0..per_epoch {
            let batch = pick(data, &batcher.next_batch());
            let (loss, grads) = sft_loss(&params, &batch)?;
            let step = opt.steps() + 1;
            let lr_t = cfg.schedule.lr_at(lr, step, total);
            opt.step(&mut params, &grads, lr_t)?;
            log.steps.push(StepLog {
                step,
                epoch,
                loss,
                lr: lr_t,
                pref_acc: None,
            });
        }
        log.close_epoch(epoch, None);
        on_epoch(epoch, &params)?;
    }
    params.check_finite()?;
    Ok(Trained { params, log })
}

/// Supervised fine-tuning on T1 under a grounded or query-only role.
pub fn train_sft(
    base: &LMParams,
    data: &[ClarificationExample],
    role: ModelRole,
    cfg: &TrainConfig,
) -> Result<Trained> {
    if !matches!(role, ModelRole::Grounded | ModelRole::Ungrounded) {
        return Err(RacError::RoleContract(format!("train_sft cannot train the {role:?} role")));
    }
    let ctx = base.config.context_len;
    let encoded = data.iter().map(|e| e.encode(role, ctx)).collect::<Result<Vec<_>>>()?;
    fit(base.clone(), &encoded, cfg.lr_sft, cfg)
}

/// Next-token pre-training on raw documents: `[BOS] doc [EOS]`, every
/// position after BOS supervised. Documents longer than the context are
/// split into context-sized windows.
pub fn pretrain_lm(base: &LMParams, docs: &[Vec<TokenId>], cfg: &TrainConfig) -> Result<Trained> {
    let window = base.config.context_len - 1;
    let encoded: Vec<SequenceEncoding> = docs
        .iter()
        .flat_map(|d| {
            let body = with_eos(d);
            body.chunks(window)
                .map(|c| SequenceEncoding::new(&[special::BOS], c))
                .collect::<Vec<_>>()
        })
        .collect();
    fit(base.clone(), &encoded, cfg.lr_sft, cfg)
}

/// Outcome of [`train_sft_early_stopped`].
#[derive(Debug, Clone)]
pub struct EarlyStopped {
    /// Weights from the epoch with the lowest development NLL.
    pub best: Trained,
    /// Weights after the last epoch.
    pub last: LMParams,
    pub best_epoch: usize,
    pub dev_nll: Vec<f64>,
}

/// [`train_sft`] that scores `dev` after every epoch and keeps the weights
/// with the lowest masked NLL (the earliest on ties).
pub fn train_sft_early_stopped(
    base: &LMParams,
    data: &[ClarificationExample],
    dev: &[ClarificationExample],
    role: ModelRole,
    cfg: &TrainConfig,
) -> Result<EarlyStopped> {
    if !matches!(role, ModelRole::Grounded | ModelRole::Ungrounded) {
        return Err(RacError::RoleContract(format!("train_sft cannot train the {role:?} role")));
    }
    let ctx = base.config.context_len;
    let encoded = data.iter().map(|e| e.encode(role, ctx)).collect::<Result<Vec<_>>>()?;
    let dev_enc = dev.iter().map(|e| e.encode(role, ctx)).collect::<Result<Vec<_>>>()?;
    let mut best: Option<(usize, LMParams)> = None;
    let mut dev_nll: Vec<f64> = Vec::with_capacity(cfg.epochs);
    let last = fit_with(base.clone(), &encoded, cfg.lr_sft, cfg, &mut |epoch, params| {
        let nll = masked_nll(params, &dev_enc)?;
        if dev_nll.iter().all(|&x| nll < x) {
            best = Some((epoch, params.clone()));
        }
        dev_nll.push(nll);
        Ok(())
    })?;
    let (best_epoch, params) = best.ok_or_else(|| RacError::config("early stopping needs at least one epoch"))?;
    Ok(EarlyStopped {
        best: Trained {
            params,
            log: last.log,
        },
        last: last.params,
        best_epoch,
        dev_nll,
    })
}

/// Accuracy and mean margin `beta * (d_plus - d_minus)` over a set of pairs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceStats {
    pub accuracy: f64,
    pub mean_margin: f64,
}

fn stats_with_refs(
    policy: &LMParams,
    pairs: &[PreferenceEncoding],
    refs: &[ReferenceScores],
    beta: f64,
) -> Result<PreferenceStats> {
    if pairs.is_empty() {
        return Err(RacError::EmptyBatch);
    }
    let (mut correct, mut margin) = (0usize, 0.0);
    for (p, r) in pairs.iter().zip(refs) {
        let dp = score_masked(policy, &p.chosen)?.log_prob - r.chosen;
        let dm = score_masked(policy, &p.rejected)?.log_prob - r.rejected;
        if dp > dm {
            correct += 1;
        }
        margin += beta * (dp - dm);
    }
    let n = pairs.len() as f64;
    Ok(PreferenceStats {
        accuracy: correct as f64 / n,
        mean_margin: margin / n,
    })
}

pub fn preference_stats(
    policy: &LMParams,
    reference: &LMParams,
    pairs: &[PreferenceExample],
    beta: f64,
) -> Result<PreferenceStats> {
    let ctx = policy.config.context_len;
    let enc = pairs.iter().map(|p| p.encode(ctx)).collect::<Result<Vec<_>>>()?;
    let refs = reference_scores(reference, &enc)?;
    stats_with_refs(policy, &enc, &refs, beta)
}

/// Preference training with the joint objective. Steps are driven by T2;
/// T1 batches come from a batcher seeded exactly like `train_sft`'s, so at
/// `gamma = 0` with `|T1| == |T2|` the two loops perform identical updates.
pub fn train_dpo(
    policy_init: &LMParams,
    reference: &LMParams,
    t2: &[PreferenceExample],
    t1: &[ClarificationExample],
    cfg: &TrainConfig,
) -> Result<Trained> {
    cfg.validate()?;
    if t2.is_empty() {
        return Err(RacError::EmptyDataset("T2 has no preference pairs".into()));
    }
    if cfg.gamma < 1.0 && t1.is_empty() {
        return Err(RacError::EmptyDataset("T1 is required when gamma < 1".into()));
    }
    let ctx = policy_init.config.context_len;
    let pairs = t2.iter().map(|p| p.encode(ctx)).collect::<Result<Vec<_>>>()?;
    let sft = t1
        .iter()
        .map(|e| e.encode(ModelRole::Policy, ctx))
        .collect::<Result<Vec<_>>>()?;
    let refs = reference_scores(reference, &pairs)?;

    let mut params = policy_init.clone();
    let mut t1_batcher = EpochBatcher::new(sft.len(), cfg.batch_size, cfg.seed);
    let mut t2_batcher = EpochBatcher::new(pairs.len(), cfg.batch_size, stage_seed(cfg.seed, "t2-order"));
    let per_epoch = t2_batcher.batches_per_epoch();
    let total = (per_epoch * cfg.epochs) as u64;
    let mut opt = Adam::new(&params);
    let mut log = TrainLog::default();
    for epoch in 0..cfg.epochs {
        for _ in 0..per_epoch {
            let idx2 = t2_batcher.next_batch();
            let b2 = pick(&pairs, &idx2);
            let r2 = pick(&refs, &idx2);
            let b1 = if cfg.gamma < 1.0 {
                pick(&sft, &t1_batcher.next_batch())
            } else {
                Vec::new()
            };
            let mut grads = params.zeros_like();
            let out = loss::rac_accumulate(&params, &b1, &b2, &r2, cfg.gamma, cfg.beta, &mut grads)?;
            let step = opt.steps() + 1;
            let lr_t = cfg.schedule.lr_at(cfg.lr_dpo, step, total);
            opt.step(&mut params, &grads, lr_t)?;
            log.steps.push(StepLog {
                step,
                epoch,
                loss: out.loss,
                lr: lr_t,
                pref_acc: out.pref_acc,
            });
        }
        let stats = stats_with_refs(&params, &pairs, &refs, cfg.beta)?;
        log.close_epoch(epoch, Some(stats));
    }
    params.check_finite()?;
    Ok(Trained { params, log })
}

/// Mean negative log-likelihood per supervised token.
pub fn masked_nll(params: &LMParams, data: &[SequenceEncoding]) -> Result<f64> {
    let (mut nll, mut tokens) = (0.0, 0usize);
    for enc in data {
        nll -= score_masked(params, enc)?.log_prob;
        tokens += enc.target_rows().len();
    }
    if tokens == 0 {
        return Err(RacError::EmptyDataset("no supervised tokens".into()));
    }
    Ok(nll / tokens as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batcher_covers_each_epoch_once() {
        let mut b = EpochBatcher::new(10, 4, 7);
        assert_eq!(b.batches_per_epoch(), 3);
        for _ in 0..3 {
            let mut seen: Vec<usize> = (0..3).flat_map(|_| b.next_batch()).collect();
            seen.sort_unstable();
            assert_eq!(seen, (0..10).collect::<Vec<_>>());
        }
    }

    #[test]
    fn batcher_is_seeded() {
        let run = |s| {
            let mut b = EpochBatcher::new(20, 6, s);
            (0..8).map(|_| b.next_batch()).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
        assert_ne!(run(1), run(2));
    }

    #[test]
    fn config_checks() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            gamma: 1.5,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn early_stopping_keeps_the_best_dev_epoch() {
        let base = crate::lm::init_params(&crate::lm::LMConfig {
            vocab_size: 16,
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            context_len: 24,
            seed: 3,
        })
        .unwrap();
        let ex = |q: u32, p: u32, a: u32| ClarificationExample {
            query: vec![q],
            passages: vec![vec![p, p + 1]],
            question: vec![a, p],
        };
        let train: Vec<_> = (5..11).map(|i| ex(i, i, 14)).collect();
        let dev = vec![ex(11, 12, 15), ex(5, 13, 14)];
        let cfg = TrainConfig {
            epochs: 12,
            batch_size: 2,
            lr_sft: 3e-2,
            ..Default::default()
        };
        let run = train_sft_early_stopped(&base, &train, &dev, ModelRole::Grounded, &cfg).unwrap();
        assert_eq!(run.dev_nll.len(), 12);
        let min = run.dev_nll.iter().copied().fold(f64::INFINITY, f64::min);
        assert_eq!(run.dev_nll[run.best_epoch], min);
        assert!(run.dev_nll[..run.best_epoch].iter().all(|&x| x > min));
        let enc: Vec<_> = dev.iter().map(|e| e.encode(ModelRole::Grounded, 24).unwrap()).collect();
        assert_eq!(masked_nll(&run.best.params, &enc).unwrap(), min);
        assert_eq!(masked_nll(&run.last, &enc).unwrap(), run.dev_nll[11]);
        let plain = train_sft(&base, &train, ModelRole::Grounded, &cfg).unwrap();
        assert_eq!(plain.params, run.last);
    }
}
