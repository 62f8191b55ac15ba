//! Sequence layout: `[BOS] U_q [SEP] d_1 [SEP] ... d_N [SEP] C_q [EOS]`.
//! Passages appear in retrieval rank order. Query-only roles drop the passage
//! segments entirely, leaving `[BOS] U_q [SEP] C_q [EOS]`.

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::text::{special, TokenId};

/// Which conditioning a model instance consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelRole {
    BaseLm,
    Grounded,
    Ungrounded,
    Policy,
}

impl std::str::FromStr for ModelRole {
    type Err = RacError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base_lm" => Ok(Self::BaseLm),
            "grounded" => Ok(Self::Grounded),
            "ungrounded" => Ok(Self::Ungrounded),
            "policy" => Ok(Self::Policy),
            other => Err(RacError::config(format!("unknown model role `{other}`"))),
        }
    }
}

impl ModelRole {
    /// Grounded and policy models read the retrieved passages; the base and
    /// ungrounded models see the query alone.
    pub fn uses_passages(self) -> bool {
        matches!(self, ModelRole::Grounded | ModelRole::Policy)
    }
}

/// Token ids plus a mask selecting the supervised (question) positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceEncoding {
    pub ids: Vec<TokenId>,
    /// `loss_mask[i]` marks `ids[i]` as a prediction target.
    pub loss_mask: Vec<bool>,
}

impl SequenceEncoding {
    /// Context followed by target; only the target positions are masked in.
    pub fn new(context: &[TokenId], target: &[TokenId]) -> Self {
        let mut ids = Vec::with_capacity(context.len() + target.len());
        ids.extend_from_slice(context);
        ids.extend_from_slice(target);
        let mut loss_mask = vec![false; context.len()];
        loss_mask.resize(ids.len(), true);
        Self { ids, loss_mask }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Positions whose logits predict a masked target (`i - 1` for each
    /// masked `i`), paired with that target.
    pub fn target_rows(&self) -> Vec<(usize, TokenId)> {
        self.loss_mask
            .iter()
            .enumerate()
            .filter(|&(i, &m)| m && i > 0)
            .map(|(i, _)| (i - 1, self.ids[i]))
            .collect()
    }

    pub fn check_len(&self, context_len: usize) -> Result<()> {
        if self.ids.len() > context_len {
            return Err(RacError::SequenceTooLong {
                len: self.ids.len(),
                max: context_len,
            });
        }
        Ok(())
    }
}

/// Context prefix for a role. Passages are ignored by query-only roles.
pub fn context_ids(role: ModelRole, query: &[TokenId], passages: &[Vec<TokenId>]) -> Vec<TokenId> {
    let mut ids = Vec::with_capacity(2 + query.len() + passages.iter().map(|p| p.len() + 1).sum::<usize>());
    ids.push(special::BOS);
    ids.extend_from_slice(query);
    ids.push(special::SEP);
    if role.uses_passages() {
        for p in passages {
            ids.extend_from_slice(p);
            ids.push(special::SEP);
        }
    }
    ids
}

/// Checks the role contract on a built context: query-only roles carry
/// exactly one separator and therefore no passage segment.
pub fn check_role(role: ModelRole, context: &[TokenId]) -> Result<()> {
    let seps = context.iter().filter(|&&t| t == special::SEP).count();
    if seps == 0 || context.last() != Some(&special::SEP) {
        return Err(RacError::RoleContract("context must end with SEP".into()));
    }
    if !role.uses_passages() && seps != 1 {
        return Err(RacError::RoleContract(format!(
            "{role:?} context contains {} passage segment(s)",
            seps - 1
        )));
    }
    Ok(())
}

/// Full training encoding: context, question, EOS.
pub fn encode(
    role: ModelRole,
    query: &[TokenId],
    passages: &[Vec<TokenId>],
    question: &[TokenId],
    context_len: usize,
) -> Result<SequenceEncoding> {
    let context = context_ids(role, query, passages);
    check_role(role, &context)?;
    let enc = SequenceEncoding::new(&context, &with_eos(question));
    enc.check_len(context_len)?;
    Ok(enc)
}

pub fn with_eos(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut t = tokens.to_vec();
    t.push(special::EOS);
    t
}
