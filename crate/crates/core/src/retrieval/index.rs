use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::text::Passage;

/// One entry of a postings list: passage position and term frequency.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

/// Term -> postings map over a passage collection.
///
/// Passages are stored sorted by `passage_id`, so the index content does not
/// depend on the order passages were supplied in. Postings lists are sorted by
/// passage position.
#[derive(Debug, Clone, PartialEq)]
pub struct InvertedIndex {
    pub(super) passages: Vec<Passage>,
    pub(super) positions: HashMap<String, usize>,
    pub(super) postings: BTreeMap<String, Vec<Posting>>,
    pub(super) avg_doc_len: f64,
}

impl InvertedIndex {
    pub fn build(mut passages: Vec<Passage>) -> Result<Self> {
        passages.sort_by(|a, b| a.passage_id.cmp(&b.passage_id));
        if let Some(w) = passages.windows(2).find(|w| w[0].passage_id == w[1].passage_id) {
            return Err(RacError::DuplicatePassage(w[0].passage_id.clone()));
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for (doc, p) in passages.iter().enumerate() {
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for t in &p.tokens {
                *tf.entry(t.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term.to_string()).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
        }
        Ok(Self::from_parts(passages, postings))
    }

    pub(super) fn from_parts(
        passages: Vec<Passage>,
        postings: BTreeMap<String, Vec<Posting>>,
    ) -> Self {
        let total: usize = passages.iter().map(|p| p.tokens.len()).sum();
        let avg_doc_len = if passages.is_empty() {
            0.0
        } else {
            total as f64 / passages.len() as f64
        };
        let positions = passages
            .iter()
            .enumerate()
            .map(|(i, p)| (p.passage_id.clone(), i))
            .collect();
        Self {
            passages,
            positions,
            postings,
            avg_doc_len,
        }
    }

    pub fn num_docs(&self) -> usize {
        self.passages.len()
    }

    pub fn avg_doc_len(&self) -> f64 {
        self.avg_doc_len
    }

    pub fn doc_len(&self, doc: usize) -> usize {
        self.passages[doc].tokens.len()
    }

    pub fn df(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    pub fn postings(&self, term: &str) -> Option<&[Posting]> {
        self.postings.get(term).map(Vec::as_slice)
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn position(&self, passage_id: &str) -> Option<usize> {
        self.positions.get(passage_id).copied()
    }

    pub fn passage(&self, doc: usize) -> &Passage {
        &self.passages[doc]
    }

    pub fn get(&self, passage_id: &str) -> Option<&Passage> {
        self.position(passage_id).map(|i| &self.passages[i])
    }

    /// Resolves a list of ids, failing on the first unknown one.
    pub fn resolve<S: AsRef<str>>(&self, ids: &[S]) -> Result<Vec<&Passage>> {
        ids.iter()
            .map(|id| {
                self.get(id.as_ref())
                    .ok_or_else(|| RacError::UnknownPassage(id.as_ref().to_string()))
            })
            .collect()
    }

    pub fn passages(&self) -> &[Passage] {
        &self.passages
    }
}
