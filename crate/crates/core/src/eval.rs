//! Faithfulness and reference metrics over content units, plus BLEU and
//! ROUGE-L.
//!
//! Grounding is measured on stopword-filtered 1-3-grams: `R_in` is the share
//! of the candidate's units found in the passages, `R_ref` the share of the
//! reference's units the candidate covers.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::text::{
    content_units, content_units_of_segments, detokenize, extract_ngrams, tokenize, ContentUnit,
    QuestionTemplates, Stopwords,
};

/// Both recall components and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParentScore {
    pub r_in: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ref: Option<f64>,
    /// `sqrt(r_in * r_ref)`, or `r_in` without a usable reference.
    pub score: f64,
}

fn overlap(a: &BTreeSet<ContentUnit>, b: &BTreeSet<ContentUnit>) -> usize {
    a.intersection(b).count()
}

pub fn parent_components<S: AsRef<str>>(
    candidate: &[S],
    passages: &[Vec<S>],
    reference: Option<&[S]>,
    stopwords: &Stopwords,
) -> ParentScore {
    let cand = content_units(candidate, stopwords);
    let r_ref_of = |cand: &BTreeSet<ContentUnit>| {
        reference.and_then(|r| {
            let units = content_units(r, stopwords);
            (!units.is_empty()).then(|| overlap(cand, &units) as f64 / units.len() as f64)
        })
    };
    if cand.is_empty() {
        return ParentScore {
            r_in: 0.0,
            r_ref: r_ref_of(&cand),
            score: 0.0,
        };
    }
    let input = content_units_of_segments(passages, stopwords);
    let r_in = overlap(&cand, &input) as f64 / cand.len() as f64;
    let r_ref = r_ref_of(&cand);
    let score = match r_ref {
        Some(r) => (r_in * r).sqrt(),
        None => r_in,
    };
    ParentScore { r_in, r_ref, score }
}

pub fn parent_recall<S: AsRef<str>>(
    candidate: &[S],
    passages: &[Vec<S>],
    reference: Option<&[S]>,
    stopwords: &Stopwords,
) -> f64 {
    parent_components(candidate, passages, reference, stopwords).score
}

/// Share of the candidate's units absent from the passages; 0 for a
/// candidate without content units.
pub fn hallucination_rate<S: AsRef<str>>(candidate: &[S], passages: &[Vec<S>], stopwords: &Stopwords) -> f64 {
    let cand = content_units(candidate, stopwords);
    if cand.is_empty() {
        return 0.0;
    }
    let input = content_units_of_segments(passages, stopwords);
    (cand.len() - overlap(&cand, &input)) as f64 / cand.len() as f64
}

/// Turns a clarifying question into a bare statement of its content: leading
/// question templates, question marks, tokens shared with the query and
/// stopwords are removed. Applied to a fixpoint, so it is idempotent.
pub fn question_to_declarative<S: AsRef<str>>(
    candidate: &str,
    query: &[S],
    templates: &QuestionTemplates,
    stopwords: &Stopwords,
) -> String {
    let query: Vec<&str> = query.iter().map(AsRef::as_ref).collect();
    let mut tokens = tokenize(candidate);
    loop {
        let next: Vec<String> = templates
            .strip(&tokens)
            .iter()
            .filter(|t| *t != "?" && !query.contains(&t.as_str()) && stopwords.is_content(t))
            .cloned()
            .collect();
        if next == tokens {
            return detokenize(&tokens);
        }
        tokens = next;
    }
}

/// Premise/hypothesis scorer in `[0, 1]`.
pub trait EntailmentScorer {
    fn name(&self) -> &str;
    fn score(&self, premise: &str, hypothesis: &str) -> f64;
}

/// Unit coverage of the hypothesis by the premise. Each premise line is a
/// separate segment, so grams never span two passages.
#[derive(Debug, Clone, Default)]
pub struct LexicalScorer {
    pub stopwords: Stopwords,
}

impl EntailmentScorer for LexicalScorer {
    fn name(&self) -> &str {
        "lexical"
    }

    fn score(&self, premise: &str, hypothesis: &str) -> f64 {
        let hyp = content_units(&tokenize(hypothesis), &self.stopwords);
        if hyp.is_empty() {
            return 0.0;
        }
        let segments: Vec<Vec<String>> = premise.lines().map(tokenize).collect();
        let prem = content_units_of_segments(&segments, &self.stopwords);
        overlap(&hyp, &prem) as f64 / hyp.len() as f64
    }
}

/// Passages joined one per line, the premise layout [`LexicalScorer`] expects.
pub fn premise_text<S: AsRef<str>>(passages: &[Vec<S>]) -> String {
    passages.iter().map(|p| detokenize(p)).collect::<Vec<_>>().join("\n")
}

pub fn entailment_proxy<S: AsRef<str>>(
    scorer: &dyn EntailmentScorer,
    passages: &[Vec<S>],
    hypothesis: &str,
) -> f64 {
    if hypothesis.trim().is_empty() {
        return 0.0;
    }
    scorer.score(&premise_text(passages), hypothesis).clamp(0.0, 1.0)
}

/// Sentence BLEU up to 4-grams with uniform weights and a brevity penalty.
/// Orders 2-4 use add-one smoothing; the unigram precision does not, so a
/// candidate without any shared word scores 0.
pub fn bleu<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let cand: Vec<&str> = candidate.iter().map(AsRef::as_ref).collect();
    let refr: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    if cand.is_empty() || refr.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4 {
        let c = extract_ngrams(&cand, n);
        let r = extract_ngrams(&refr, n);
        let total: usize = c.values().sum();
        let matched: usize = c.iter().map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0))).sum();
        let p = if n == 1 {
            matched as f64 / total as f64
        } else {
            (matched as f64 + 1.0) / (total as f64 + 1.0)
        };
        if p == 0.0 {
            return 0.0;
        }
        log_sum += p.ln() / 4.0;
    }
    let (c, r) = (cand.len() as f64, refr.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

/// Longest common subsequence length, `O(|a| * |b|)`.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS-based F1.
pub fn rouge_l<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    let l = lcs_len(candidate, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / candidate.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// One generated question with the evidence it was conditioned on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub query: Vec<String>,
    pub passages: Vec<Vec<String>>,
    pub candidate: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordMetrics {
    pub parent_recall: f64,
    pub r_in: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ref: Option<f64>,
    pub entailment: f64,
    pub hallucination: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bleu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rouge_l: Option<f64>,
    pub declarative: String,
}

/// Corpus means. `grounding_precision` is the mean `R_in`; BLEU and ROUGE-L
/// average over records that carry a reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub records: usize,
    pub scorer: String,
    pub parent_recall: f64,
    pub grounding_precision: f64,
    pub entailment: f64,
    pub hallucination: f64,
    pub bleu: Option<f64>,
    pub rouge_l: Option<f64>,
}

/// Everything needed to score records: unit extraction plus the scorer.
pub struct Evaluator<'a> {
    pub stopwords: &'a Stopwords,
    pub templates: &'a QuestionTemplates,
    pub scorer: &'a dyn EntailmentScorer,
}

impl Evaluator<'_> {
    pub fn score_record(&self, r: &EvalRecord) -> RecordMetrics {
        let parent = parent_components(&r.candidate, &r.passages, r.reference.as_deref(), self.stopwords);
        let declarative =
            question_to_declarative(&detokenize(&r.candidate), &r.query, self.templates, self.stopwords);
        RecordMetrics {
            parent_recall: parent.score,
            r_in: parent.r_in,
            r_ref: parent.r_ref,
            entailment: entailment_proxy(self.scorer, &r.passages, &declarative),
            hallucination: hallucination_rate(&r.candidate, &r.passages, self.stopwords),
            bleu: r.reference.as_ref().map(|rf| bleu(&r.candidate, rf)),
            rouge_l: r.reference.as_ref().map(|rf| rouge_l(&r.candidate, rf)),
            declarative,
        }
    }

    pub fn evaluate_run(&self, records: &[EvalRecord]) -> Result<(EvalReport, Vec<RecordMetrics>)> {
        if records.is_empty() {
            return Err(RacError::EmptyDataset("no records to evaluate".into()));
        }
        let per: Vec<RecordMetrics> = records.iter().map(|r| self.score_record(r)).collect();
        let mean = |f: &dyn Fn(&RecordMetrics) -> f64| per.iter().map(f).sum::<f64>() / per.len() as f64;
        let mean_opt = |f: &dyn Fn(&RecordMetrics) -> Option<f64>| {
            let vals: Vec<f64> = per.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let report = EvalReport {
            records: per.len(),
            scorer: self.scorer.name().to_string(),
            parent_recall: mean(&|m| m.parent_recall),
            grounding_precision: mean(&|m| m.r_in),
            entailment: mean(&|m| m.entailment),
            hallucination: mean(&|m| m.hallucination),
            bleu: mean_opt(&|m| m.bleu),
            rouge_l: mean_opt(&|m| m.rouge_l),
        };
        Ok((report, per))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn declarative_examples() {
        let (q, sw) = (QuestionTemplates::default(), Stopwords::default());
        let query = t("family guy");
        assert_eq!(
            question_to_declarative("are you looking for season 15?", &query, &q, &sw),
            "season 15"
        );
        assert_eq!(question_to_declarative("which family guy?", &query, &q, &sw), "");
        let once = question_to_declarative("do you want to know about which guy lyrics?", &query, &q, &sw);
        assert_eq!(once, "lyrics");
        assert_eq!(question_to_declarative(&once, &query, &q, &sw), once);
    }

    #[test]
    fn bleu_hand_value() {
        let got = bleu(&t("a b c"), &t("a b d"));
        assert!((got - (2.0f64 / 9.0).powf(0.25)).abs() < 1e-12);
        assert_eq!(bleu(&t("x y"), &t("a b")), 0.0);
        assert!((bleu(&t("p q r s t"), &t("p q r s t")) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rouge_examples() {
        assert_eq!(rouge_l(&t("a b c"), &t("a b c")), 1.0);
        assert_eq!(rouge_l(&t("a b"), &t("c d")), 0.0);
        assert_eq!(lcs_len(&t("a x b y c"), &t("a b c")), 3);
    }

    #[test]
    fn parent_edges() {
        let sw = Stopwords::default();
        let d = vec![t("angular cheilitis treatment")];
        let full = parent_recall(&t("angular cheilitis"), &d, Some(&t("angular cheilitis")[..]), &sw);
        assert_eq!(full, 1.0);
        assert_eq!(parent_recall(&t("zebra"), &d, Some(&t("angular")[..]), &sw), 0.0);
        assert_eq!(parent_recall(&t("the of"), &d, None, &sw), 0.0);
        assert_eq!(hallucination_rate(&t("the of"), &d, &sw), 0.0);
        assert_eq!(hallucination_rate(&t("zebra"), &d, &sw), 1.0);
    }

    #[test]
    fn lexical_entailment() {
        let s = LexicalScorer::default();
        let d = vec![t("angular cheilitis"), t("treatment options")];
        assert_eq!(entailment_proxy(&s, &d, "cheilitis treatment"), 2.0 / 3.0);
        assert_eq!(entailment_proxy(&s, &d, ""), 0.0);
        assert_eq!(entailment_proxy(&s, &d, "angular cheilitis"), 1.0);
    }
}
