//! Template-generated topic corpus with known facets.
//!
//! Each topic is named by two pseudo-words and owns `facets_per_topic`
//! facets drawn from a shared facet vocabulary. Every facet gets
//! `docs_per_facet` short documents that mention the topic and the facet.
//! The ambiguous query is the topic name; every unordered facet pair yields
//! one gold clarification naming both facets.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};
use crate::seed::{rng_from_seed, Rng};
use crate::text::{Document, QuestionTemplates, Stopwords};

const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];

/// Openers used for gold clarifications; all are entries of the template asset.
const OPENERS: &[&str] = &[
    "are you looking for",
    "are you interested in",
    "do you want to know about",
    "would you like to know about",
];

/// Sentence frames for documents: `{t}` topic name, `{f}` facet, `{x}` filler.
const FRAMES: &[&str] = &[
    "the {t} {f} is {x} .",
    "{t} has a {f} with {x} .",
    "about the {f} of {t} : {x} .",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpusSpec {
    pub num_topics: usize,
    pub facets_per_topic: usize,
    pub docs_per_facet: usize,
    /// Size of the shared facet vocabulary (raised to `facets_per_topic` if smaller).
    pub facet_pool: usize,
    /// Filler words per document.
    pub filler_words: usize,
    pub seed: u64,
}

impl Default for SyntheticCorpusSpec {
    fn default() -> Self {
        Self {
            num_topics: 40,
            facets_per_topic: 6,
            docs_per_facet: 2,
            facet_pool: 24,
            filler_words: 2,
            seed: 0,
        }
    }
}

impl SyntheticCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_topics == 0 {
            return Err(RacError::config("corpus needs at least one topic"));
        }
        if self.facets_per_topic < 2 {
            return Err(RacError::config("every query needs at least two facets"));
        }
        if self.docs_per_facet == 0 {
            return Err(RacError::config("docs_per_facet must be at least 1"));
        }
        Ok(())
    }
}

/// One ambiguous query with a clarification over two of its facets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldPair {
    pub record_id: String,
    pub topic: usize,
    pub query: String,
    pub question: String,
    pub facets: [String; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticCorpus {
    pub documents: Vec<Document>,
    pub gold: Vec<GoldPair>,
}

/// Distinct pronounceable words that clash with no stopword or template word.
fn pseudo_words(
    n: usize,
    syllables: usize,
    taken: &mut BTreeSet<String>,
    stop: &Stopwords,
    rng: &mut Rng,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..syllables)
            .map(|_| format!("{}{}", ONSETS.choose(rng).unwrap(), VOWELS.choose(rng).unwrap()))
            .collect();
        if !stop.contains(&w) && taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

pub fn make_synthetic_corpus(spec: &SyntheticCorpusSpec) -> Result<SyntheticCorpus> {
    spec.validate()?;
    let mut rng = rng_from_seed(spec.seed);
    let stop = Stopwords::default();
    let templates = QuestionTemplates::default();
    let mut taken: BTreeSet<String> = templates.vocabulary().into_iter().map(str::to_string).collect();
    taken.extend(FRAMES.iter().flat_map(|f| f.split_whitespace().map(str::to_string)));

    let pool_size = spec.facet_pool.max(spec.facets_per_topic);
    let facet_pool = pseudo_words(pool_size, 2, &mut taken, &stop, &mut rng);
    let fillers = pseudo_words(16, 2, &mut taken, &stop, &mut rng);
    let topic_words = pseudo_words(2 * spec.num_topics, 3, &mut taken, &stop, &mut rng);

    let mut documents = Vec::new();
    let mut gold = Vec::new();
    for t in 0..spec.num_topics {
        let name = format!("{} {}", topic_words[2 * t], topic_words[2 * t + 1]);
        let mut pool: Vec<&String> = facet_pool.iter().collect();
        pool.shuffle(&mut rng);
        let mut facets: Vec<&String> = pool[..spec.facets_per_topic].to_vec();
        facets.sort();
        for (fi, facet) in facets.iter().enumerate() {
            for d in 0..spec.docs_per_facet {
                let frame = FRAMES.choose(&mut rng).unwrap();
                let filler: Vec<&str> = (0..spec.filler_words)
                    .map(|_| fillers.choose(&mut rng).unwrap().as_str())
                    .collect();
                let text = frame
                    .replace("{t}", &name)
                    .replace("{f}", facet)
                    .replace("{x}", &filler.join(" "));
                documents.push(Document {
                    doc_id: format!("t{t:03}-f{fi}-d{d}"),
                    text,
                });
            }
        }
        for i in 0..facets.len() {
            for j in i + 1..facets.len() {
                let (a, b) = if rng.random::<bool>() {
                    (facets[i], facets[j])
                } else {
                    (facets[j], facets[i])
                };
                let opener = OPENERS[t % OPENERS.len()];
                gold.push(GoldPair {
                    record_id: format!("t{t:03}-p{i}-{j}"),
                    topic: t,
                    query: name.clone(),
                    question: format!("{opener} {a} , or {b} ?"),
                    facets: [a.clone(), b.clone()],
                });
            }
        }
    }
    Ok(SyntheticCorpus { documents, gold })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_spec() {
        let spec = SyntheticCorpusSpec {
            num_topics: 1,
            facets_per_topic: 2,
            docs_per_facet: 1,
            ..Default::default()
        };
        let c = make_synthetic_corpus(&spec).unwrap();
        assert_eq!(c.documents.len(), 2);
        assert_eq!(c.gold.len(), 1);
        let q = &c.gold[0].question;
        assert!(q.contains(&c.gold[0].facets[0]) && q.contains(&c.gold[0].facets[1]));
    }

    #[test]
    fn degenerate_specs_rejected() {
        let zero = SyntheticCorpusSpec {
            num_topics: 0,
            ..Default::default()
        };
        assert!(make_synthetic_corpus(&zero).is_err());
        let one_facet = SyntheticCorpusSpec {
            facets_per_topic: 1,
            ..Default::default()
        };
        assert!(make_synthetic_corpus(&one_facet).is_err());
    }

    #[test]
    fn seeded() {
        let spec = SyntheticCorpusSpec::default();
        assert_eq!(make_synthetic_corpus(&spec).unwrap(), make_synthetic_corpus(&spec).unwrap());
        let other = SyntheticCorpusSpec { seed: 1, ..spec };
        assert_ne!(make_synthetic_corpus(&other).unwrap(), make_synthetic_corpus(&spec).unwrap());
    }
}
