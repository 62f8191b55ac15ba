//! Tokenization, vocabulary, passage chunking and content-unit extraction.
//!
//! Everything downstream (retrieval, the language model, metrics) sees text
//! through [`tokenize`]: lowercase, split on whitespace, and every
//! non-alphanumeric character becomes a token of its own.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::hash::Hash;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{RacError, Result};

/// Default passage length in tokens.
pub const DEFAULT_CHUNK_SIZE: usize = 250;

const STOPWORDS_ASSET: &str = include_str!("../assets/stopwords.txt");
const TEMPLATES_ASSET: &str = include_str!("../assets/question_templates.txt");

/// Splits `text` into normalized surface tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    tokenize_spans(text).into_iter().map(|(t, _)| t).collect()
}

/// Like [`tokenize`] but also returns the byte range of each token in `text`.
pub fn tokenize_spans(text: &str) -> Vec<(String, Range<usize>)> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    for (pos, ch) in text.char_indices() {
        if ch.is_whitespace() {
            flush(&mut current, start..pos, &mut out);
            continue;
        }
        for lower in ch.to_lowercase() {
            if lower.is_alphanumeric() {
                if current.is_empty() {
                    start = pos;
                }
                current.push(lower);
            } else {
                flush(&mut current, start..pos, &mut out);
                out.push((lower.to_string(), pos..pos + ch.len_utf8()));
            }
        }
    }
    flush(&mut current, start..text.len(), &mut out);
    out
}

fn flush(current: &mut String, span: Range<usize>, out: &mut Vec<(String, Range<usize>)>) {
    if !current.is_empty() {
        out.push((std::mem::take(current), span));
    }
}

/// Joins tokens with single spaces; `tokenize(detokenize(t)) == t` for tokenizer output.
pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(t.as_ref());
    }
    out
}

pub type TokenId = u32;

/// A vocabulary entry resolved for a surface form.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub id: TokenId,
    pub surface: String,
}

/// Reserved token ids, fixed at positions 0 to 4.
pub mod special {
    use super::TokenId;
    pub const PAD: TokenId = 0;
    pub const BOS: TokenId = 1;
    pub const EOS: TokenId = 2;
    pub const UNK: TokenId = 3;
    pub const SEP: TokenId = 4;
    pub const SURFACES: [&str; 5] = ["<pad>", "<bos>", "<eos>", "<unk>", "<sep>"];
}

/// Bidirectional surface/id map with reserved ids for the framing tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    entries: Vec<String>,
    lookup: HashMap<String, TokenId>,
}

impl Vocab {
    /// Builds a vocabulary from tokenized text; every surface seen at least once
    /// gets an id, ordered lexicographically after the reserved block.
    pub fn build<I, S>(sequences: I) -> Self
    where
        I: IntoIterator,
        I::Item: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut seen = BTreeSet::new();
        for seq in sequences {
            for tok in seq {
                let tok = tok.as_ref();
                if !special::SURFACES.contains(&tok) {
                    seen.insert(tok.to_string());
                }
            }
        }
        let entries = special::SURFACES
            .iter()
            .map(|s| s.to_string())
            .chain(seen)
            .collect();
        Self::from_entries(entries).expect("built entries are unique")
    }

    fn from_entries(entries: Vec<String>) -> Result<Self> {
        if entries.len() < special::SURFACES.len()
            || entries.iter().zip(special::SURFACES).any(|(e, s)| e != s)
        {
            return Err(RacError::CorruptHeader("vocabulary missing reserved entries".into()));
        }
        let mut lookup = HashMap::with_capacity(entries.len());
        for (i, e) in entries.iter().enumerate() {
            if e.is_empty() || lookup.insert(e.clone(), i as TokenId).is_some() {
                return Err(RacError::CorruptHeader(format!("bad vocabulary entry `{e}`")));
            }
        }
        Ok(Self { entries, lookup })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, surface: &str) -> TokenId {
        self.lookup.get(surface).copied().unwrap_or(special::UNK)
    }

    pub fn token(&self, surface: &str) -> Token {
        let id = self.id(surface);
        Token {
            id,
            surface: self.entries[id as usize].clone(),
        }
    }

    pub fn surface(&self, id: TokenId) -> &str {
        self.entries
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(special::SURFACES[special::UNK as usize])
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    /// Maps ids back to surfaces, dropping the framing tokens.
    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .filter(|&&id| id > special::SEP)
            .map(|&id| self.surface(id).to_string())
            .collect()
    }

    pub fn entries(&self) -> &[String] {
        &self.entries
    }

    /// Writes one surface per line.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut body = self.entries.join("\n");
        body.push('\n');
        std::fs::write(path, body)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        Self::from_entries(body.lines().map(str::to_string).collect())
    }
}

/// A source document, one JSON Lines record of the corpus file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
}

/// A contiguous chunk of a document used as grounding evidence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Passage {
    pub doc_id: String,
    pub passage_id: String,
    pub tokens: Vec<String>,
    pub text: String,
}

/// Splits a sequence into consecutive non-overlapping windows of `chunk_size`
/// items; the last window may be shorter.
pub fn chunk_tokens<T>(tokens: &[T], chunk_size: usize) -> Result<Vec<&[T]>> {
    if chunk_size == 0 {
        return Err(RacError::config("chunk_size must be at least 1"));
    }
    Ok(tokens.chunks(chunk_size).collect())
}

/// Chunks a document into passages with ids `<doc_id>#<n>`. The passage text
/// is the original span covering its tokens.
pub fn chunk_passages(doc: &Document, chunk_size: usize) -> Result<Vec<Passage>> {
    let spans = tokenize_spans(&doc.text);
    Ok(chunk_tokens(&spans, chunk_size)?
        .into_iter()
        .enumerate()
        .map(|(n, chunk)| {
            let start = chunk.first().map(|(_, r)| r.start).unwrap_or(0);
            let end = chunk.last().map(|(_, r)| r.end).unwrap_or(0);
            Passage {
                doc_id: doc.doc_id.clone(),
                passage_id: format!("{}#{n}", doc.doc_id),
                tokens: chunk.iter().map(|(t, _)| t.clone()).collect(),
                text: doc.text[start..end].to_string(),
            }
        })
        .collect())
}

/// Chunks every document, in input order.
pub fn chunk_corpus(docs: &[Document], chunk_size: usize) -> Result<Vec<Passage>> {
    let mut out = Vec::new();
    for d in docs {
        out.extend(chunk_passages(d, chunk_size)?);
    }
    Ok(out)
}

/// All contiguous windows of length `n`, with multiplicity.
pub fn extract_ngrams<S: Eq + Hash>(tokens: &[S], n: usize) -> HashMap<&[S], usize> {
    let mut grams = HashMap::new();
    if n == 0 || tokens.len() < n {
        return grams;
    }
    for w in tokens.windows(n) {
        *grams.entry(w).or_insert(0) += 1;
    }
    grams
}

/// Function words excluded from content units.
#[derive(Debug, Clone)]
pub struct Stopwords(HashSet<String>);

impl Default for Stopwords {
    fn default() -> Self {
        Self::parse(STOPWORDS_ASSET)
    }
}

impl Stopwords {
    /// One token per line; blank lines ignored.
    pub fn parse(body: &str) -> Self {
        Self(
            body.lines()
                .map(|l| l.trim().to_lowercase())
                .filter(|l| !l.is_empty())
                .collect(),
        )
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::parse(&std::fs::read_to_string(path)?))
    }

    pub fn contains(&self, token: &str) -> bool {
        self.0.contains(token)
    }

    /// True for tokens that can be part of a content unit: not a stopword and
    /// containing at least one alphanumeric character.
    pub fn is_content(&self, token: &str) -> bool {
        !self.contains(token) && token.chars().any(char::is_alphanumeric)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// A stopword-free gram of one to three tokens.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ContentUnit(pub Vec<String>);

/// Stopword-filtered 1-, 2- and 3-grams, built over the sequence that remains
/// after stopwords are removed. Punctuation tokens are dropped too but act as
/// boundaries: no gram spans a comma, question mark or full stop.
pub fn content_units<S: AsRef<str>>(tokens: &[S], stopwords: &Stopwords) -> BTreeSet<ContentUnit> {
    let mut units = BTreeSet::new();
    for phrase in tokens.split(|t| is_punctuation(t.as_ref())) {
        let kept: Vec<&str> = phrase
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| stopwords.is_content(t))
            .collect();
        for n in 1..=3 {
            for w in kept.windows(n) {
                units.insert(ContentUnit(w.iter().map(|s| s.to_string()).collect()));
            }
        }
    }
    units
}

/// A token with no alphanumeric character.
pub fn is_punctuation(token: &str) -> bool {
    !token.chars().any(char::is_alphanumeric)
}

/// Union of content units over several segments; grams never cross a segment
/// boundary.
pub fn content_units_of_segments<S: AsRef<str>>(
    segments: &[Vec<S>],
    stopwords: &Stopwords,
) -> BTreeSet<ContentUnit> {
    segments
        .iter()
        .flat_map(|seg| content_units(seg, stopwords))
        .collect()
}

/// Ordered list of interrogative openers ("are you looking for", "which", ...).
#[derive(Debug, Clone)]
pub struct QuestionTemplates {
    /// Tokenized templates sorted longest first.
    patterns: Vec<Vec<String>>,
}

impl Default for QuestionTemplates {
    fn default() -> Self {
        Self::parse(TEMPLATES_ASSET)
    }
}

impl QuestionTemplates {
    pub fn parse(body: &str) -> Self {
        let mut patterns: Vec<Vec<String>> = body
            .lines()
            .map(tokenize)
            .filter(|p| !p.is_empty())
            .collect();
        // Longest match first; ties keep file order.
        patterns.sort_by_key(|p| std::cmp::Reverse(p.len()));
        Self { patterns }
    }

    pub fn patterns(&self) -> &[Vec<String>] {
        &self.patterns
    }

    /// Length of the longest template that prefixes `tokens`, if any.
    pub fn match_prefix<S: AsRef<str>>(&self, tokens: &[S]) -> Option<usize> {
        self.patterns
            .iter()
            .find(|p| {
                p.len() <= tokens.len() && p.iter().zip(tokens).all(|(a, b)| a == b.as_ref())
            })
            .map(Vec::len)
    }

    /// Repeatedly strips leading templates.
    pub fn strip<'a, S: AsRef<str>>(&self, mut tokens: &'a [S]) -> &'a [S] {
        while let Some(n) = self.match_prefix(tokens) {
            tokens = &tokens[n..];
        }
        tokens
    }

    /// Every token that occurs in some template.
    pub fn vocabulary(&self) -> HashSet<&str> {
        self.patterns
            .iter()
            .flat_map(|p| p.iter().map(String::as_str))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &[&str]) -> Vec<String> {
        s.iter().map(|t| t.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("").is_empty());
        assert_eq!(
            tokenize("Family Guy season 15?"),
            toks(&["family", "guy", "season", "15", "?"])
        );
        assert_eq!(tokenize("don't  stop,now"), toks(&["don", "'", "t", "stop", ",", "now"]));
    }

    #[test]
    fn spans_cover_original_text() {
        let text = "  Angular Cheilitis: causes!";
        let spans = tokenize_spans(text);
        let surfaces: Vec<&str> = spans.iter().map(|(_, r)| &text[r.clone()]).collect();
        assert_eq!(surfaces, ["Angular", "Cheilitis", ":", "causes", "!"]);
    }

    #[test]
    fn vocab_reserved_ids_and_roundtrip() {
        let v = Vocab::build([tokenize("b a c a")]);
        assert_eq!(v.len(), 8);
        for (i, s) in special::SURFACES.iter().enumerate() {
            assert_eq!(v.id(s), i as TokenId);
        }
        for id in 0..v.len() as TokenId {
            assert_eq!(v.id(v.surface(id)), id);
        }
        assert_eq!(v.id("zzz"), special::UNK);
        assert_eq!(v.token("a").surface, "a");
    }

    #[test]
    fn vocab_save_load() {
        let dir = tempfile::tempdir().unwrap();
        let v = Vocab::build([tokenize("x y z ?")]);
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        assert_eq!(Vocab::load(&p).unwrap(), v);
        std::fs::write(&p, "a\nb\n").unwrap();
        assert!(Vocab::load(&p).is_err());
    }

    #[test]
    fn chunk_lengths() {
        let lens = |n: usize, s: usize| -> Vec<usize> {
            let v: Vec<usize> = (0..n).collect();
            chunk_tokens(&v, s).unwrap().iter().map(|c| c.len()).collect()
        };
        assert_eq!(lens(500, 250), vec![250, 250]);
        assert_eq!(lens(10, 250), vec![10]);
        // 613 = 2 * 250 + 113
        assert_eq!(lens(613, 250), vec![250, 250, 113]);
        assert!(chunk_tokens(&[1], 0).is_err());
    }

    #[test]
    fn chunk_passages_ids_and_text() {
        let doc = Document {
            doc_id: "d1".into(),
            text: "One two, three four five".into(),
        };
        let ps = chunk_passages(&doc, 3).unwrap();
        assert_eq!(ps.len(), 2);
        assert_eq!(ps[0].passage_id, "d1#0");
        assert_eq!(ps[0].text, "One two,");
        assert_eq!(ps[1].text, "three four five");
        assert_eq!(ps[1].tokens, toks(&["three", "four", "five"]));
    }

    #[test]
    fn ngram_examples() {
        let t = toks(&["a", "b", "a"]);
        let uni = extract_ngrams(&t, 1);
        assert_eq!(uni.len(), 2);
        assert_eq!(uni[&t[0..1]], 2);
        let bi = extract_ngrams(&t, 2);
        assert_eq!(bi.len(), 2);
        assert!(bi.values().all(|&c| c == 1));
        let seven: Vec<u8> = (0..7).collect();
        assert!(extract_ngrams(&seven, 9).is_empty());
    }

    #[test]
    fn content_unit_examples() {
        let sw = Stopwords::parse("the\n");
        let units = content_units(&toks(&["the", "angular", "cheilitis"]), &sw);
        let expected: BTreeSet<ContentUnit> = [
            vec!["angular"],
            vec!["cheilitis"],
            vec!["angular", "cheilitis"],
        ]
        .into_iter()
        .map(|g| ContentUnit(g.into_iter().map(String::from).collect()))
        .collect();
        assert_eq!(units, expected);
        assert!(content_units(&toks(&["the", "the"]), &sw).is_empty());
        assert!(content_units(&toks(&["?", ","]), &sw).is_empty());
        let split = content_units(&toks(&["red", ",", "or", "blue", "?"]), &Stopwords::default());
        assert_eq!(split.len(), 2);
    }

    #[test]
    fn default_assets_load() {
        let sw = Stopwords::default();
        assert!(sw.len() > 100);
        assert!(sw.contains("the") && sw.contains("looking"));
        let qt = QuestionTemplates::default();
        assert_eq!(qt.patterns()[0].len(), 6);
        let q = toks(&["are", "you", "looking", "for", "which", "season"]);
        assert_eq!(qt.match_prefix(&q), Some(4));
        assert_eq!(qt.strip(&q), &q[5..]);
    }
}
