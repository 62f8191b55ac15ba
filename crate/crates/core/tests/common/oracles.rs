//! Brute-force reference implementations and random case generators.

use rac_core::retrieval::InvertedIndex;
use rac_core::text::{Passage, Stopwords};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn strings(words: &[&str]) -> Vec<String> {
    words.iter().map(|s| s.to_string()).collect()
}

const WORDS: &[&str] = &[
    "solar", "panel", "wind", "turbine", "coast", "winter", "road", "battery", "grid", "roof", "inverter",
    "storage", "price", "season", "15", "the", "of", "a", "or", "is", "in", "which", "you", ",", "?", ".",
];

/// A random token sequence over a small pool mixing content words, stopwords
/// and punctuation so that overlaps are frequent.
pub fn random_tokens(r: &mut impl Rng, min: usize, max: usize) -> Vec<String> {
    let n = r.random_range(min..=max);
    (0..n).map(|_| WORDS[r.random_range(0..WORDS.len())].to_string()).collect()
}

/// `n` passages with 1-40 tokens drawn from a skewed 80-term vocabulary.
pub fn random_passages(r: &mut impl Rng, n: usize) -> Vec<Passage> {
    (0..n)
        .map(|i| {
            let len = r.random_range(1..=40);
            let tokens: Vec<String> = (0..len)
                .map(|_| {
                    let u: f64 = r.random();
                    format!("w{}", (u * u * 80.0) as usize)
                })
                .collect();
            Passage {
                doc_id: format!("d{:03}", i / 3),
                passage_id: format!("d{:03}#{}", i / 3, i % 3),
                text: tokens.join(" "),
                tokens,
            }
        })
        .collect()
}

/// Full-scan BM25 ranking straight from the passage list.
pub fn bm25_brute(passages: &[Passage], query: &[String], k: usize, k1: f64, b: f64) -> Vec<(String, f64)> {
    let n = passages.len() as f64;
    let avgdl = passages.iter().map(|p| p.tokens.len()).sum::<usize>() as f64 / n;
    let mut terms: Vec<&String> = Vec::new();
    for t in query {
        if !terms.contains(&t) {
            terms.push(t);
        }
    }
    let mut scored: Vec<(String, f64)> = passages
        .iter()
        .map(|p| {
            let dl = p.tokens.len() as f64;
            let mut s = 0.0;
            for term in &terms {
                let tf = p.tokens.iter().filter(|t| t == term).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let df = passages.iter().filter(|q| q.tokens.contains(term)).count() as f64;
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                s += idf * tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * dl / avgdl));
            }
            (p.passage_id.clone(), s)
        })
        .filter(|(_, s)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(k);
    scored
}

pub fn index_of(passages: &[Passage]) -> InvertedIndex {
    InvertedIndex::build(passages.to_vec()).unwrap()
}

/// Units as space-joined strings: punctuation splits phrases, stopwords are
/// removed inside each phrase, then every 1-3 window is a unit.
pub fn units(tokens: &[String], sw: &Stopwords) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut phrase: Vec<&str> = Vec::new();
    let flush = |phrase: &mut Vec<&str>, out: &mut Vec<String>| {
        for i in 0..phrase.len() {
            for n in 1..=3 {
                if i + n <= phrase.len() {
                    let g = phrase[i..i + n].join(" ");
                    if !out.contains(&g) {
                        out.push(g);
                    }
                }
            }
        }
        phrase.clear();
    };
    for t in tokens {
        let has_alnum = t.chars().any(|c| c.is_alphanumeric());
        if !has_alnum {
            flush(&mut phrase, &mut out);
        } else if !sw.contains(t) {
            phrase.push(t);
        }
    }
    flush(&mut phrase, &mut out);
    out
}

fn passage_units(passages: &[Vec<String>], sw: &Stopwords) -> Vec<String> {
    let mut all = Vec::new();
    for p in passages {
        for u in units(p, sw) {
            if !all.contains(&u) {
                all.push(u);
            }
        }
    }
    all
}

fn shared(a: &[String], b: &[String]) -> usize {
    a.iter().filter(|u| b.contains(u)).count()
}

pub fn parent_brute(cand: &[String], passages: &[Vec<String>], reference: Option<&[String]>, sw: &Stopwords) -> f64 {
    let c = units(cand, sw);
    if c.is_empty() {
        return 0.0;
    }
    let r_in = shared(&c, &passage_units(passages, sw)) as f64 / c.len() as f64;
    match reference.map(|r| units(r, sw)) {
        Some(r) if !r.is_empty() => (r_in * (shared(&c, &r) as f64 / r.len() as f64)).sqrt(),
        _ => r_in,
    }
}

pub fn hallucination_brute(cand: &[String], passages: &[Vec<String>], sw: &Stopwords) -> f64 {
    let c = units(cand, sw);
    if c.is_empty() {
        return 0.0;
    }
    let absent = c.len() - shared(&c, &passage_units(passages, sw));
    absent as f64 / c.len() as f64
}

fn count(seq: &[String], gram: &[String]) -> usize {
    (0..seq.len()).filter(|&i| seq[i..].starts_with(gram)).count()
}

pub fn bleu_brute(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=4usize {
        let total = cand.len().saturating_sub(n - 1);
        let mut seen: Vec<&[String]> = Vec::new();
        let mut matched = 0;
        for i in 0..total {
            let g = &cand[i..i + n];
            if seen.contains(&g) {
                continue;
            }
            seen.push(g);
            matched += count(cand, g).min(count(reference, g));
        }
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
    let (c, r) = (cand.len() as f64, reference.len() as f64);
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * log_sum.exp()
}

/// LCS by enumerating every subsequence of `a` (keep `a` short).
pub fn lcs_brute(a: &[String], b: &[String]) -> usize {
    assert!(a.len() <= 16);
    let is_subseq = |s: &[&String]| {
        let mut it = b.iter();
        s.iter().all(|x| it.any(|y| y == *x))
    };
    (0u32..1 << a.len())
        .filter_map(|mask| {
            let s: Vec<&String> = (0..a.len()).filter(|i| mask >> i & 1 == 1).map(|i| &a[i]).collect();
            is_subseq(&s).then_some(s.len())
        })
        .max()
        .unwrap_or(0)
}

pub fn rouge_brute(cand: &[String], reference: &[String]) -> f64 {
    let l = lcs_brute(cand, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / cand.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}

/// Pearson chi-square statistic of observed counts against probabilities.
pub fn chi_square(observed: &[usize], probs: &[f64]) -> f64 {
    let n: usize = observed.iter().sum();
    observed
        .iter()
        .zip(probs)
        .map(|(&o, &p)| {
            let e = p * n as f64;
            (o as f64 - e).powi(2) / e
        })
        .sum()
}

/// Upper 1% critical values of the chi-square distribution, df 1..=5.
pub const CHI2_CRIT_01: [f64; 5] = [6.635, 9.210, 11.345, 13.277, 15.086];

/// Spearman rank correlation without tie correction beyond average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let rank = |v: &[f64]| {
        let mut r = vec![0.0; v.len()];
        for i in 0..v.len() {
            let less = v.iter().filter(|&&o| o < v[i]).count() as f64;
            let equal = v.iter().filter(|&&o| o == v[i]).count() as f64;
            r[i] = less + (equal + 1.0) / 2.0;
        }
        r
    };
    let (rx, ry) = (rank(x), rank(y));
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return 0.0;
    }
    cov / (vx * vy).sqrt()
}
