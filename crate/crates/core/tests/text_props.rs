//! Round-trip and monotonicity properties of tokenization, chunking, n-gram
//! extraction and configuration files.

use proptest::prelude::*;
use rac_core::pipeline::RunConfig;
use rac_core::retrieval::Strategy as Retrieval;
use rac_core::text::{
    chunk_passages, content_units, detokenize, extract_ngrams, tokenize, Document, Stopwords, Vocab,
};

fn text_strategy() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 ,.?!'éÜ\\-\t\n]{0,80}"
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn tokenize_is_idempotent(s in text_strategy()) {
        let once = tokenize(&s);
        prop_assert_eq!(tokenize(&detokenize(&once)), once.clone());
        prop_assert!(once.iter().all(|t| !t.is_empty() && !t.chars().any(char::is_whitespace)));
        prop_assert!(once.iter().all(|t| t.to_lowercase() == *t));
    }

    #[test]
    fn chunks_reassemble_the_document(s in text_strategy(), size in 1usize..12) {
        let doc = Document { doc_id: "doc".into(), text: s.clone() };
        let passages = chunk_passages(&doc, size).unwrap();
        let all = tokenize(&s);
        prop_assert_eq!(passages.len(), all.len().div_ceil(size));
        let joined: Vec<String> = passages.iter().flat_map(|p| p.tokens.clone()).collect();
        prop_assert_eq!(&joined, &all);
        for (n, p) in passages.iter().enumerate() {
            prop_assert!(p.tokens.len() <= size);
            prop_assert_eq!(&p.passage_id, &format!("doc#{n}"));
            prop_assert_eq!(&tokenize(&p.text), &p.tokens);
        }
    }

    #[test]
    fn ngram_counts_cover_every_window(
        tokens in prop::collection::vec(prop::sample::select(vec!["a", "b", "c"]), 0..20),
        n in 1usize..5,
    ) {
        let grams = extract_ngrams(&tokens, n);
        let total: usize = grams.values().sum();
        prop_assert_eq!(total, tokens.len().saturating_sub(n - 1));
        for (g, &c) in &grams {
            let brute = tokens.windows(n).filter(|w| w == g).count();
            prop_assert_eq!(c, brute);
        }
    }

    #[test]
    fn vocab_round_trips_known_tokens(s in text_strategy()) {
        let tokens = tokenize(&s);
        let vocab = Vocab::build([tokens.clone()]);
        prop_assert_eq!(vocab.decode(&vocab.encode(&tokens)), tokens);
    }

    #[test]
    fn units_grow_under_suffix_after_a_boundary(a in text_strategy(), b in text_strategy()) {
        let sw = Stopwords::default();
        let x = tokenize(&a);
        let mut xy = x.clone();
        xy.push(",".into());
        xy.extend(tokenize(&b));
        let (small, big) = (content_units(&x, &sw), content_units(&xy, &sw));
        prop_assert!(small.is_subset(&big));
        prop_assert!(big.iter().all(|u| !u.0.is_empty() && u.0.len() <= 3 && u.0.iter().all(|t| sw.is_content(t))));
    }

    #[test]
    fn config_round_trips_through_json(
        seed in any::<u64>(),
        k in 1usize..10,
        alpha in 0.0f64..=1.0,
        gamma in 0.0f64..=1.0,
        beta in 0.01f64..5.0,
        random in any::<bool>(),
    ) {
        let cfg = RunConfig {
            seed,
            k,
            alpha,
            gamma,
            beta,
            strategy: if random { Retrieval::Random } else { Retrieval::Bm25 },
            ..RunConfig::default()
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        cfg.save(&path).unwrap();
        let back = RunConfig::load(&path).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn config_rejects_unknown_keys_and_bad_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    std::fs::write(&path, r#"{"seed": 1, "not_a_key": 2}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
    std::fs::write(&path, r#"{"alpha": 1.5}"#).unwrap();
    assert!(RunConfig::load(&path).is_err());
    std::fs::write(&path, r#"{"seed": 9}"#).unwrap();
    assert_eq!(RunConfig::load(&path).unwrap(), RunConfig { seed: 9, ..RunConfig::default() });
}
