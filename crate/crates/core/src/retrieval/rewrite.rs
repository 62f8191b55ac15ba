use std::collections::HashSet;

use crate::text::{QuestionTemplates, Stopwords};

/// Turns an ambiguous query plus its clarification into a facet-specific
/// retrieval query.
pub trait QueryRewriter {
    fn rewrite(&self, query: &[String], clarification: &[String]) -> Vec<String>;
}

/// Appends the content-bearing tokens of the clarification to the query,
/// dropping stopwords, punctuation and question-template words, and removes
/// duplicates keeping the first occurrence.
#[derive(Debug, Clone, Default)]
pub struct ConcatRewriter {
    pub stopwords: Stopwords,
    pub templates: QuestionTemplates,
}

impl QueryRewriter for ConcatRewriter {
    fn rewrite(&self, query: &[String], clarification: &[String]) -> Vec<String> {
        let template_words = self.templates.vocabulary();
        let mut seen = HashSet::new();
        let extra = clarification.iter().filter(|t| {
            self.stopwords.is_content(t) && !template_words.contains(t.as_str())
        });
        query
            .iter()
            .chain(extra)
            .filter(|t| seen.insert(t.as_str()))
            .cloned()
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::tokenize;

    #[test]
    fn adds_facet_terms() {
        let r = ConcatRewriter::default();
        let out = r.rewrite(&tokenize("family guy"), &tokenize("which season 15"));
        assert_eq!(out, tokenize("family guy season 15"));
    }

    #[test]
    fn template_only_clarification_is_noop() {
        let r = ConcatRewriter::default();
        let q = tokenize("family guy");
        assert_eq!(r.rewrite(&q, &tokenize("are you looking for the ?")), q);
    }
}
