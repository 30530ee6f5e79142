//! Tokenization, stemming and n-gram counting.
//!
//! A token is a maximal run of ASCII alphanumeric characters; everything
//! else, including every non-ASCII character, separates tokens. Every metric
//! and every novelty statistic in the crate goes through [`tokenize`].

mod porter;

use std::collections::{HashMap, HashSet};

pub use porter::porter_stem;

use crate::error::{Error, Result};

/// Tokens shorter than this are never stemmed. The reference ROUGE scorer
/// applies the same cut-off.
const MIN_STEM_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TokenizerConfig {
    pub lowercase: bool,
    pub stem: bool,
}

impl TokenizerConfig {
    /// Lowercased and Porter-stemmed; the configuration used by ROUGE.
    pub const ROUGE: TokenizerConfig = TokenizerConfig {
        lowercase: true,
        stem: true,
    };

    /// Lowercased surface forms; the configuration used for novelty counts.
    pub const SURFACE: TokenizerConfig = TokenizerConfig {
        lowercase: true,
        stem: false,
    };
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        Self::ROUGE
    }
}

pub fn tokenize(text: &str, config: TokenizerConfig) -> Vec<String> {
    text.split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| {
            let token = if config.lowercase {
                t.to_ascii_lowercase()
            } else {
                t.to_string()
            };
            if config.stem && token.len() >= MIN_STEM_LEN {
                porter_stem(&token)
            } else {
                token
            }
        })
        .collect()
}

/// Multiset of the n-grams of one token sequence. Keys borrow from the
/// sequence they were built from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NGramCounts<'a> {
    n: usize,
    counts: HashMap<&'a [String], usize>,
}

impl<'a> NGramCounts<'a> {
    pub fn order(&self) -> usize {
        self.n
    }

    pub fn get(&self, gram: &[String]) -> usize {
        self.counts.get(gram).copied().unwrap_or(0)
    }

    pub fn contains(&self, gram: &[String]) -> bool {
        self.counts.contains_key(gram)
    }

    /// Number of distinct n-grams.
    pub fn distinct(&self) -> usize {
        self.counts.len()
    }

    /// Total number of n-gram occurrences.
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'a [String], usize)> + '_ {
        self.counts.iter().map(|(k, v)| (*k, *v))
    }

    /// Sum over shared n-grams of the smaller of the two counts.
    pub fn clipped_overlap(&self, other: &NGramCounts<'_>) -> usize {
        let (small, large) = if self.distinct() <= other.distinct() {
            (self, other)
        } else {
            (other, self)
        };
        small
            .counts
            .iter()
            .map(|(gram, &c)| c.min(large.get(gram)))
            .sum()
    }
}

pub fn ngrams(tokens: &[String], n: usize) -> Result<NGramCounts<'_>> {
    if n == 0 {
        return Err(Error::ZeroNgramOrder);
    }
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    Ok(NGramCounts { n, counts })
}

/// Share of the summary's n-gram occurrences whose n-gram never occurs in
/// the source.
pub fn novel_ngram_fraction(summary: &[String], source: &[String], n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::ZeroNgramOrder);
    }
    if summary.len() < n {
        return Err(Error::UndefinedNovelty {
            len: summary.len(),
            n,
        });
    }
    let source_grams: HashSet<&[String]> = source.windows(n).collect();
    let total = summary.len() - n + 1;
    let novel = summary
        .windows(n)
        .filter(|g| !source_grams.contains(g))
        .count();
    Ok(novel as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(words: &[&str]) -> Vec<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn tokenize_examples() {
        assert!(tokenize("", TokenizerConfig::ROUGE).is_empty());
        assert_eq!(
            tokenize("The cat-sat.", TokenizerConfig::SURFACE),
            toks(&["the", "cat", "sat"])
        );
        assert_eq!(
            tokenize("running Runners", TokenizerConfig::ROUGE),
            toks(&["run", "runner"])
        );
    }

    #[test]
    fn non_ascii_separates() {
        assert_eq!(
            tokenize("café déjà-vu naïve", TokenizerConfig::SURFACE),
            toks(&["caf", "d", "j", "vu", "na", "ve"])
        );
    }

    #[test]
    fn case_preserved_without_lowercase() {
        let cfg = TokenizerConfig {
            lowercase: false,
            stem: true,
        };
        // Uppercase letters fall outside the stemmer's alphabet.
        assert_eq!(tokenize("Running running", cfg), toks(&["Running", "run"]));
    }

    #[test]
    fn ngram_examples() {
        let seq = toks(&["a", "b", "a"]);
        let uni = ngrams(&seq, 1).unwrap();
        assert_eq!(uni.get(&toks(&["a"])), 2);
        assert_eq!(uni.get(&toks(&["b"])), 1);
        assert_eq!(uni.distinct(), 2);
        let bi = ngrams(&seq, 2).unwrap();
        assert_eq!(bi.get(&toks(&["a", "b"])), 1);
        assert_eq!(bi.get(&toks(&["b", "a"])), 1);
        assert_eq!(bi.total(), 2);
        assert!(ngrams(&toks(&["a"]), 2).unwrap().is_empty());
        assert!(matches!(ngrams(&seq, 0), Err(Error::ZeroNgramOrder)));
    }

    #[test]
    fn novelty_examples() {
        let src = toks(&["a", "b", "c", "d"]);
        assert_eq!(novel_ngram_fraction(&toks(&["b", "c"]), &src, 1).unwrap(), 0.0);
        assert_eq!(novel_ngram_fraction(&toks(&["x", "y"]), &src, 1).unwrap(), 1.0);
        let f = novel_ngram_fraction(&toks(&["a", "b", "c"]), &toks(&["a", "b"]), 1).unwrap();
        assert!((f - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(
            novel_ngram_fraction(&toks(&["a"]), &src, 2),
            Err(Error::UndefinedNovelty { len: 1, n: 2 })
        ));
    }

    proptest! {
        #[test]
        fn tokenize_is_idempotent_without_stemming(s in "\\PC{0,60}") {
            let cfg = TokenizerConfig::SURFACE;
            let once = tokenize(&s, cfg);
            let twice = tokenize(&once.join(" "), cfg);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(tokenize(&s, cfg), once);
        }

        #[test]
        fn ngram_total_matches_length(seq in proptest::collection::vec("[a-c]", 0..15), n in 1usize..5) {
            let counts = ngrams(&seq, n).unwrap();
            prop_assert_eq!(counts.total(), (seq.len() + 1).saturating_sub(n));
            for (gram, c) in counts.iter() {
                prop_assert_eq!(gram.len(), n);
                prop_assert!(c >= 1);
            }
        }

        #[test]
        fn self_novelty_is_zero(seq in proptest::collection::vec("[a-e]", 4..20), n in 1usize..5) {
            prop_assert_eq!(novel_ngram_fraction(&seq, &seq, n).unwrap(), 0.0);
        }
    }
}
