//! ROUGE-N and ROUGE-L (whole-sequence LCS), reported as F1 by default.

use serde::{Deserialize, Serialize};

use crate::textproc::{ngrams, tokenize, TokenizerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTriple {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl ScoreTriple {
    pub const ZERO: ScoreTriple = ScoreTriple {
        precision: 0.0,
        recall: 0.0,
        f1: 0.0,
    };

    pub fn from_counts(overlap: usize, candidate_total: usize, reference_total: usize) -> Self {
        if candidate_total == 0 || reference_total == 0 {
            return Self::ZERO;
        }
        Self::from_pr(
            overlap as f64 / candidate_total as f64,
            overlap as f64 / reference_total as f64,
        )
    }

    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        ScoreTriple {
            precision,
            recall,
            f1,
        }
    }
}

/// ROUGE-N with clipped n-gram counts. `n` must be positive; an empty
/// n-gram set on either side yields zeros.
pub fn rouge_n(candidate: &[String], reference: &[String], n: usize) -> ScoreTriple {
    let (Ok(cand), Ok(refr)) = (ngrams(candidate, n), ngrams(reference, n)) else {
        return ScoreTriple::ZERO;
    };
    ScoreTriple::from_counts(cand.clipped_overlap(&refr), cand.total(), refr.total())
}

pub fn rouge_l(candidate: &[String], reference: &[String]) -> ScoreTriple {
    let lcs = lcs_len(candidate, reference);
    ScoreTriple::from_counts(lcs, candidate.len(), reference.len())
}

/// Length of the longest common subsequence, two-row dynamic programme.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    if a.is_empty() || b.is_empty() {
        return 0;
    }
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// The natively computed metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NativeMetric {
    Rouge1,
    Rouge2,
    RougeL,
}

impl NativeMetric {
    pub const ALL: [NativeMetric; 3] = [NativeMetric::Rouge1, NativeMetric::Rouge2, NativeMetric::RougeL];

    pub fn name(self) -> &'static str {
        match self {
            NativeMetric::Rouge1 => "rouge1",
            NativeMetric::Rouge2 => "rouge2",
            NativeMetric::RougeL => "rougeL",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }

    pub fn score_tokens(self, candidate: &[String], reference: &[String]) -> ScoreTriple {
        match self {
            NativeMetric::Rouge1 => rouge_n(candidate, reference, 1),
            NativeMetric::Rouge2 => rouge_n(candidate, reference, 2),
            NativeMetric::RougeL => rouge_l(candidate, reference),
        }
    }

    /// F1 on the [0, 1] scale, tokenizing with stemming on.
    pub fn score_text(self, candidate: &str, reference: &str) -> f64 {
        let c = tokenize(candidate, TokenizerConfig::ROUGE);
        let r = tokenize(reference, TokenizerConfig::ROUGE);
        self.score_tokens(&c, &r).f1
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-12
    }

    #[test]
    fn rouge_n_examples() {
        let same = words("the cat sat");
        let t = rouge_n(&same, &same, 1);
        assert_eq!((t.precision, t.recall, t.f1), (1.0, 1.0, 1.0));

        let t = rouge_n(&words("the cat sat"), &words("the cat slept"), 1);
        assert!(close(t.precision, 2.0 / 3.0) && close(t.recall, 2.0 / 3.0) && close(t.f1, 2.0 / 3.0));

        let t = rouge_n(&words("the cat sat"), &words("the cat slept"), 2);
        assert!(close(t.precision, 0.5) && close(t.recall, 0.5) && close(t.f1, 0.5));
    }

    #[test]
    fn rouge_n_clips_repeats() {
        let t = rouge_n(&words("the the the"), &words("the cat"), 1);
        assert!(close(t.precision, 1.0 / 3.0));
        assert!(close(t.recall, 0.5));
    }

    #[test]
    fn rouge_l_examples() {
        let abcd = words("a b c d");
        assert_eq!(rouge_l(&abcd, &abcd).f1, 1.0);
        let t = rouge_l(&abcd, &words("a c b d"));
        assert!(close(t.precision, 0.75) && close(t.recall, 0.75) && close(t.f1, 0.75));
        assert_eq!(rouge_l(&words("x"), &words("y")), ScoreTriple::ZERO);
        assert_eq!(rouge_l(&[], &abcd), ScoreTriple::ZERO);
    }

    #[test]
    fn native_names_round_trip() {
        for m in NativeMetric::ALL {
            assert_eq!(NativeMetric::from_name(m.name()), Some(m));
        }
        assert_eq!(NativeMetric::from_name("bertscore"), None);
    }

    proptest! {
        #[test]
        fn precision_and_recall_swap(
            a in proptest::collection::vec("[a-d]", 0..12),
            b in proptest::collection::vec("[a-d]", 0..12),
            n in 1usize..3,
        ) {
            let ab = rouge_n(&a, &b, n);
            let ba = rouge_n(&b, &a, n);
            prop_assert_eq!(ab.precision, ba.recall);
            prop_assert_eq!(ab.recall, ba.precision);
            let lab = rouge_l(&a, &b);
            let lba = rouge_l(&b, &a);
            prop_assert_eq!(lab.precision, lba.recall);
            prop_assert_eq!(lab.recall, lba.precision);
            if a.len() == b.len() {
                prop_assert!((lab.f1 - lba.f1).abs() < 1e-15);
            }
        }
    }
}
