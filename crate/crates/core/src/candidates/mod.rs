//! Candidate pools: the dataset model, per-metric "best candidate" labels,
//! training-time candidate sampling and pool statistics.

mod io;

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{normalize_pool_scores, MetricId, ScoreVector};

pub use io::{load_dataset, read_dataset, save_dataset, score_native, write_dataset, LoadOptions};

/// Scores that differ by less than this after summation are treated as tied
/// when building best-candidate sets.
pub const SUM_TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub text: String,
    pub method: String,
    pub scores: ScoreVector,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateExample {
    pub id: String,
    pub source: String,
    pub reference: String,
    /// Load order; it is the tie-breaking order everywhere.
    pub candidates: Vec<Candidate>,
}

impl CandidateExample {
    pub fn count_method(&self, method: &str) -> usize {
        self.candidates.iter().filter(|c| c.method == method).count()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub examples: Vec<CandidateExample>,
}

impl Dataset {
    pub fn new(examples: Vec<CandidateExample>) -> Self {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.examples.iter().map(|e| e.id.as_str())
    }

    /// Methods in order of first appearance.
    pub fn methods(&self) -> Vec<String> {
        let mut seen = Vec::<String>::new();
        for c in self.examples.iter().flat_map(|e| &e.candidates) {
            if !seen.contains(&c.method) {
                seen.push(c.method.clone());
            }
        }
        seen
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PoolEntry<'a> {
    /// Index of the candidate within its example.
    pub index: usize,
    pub candidate: &'a Candidate,
}

/// The candidates of one example restricted to a set of decoding methods,
/// grouped by method in the configured method order.
#[derive(Debug, Clone)]
pub struct Pool<'a> {
    pub example: &'a CandidateExample,
    pub entries: Vec<PoolEntry<'a>>,
}

pub fn merge_pools<'a, S: AsRef<str>>(example: &'a CandidateExample, methods: &[S]) -> Result<Pool<'a>> {
    let method_names = || methods.iter().map(|m| m.as_ref().to_string()).collect::<Vec<_>>();
    if methods.is_empty() {
        return Err(Error::InvalidArgument("method set is empty".into()));
    }
    let mut entries = Vec::new();
    for method in methods {
        entries.extend(
            example
                .candidates
                .iter()
                .enumerate()
                .filter(|(_, c)| c.method == method.as_ref())
                .map(|(index, candidate)| PoolEntry { index, candidate }),
        );
    }
    if entries.is_empty() {
        return Err(Error::EmptyPool {
            id: example.id.clone(),
            methods: method_names(),
        });
    }
    Ok(Pool { example, entries })
}

impl<'a> Pool<'a> {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Raw scores of `metric`, in pool order.
    pub fn scores(&self, metric: &str) -> Result<Vec<f64>> {
        self.entries
            .iter()
            .map(|e| {
                e.candidate.scores.get(metric).ok_or_else(|| Error::MissingScore {
                    line: 0,
                    id: self.example.id.clone(),
                    candidate: e.index,
                    metric: metric.to_string(),
                })
            })
            .collect()
    }

    /// Sum over `metrics` of the per-pool min-max normalized scores.
    pub fn summed_normalized(&self, metrics: &[MetricId]) -> Result<Vec<f64>> {
        let mut sum = vec![0.0; self.len()];
        for metric in metrics {
            let norm = normalize_pool_scores(&self.scores(metric.as_str())?)?;
            for (s, n) in sum.iter_mut().zip(norm) {
                *s += n;
            }
        }
        Ok(sum)
    }

    /// Membership of the best-candidate set under summed normalized scores.
    pub fn best_set(&self, metrics: &[MetricId]) -> Result<Vec<bool>> {
        let sums = self.summed_normalized(metrics)?;
        let max = sums.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        Ok(sums.iter().map(|&s| max - s <= SUM_TIE_TOLERANCE).collect())
    }
}

/// Every candidate attaining the maximum gets a positive label.
pub fn argmax_labels(scores: &[f64]) -> Vec<bool> {
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    scores.iter().map(|&s| s == max).collect()
}

pub fn label_pool(pool: &Pool<'_>, metric: &str) -> Result<Vec<bool>> {
    Ok(argmax_labels(&pool.scores(metric)?))
}

/// Which candidates the per-metric labels of a sampled subset are computed
/// against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelScope {
    /// Best among the sampled candidates only.
    #[default]
    Subset,
    /// Best over the whole merged pool; a sampled subset may then lack a
    /// positive for some metric.
    FullPool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampledCandidates {
    /// Positions into the pool: the top `m_top` first, then the bottom
    /// `m_bottom`, both in ranking order.
    pub positions: Vec<usize>,
    /// `labels[i][k]` is 1.0 when sampled candidate `i` is best for metric `k`.
    pub labels: Vec<Vec<f64>>,
}

/// Ranks the pool by decreasing summed normalized score (ties by pool
/// order) and keeps the head and tail.
pub fn sample_training_candidates(
    pool: &Pool<'_>,
    m_top: usize,
    m_bottom: usize,
    metrics: &[MetricId],
    scope: LabelScope,
) -> Result<SampledCandidates> {
    if m_top == 0 || m_bottom == 0 {
        return Err(Error::InvalidArgument("m_top and m_bottom must be at least 1".into()));
    }
    if m_top + m_bottom > pool.len() {
        return Err(Error::PoolTooSmall {
            pool: pool.len(),
            m_top,
            m_bottom,
        });
    }
    let sums = pool.summed_normalized(metrics)?;
    let ranking = rank_descending(&sums);
    let mut positions: Vec<usize> = ranking[..m_top].to_vec();
    positions.extend_from_slice(&ranking[ranking.len() - m_bottom..]);

    let mut labels = vec![vec![0.0; metrics.len()]; positions.len()];
    for (k, metric) in metrics.iter().enumerate() {
        let scores = pool.scores(metric.as_str())?;
        let positive = match scope {
            LabelScope::Subset => {
                argmax_labels(&positions.iter().map(|&p| scores[p]).collect::<Vec<_>>())
            }
            LabelScope::FullPool => {
                let full = argmax_labels(&scores);
                positions.iter().map(|&p| full[p]).collect()
            }
        };
        for (row, pos) in labels.iter_mut().zip(positive) {
            row[k] = if pos { 1.0 } else { 0.0 };
        }
    }
    Ok(SampledCandidates { positions, labels })
}

/// Indices sorted by decreasing value; equal values keep index order.
pub fn rank_descending(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    order
}

/// Distinct values after rounding to six decimals.
pub fn unique_score_count(scores: &[f64]) -> usize {
    scores
        .iter()
        .map(|s| (s * 1e6).round() as i64)
        .collect::<HashSet<_>>()
        .len()
}

/// Fraction of examples whose `method` pool has one single distinct score
/// for `metric`. Examples without candidates of `method` are left out.
pub fn identical_pool_fraction(dataset: &Dataset, metric: &str, method: &str) -> Result<f64> {
    let mut pools = 0usize;
    let mut identical = 0usize;
    for example in &dataset.examples {
        let Ok(pool) = merge_pools(example, &[method]) else {
            continue;
        };
        pools += 1;
        if unique_score_count(&pool.scores(metric)?) == 1 {
            identical += 1;
        }
    }
    if pools == 0 {
        return Err(Error::Empty("no example has candidates for the method"));
    }
    Ok(identical as f64 / pools as f64)
}

/// Seeded shuffle, then the first ceil(n/2) examples go to the first half.
pub fn half_split(dataset: &Dataset, seed: u64) -> Result<(Dataset, Dataset)> {
    if dataset.len() < 2 {
        return Err(Error::InvalidArgument("half split needs at least two examples".into()));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = dataset.len().div_ceil(2);
    let pick = |idx: &[usize]| Dataset::new(idx.iter().map(|&i| dataset.examples[i].clone()).collect());
    Ok((pick(&order[..cut]), pick(&order[cut..])))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cand(method: &str, scores: &[(&str, f64)]) -> Candidate {
        Candidate {
            text: format!("{method} text"),
            method: method.into(),
            scores: scores.iter().map(|(k, v)| (*k, *v)).collect(),
            features: None,
        }
    }

    fn example(id: &str, cands: Vec<Candidate>) -> CandidateExample {
        CandidateExample {
            id: id.into(),
            source: "src".into(),
            reference: "ref".into(),
            candidates: cands,
        }
    }

    fn one_metric(values: &[f64], method: &str) -> Vec<Candidate> {
        values.iter().map(|&v| cand(method, &[("m", v)])).collect()
    }

    #[test]
    fn merge_pools_respects_method_order() {
        let mut cands = one_metric(&[1.0; 15], "beam");
        cands.extend(one_metric(&[2.0; 15], "dbs"));
        let ex = example("e", cands);
        assert_eq!(merge_pools(&ex, &["beam", "dbs"]).unwrap().len(), 30);
        let beam = merge_pools(&ex, &["beam"]).unwrap();
        assert_eq!(beam.entries.iter().map(|e| e.index).collect::<Vec<_>>(), (0..15).collect::<Vec<_>>());
        let rev = merge_pools(&ex, &["dbs", "beam"]).unwrap();
        assert_eq!(rev.entries[0].index, 15);
        assert_eq!(rev.entries[15].index, 0);
        assert!(matches!(merge_pools(&ex, &["topk"]), Err(Error::EmptyPool { .. })));
    }

    #[test]
    fn label_examples() {
        assert_eq!(argmax_labels(&[3.0, 5.0, 5.0, 1.0]), vec![false, true, true, false]);
        assert_eq!(argmax_labels(&[7.0]), vec![true]);
        assert_eq!(argmax_labels(&[2.0; 4]), vec![true; 4]);
    }

    #[test]
    fn sampling_examples() {
        let metrics = [MetricId::new("m")];
        let values: Vec<f64> = (0..60).map(|i| ((i * 37) % 60) as f64).collect();
        let ex = example("e", one_metric(&values, "beam"));
        let pool = merge_pools(&ex, &["beam"]).unwrap();
        let s = sample_training_candidates(&pool, 1, 1, &metrics, LabelScope::Subset).unwrap();
        assert_eq!(s.positions.len(), 2);
        assert_eq!(values[s.positions[0]], 59.0);
        assert_eq!(values[s.positions[1]], 0.0);
        assert_eq!(s.labels, vec![vec![1.0], vec![0.0]]);

        let ex = example("two", one_metric(&[0.1, 0.9], "beam"));
        let pool = merge_pools(&ex, &["beam"]).unwrap();
        let s = sample_training_candidates(&pool, 1, 1, &metrics, LabelScope::Subset).unwrap();
        assert_eq!(s.positions, vec![1, 0]);

        let ex = example("tie", one_metric(&[0.5, 0.5], "beam"));
        let pool = merge_pools(&ex, &["beam"]).unwrap();
        let s = sample_training_candidates(&pool, 1, 1, &metrics, LabelScope::Subset).unwrap();
        assert_eq!(s.positions, vec![0, 1]);
        assert_eq!(s.labels, vec![vec![1.0], vec![1.0]]);

        assert!(matches!(
            sample_training_candidates(&pool, 2, 1, &metrics, LabelScope::Subset),
            Err(Error::PoolTooSmall { .. })
        ));
    }

    #[test]
    fn full_pool_labels_may_lack_positive() {
        // metric a ranks candidate 2 on top overall, but b's best is candidate 1,
        // which is neither the top nor the bottom of the summed ranking.
        let ex = example(
            "e",
            vec![
                cand("beam", &[("a", 0.0), ("b", 0.0)]),
                cand("beam", &[("a", 0.5), ("b", 1.0)]),
                cand("beam", &[("a", 1.0), ("b", 0.6)]),
            ],
        );
        let pool = merge_pools(&ex, &["beam"]).unwrap();
        let metrics = [MetricId::new("a"), MetricId::new("b")];
        // Sums: 0.0, 1.5, 1.6 -> top = 2, bottom = 0.
        let sub = sample_training_candidates(&pool, 1, 1, &metrics, LabelScope::Subset).unwrap();
        assert_eq!(sub.positions, vec![2, 0]);
        assert_eq!(sub.labels, vec![vec![1.0, 1.0], vec![0.0, 0.0]]);
        let full = sample_training_candidates(&pool, 1, 1, &metrics, LabelScope::FullPool).unwrap();
        assert_eq!(full.labels, vec![vec![1.0, 0.0], vec![0.0, 0.0]]);
    }

    #[test]
    fn unique_and_identical() {
        assert_eq!(unique_score_count(&[1.0, 2.0, 2.0, 3.0]), 3);
        assert_eq!(unique_score_count(&(0..15).map(f64::from).collect::<Vec<_>>()), 15);
        assert_eq!(unique_score_count(&[0.3; 5]), 1);
        assert_eq!(unique_score_count(&[0.1 + 0.2, 0.3]), 1);

        let tied = |id: &str| example(id, one_metric(&[1.0, 1.0], "beam"));
        let spread = |id: &str| example(id, one_metric(&[1.0, 2.0], "beam"));
        let ds = Dataset::new(vec![tied("a"), spread("b"), spread("c"), spread("d")]);
        assert_eq!(identical_pool_fraction(&ds, "m", "beam").unwrap(), 0.25);
        let ds = Dataset::new(vec![tied("a"), tied("b")]);
        assert_eq!(identical_pool_fraction(&ds, "m", "beam").unwrap(), 1.0);
        let ds = Dataset::new(vec![spread("a")]);
        assert_eq!(identical_pool_fraction(&ds, "m", "beam").unwrap(), 0.0);
    }

    fn numbered(n: usize) -> Dataset {
        Dataset::new((0..n).map(|i| example(&i.to_string(), one_metric(&[1.0], "beam"))).collect())
    }

    #[test]
    fn half_split_examples() {
        let (a, b) = half_split(&numbered(10), 3).unwrap();
        assert_eq!((a.len(), b.len()), (5, 5));
        let (a, b) = half_split(&numbered(11), 3).unwrap();
        assert_eq!((a.len(), b.len()), (6, 5));
        let again = half_split(&numbered(11), 3).unwrap();
        assert_eq!(a, again.0);
        assert_eq!(b, again.1);
        assert!(half_split(&numbered(1), 0).is_err());
    }

    proptest! {
        #[test]
        fn half_split_partitions(n in 2usize..40, seed in any::<u64>()) {
            let ds = numbered(n);
            let (a, b) = half_split(&ds, seed).unwrap();
            let mut ids: Vec<String> = a.ids().chain(b.ids()).map(String::from).collect();
            prop_assert_eq!(ids.len(), n);
            ids.sort();
            ids.dedup();
            prop_assert_eq!(ids.len(), n);
        }

        #[test]
        fn labels_invariant_under_increasing_transform(
            scores in proptest::collection::vec(0u8..6, 1..12),
        ) {
            let raw: Vec<f64> = scores.iter().map(|&s| f64::from(s)).collect();
            let transformed: Vec<f64> = raw.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
            let labels = argmax_labels(&raw);
            prop_assert!(labels.iter().any(|&l| l));
            prop_assert_eq!(labels, argmax_labels(&transformed));
        }

        #[test]
        fn sampling_invariant_under_affine_rescaling(
            a in proptest::collection::vec(0.0f64..1.0, 4..12),
            b in proptest::collection::vec(0.0f64..1.0, 12),
            scale in 0.5f64..20.0,
            shift in -3.0f64..3.0,
        ) {
            let build = |f: &dyn Fn(f64) -> f64| {
                example("e", a.iter().zip(&b).map(|(&x, &y)| cand("beam", &[("a", f(x)), ("b", y)])).collect())
            };
            let metrics = [MetricId::new("a"), MetricId::new("b")];
            let ex1 = build(&|x| x);
            let ex2 = build(&|x| scale * x + shift);
            let p1 = merge_pools(&ex1, &["beam"]).unwrap();
            let p2 = merge_pools(&ex2, &["beam"]).unwrap();
            let s1 = sample_training_candidates(&p1, 1, 2, &metrics, LabelScope::Subset).unwrap();
            let s2 = sample_training_candidates(&p2, 1, 2, &metrics, LabelScope::Subset).unwrap();
            prop_assert_eq!(s1.positions.len(), 3);
            let mut set1 = s1.positions.clone();
            let mut set2 = s2.positions.clone();
            set1.sort();
            set2.sort();
            prop_assert_eq!(set1, set2);
        }
    }
}
