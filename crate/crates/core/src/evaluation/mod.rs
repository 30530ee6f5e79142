//! Inference with a trained re-ranker and everything measured on its output.

mod recall;
mod stats;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::candidates::{merge_pools, CandidateExample, Dataset};
use crate::error::{Error, Result};
use crate::features::FeatureStore;
use crate::metrics::{pearson, MetricId, ScoreVector};
use crate::moe::RerankerModel;
use crate::textproc::{novel_ngram_fraction, tokenize, TokenizerConfig};

pub use recall::{random_baseline_recall, recall_at_k, RecallCurve};
pub use stats::{
    all_below, ln_gamma, paired_t_test, regularized_incomplete_beta, significance_report, student_t_two_sided,
    Significance, TTest,
};

/// Re-ranking result for one example.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RankingOutcome {
    pub id: String,
    /// Candidate indices by decreasing probability sum.
    pub ranking: Vec<usize>,
    pub selected: usize,
    pub scores: ScoreVector,
    /// Candidate indices of the pool, in pool order.
    pub pool: Vec<usize>,
    /// Sum over tasks of the predicted probabilities, parallel to `pool`.
    pub prob_sums: Vec<f64>,
    /// Gate weights `[task][expert]` per pool candidate, parallel to `pool`.
    pub gates: Vec<Vec<Vec<f64>>>,
}

/// Fails unless every test-time method was seen in training.
pub fn check_methods<S: AsRef<str>>(model: &RerankerModel, methods: &[S]) -> Result<()> {
    let test: Vec<String> = methods.iter().map(|m| m.as_ref().to_string()).collect();
    if test.is_empty() || test.iter().any(|m| !model.train_methods.contains(m)) {
        return Err(Error::MethodsNotSubset {
            test,
            train: model.train_methods.clone(),
        });
    }
    Ok(())
}

/// Positions ordered by decreasing sum, ties broken by lower `keys` value.
pub fn order_by_sums(sums: &[f64], keys: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..sums.len()).collect();
    order.sort_by(|&a, &b| sums[b].total_cmp(&sums[a]).then(keys[a].cmp(&keys[b])));
    order
}

/// Scores the merged pool of `methods` and orders it by summed probability.
pub fn rerank<S: AsRef<str>>(
    model: &RerankerModel,
    example: &CandidateExample,
    methods: &[S],
    features: &FeatureStore,
) -> Result<RankingOutcome> {
    check_methods(model, methods)?;
    let pool = merge_pools(example, methods)?;
    let mut prob_sums = Vec::with_capacity(pool.len());
    let mut gates = Vec::with_capacity(pool.len());
    for entry in &pool.entries {
        let out = model.forward(features.get(&example.id, entry.index)?, None)?;
        let sum: f64 = out.probs().iter().sum();
        if !sum.is_finite() {
            return Err(Error::NonFinite(format!("probabilities of {:?} candidate {}", example.id, entry.index)));
        }
        prob_sums.push(sum);
        gates.push(out.gates);
    }
    let indices: Vec<usize> = pool.entries.iter().map(|e| e.index).collect();
    let ranking: Vec<usize> = order_by_sums(&prob_sums, &indices).into_iter().map(|p| indices[p]).collect();
    let selected = ranking[0];
    Ok(RankingOutcome {
        id: example.id.clone(),
        ranking,
        selected,
        scores: example.candidates[selected].scores.clone(),
        pool: indices,
        prob_sums,
        gates,
    })
}

pub fn rerank_dataset<S: AsRef<str> + Sync>(
    model: &RerankerModel,
    dataset: &Dataset,
    methods: &[S],
    features: &FeatureStore,
) -> Result<Vec<RankingOutcome>> {
    check_methods(model, methods)?;
    dataset
        .examples
        .par_iter()
        .map(|ex| rerank(model, ex, methods, features))
        .collect()
}

fn metric_value(scores: &ScoreVector, id: &str, metric: &str) -> Result<f64> {
    scores.get(metric).ok_or_else(|| Error::MissingScore {
        line: 0,
        id: id.to_string(),
        candidate: 0,
        metric: metric.to_string(),
    })
}

/// Mean over examples of each metric of the selected candidates.
pub fn mean_selected_scores(outcomes: &[RankingOutcome], metrics: &[MetricId]) -> Result<BTreeMap<String, f64>> {
    if outcomes.is_empty() {
        return Err(Error::Empty("ranking outcomes"));
    }
    let mut out = BTreeMap::new();
    for metric in metrics {
        let mut total = 0.0;
        for o in outcomes {
            total += metric_value(&o.scores, &o.id, metric.as_str())?;
        }
        out.insert(metric.to_string(), total / outcomes.len() as f64);
    }
    Ok(out)
}

/// Sum over metrics of the mean selected score; the checkpoint criterion.
pub fn summed_selected_score(outcomes: &[RankingOutcome], metrics: &[MetricId]) -> Result<f64> {
    Ok(mean_selected_scores(outcomes, metrics)?.values().sum())
}

/// Per metric, the mean over examples of the best score in the pool.
pub fn oracle_scores<S: AsRef<str>>(
    dataset: &Dataset,
    metrics: &[MetricId],
    methods: &[S],
) -> Result<BTreeMap<String, f64>> {
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut out = BTreeMap::new();
    for metric in metrics {
        let mut total = 0.0;
        for ex in &dataset.examples {
            let pool = merge_pools(ex, methods)?;
            total += pool.scores(metric.as_str())?.into_iter().fold(f64::NEG_INFINITY, f64::max);
        }
        out.insert(metric.to_string(), total / dataset.len() as f64);
    }
    Ok(out)
}

/// Per-example raw scores of the first-loaded candidate of `method`.
pub fn first_candidate_scores(dataset: &Dataset, metric: &str, method: &str) -> Result<Vec<f64>> {
    dataset
        .examples
        .iter()
        .map(|ex| {
            let pool = merge_pools(ex, &[method])?;
            Ok(pool.scores(metric)?[0])
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OverlapStats {
    /// Fraction of examples whose selection is the base candidate.
    pub picks_base: f64,
    /// Fraction whose selection is in the best-candidate set.
    pub picks_best: f64,
}

/// The base candidate of an example is the first-loaded candidate of
/// `base_method`; examples without one never count as picking it.
pub fn overlap_stats<S: AsRef<str>>(
    outcomes: &[RankingOutcome],
    dataset: &Dataset,
    metrics: &[MetricId],
    methods: &[S],
    base_method: &str,
) -> Result<OverlapStats> {
    if outcomes.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: dataset.len(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let mut base = 0usize;
    let mut best = 0usize;
    for (o, ex) in outcomes.iter().zip(&dataset.examples) {
        if ex.candidates.iter().position(|c| c.method == base_method) == Some(o.selected) {
            base += 1;
        }
        let pool = merge_pools(ex, methods)?;
        let set = pool.best_set(metrics)?;
        if pool.entries.iter().zip(set).any(|(e, b)| b && e.index == o.selected) {
            best += 1;
        }
    }
    let n = dataset.len() as f64;
    Ok(OverlapStats {
        picks_base: base as f64 / n,
        picks_best: best as f64 / n,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SubsamplePoint {
    pub k: usize,
    /// Mean score of the selected candidate, per metric.
    pub means: BTreeMap<String, f64>,
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ b.wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// For each `k`, re-ranks uniformly drawn `k`-subsets of every pool and
/// averages the selected candidate's scores over trials and examples.
#[allow(clippy::too_many_arguments)]
pub fn subsample_curve<S: AsRef<str> + Sync>(
    model: &RerankerModel,
    dataset: &Dataset,
    methods: &[S],
    features: &FeatureStore,
    metrics: &[MetricId],
    ks: &[usize],
    trials: usize,
    seed: u64,
) -> Result<Vec<SubsamplePoint>> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trials must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let outcomes = rerank_dataset(model, dataset, methods, features)?;
    for (o, &k) in outcomes.iter().flat_map(|o| ks.iter().map(move |k| (o, k))) {
        if k == 0 || k > o.pool.len() {
            return Err(Error::InvalidArgument(format!(
                "k = {k} is outside 1..={} for example {:?}",
                o.pool.len(),
                o.id
            )));
        }
    }
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let per_example: Vec<Result<Vec<f64>>> = outcomes
            .par_iter()
            .enumerate()
            .map(|(e, o)| {
                let ex = &dataset.examples[e];
                let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, k as u64, e as u64));
                let mut totals = vec![0.0; metrics.len()];
                for _ in 0..trials {
                    let mut subset = rand::seq::index::sample(&mut rng, o.pool.len(), k).into_vec();
                    subset.sort_unstable();
                    let sums: Vec<f64> = subset.iter().map(|&p| o.prob_sums[p]).collect();
                    let keys: Vec<usize> = subset.iter().map(|&p| o.pool[p]).collect();
                    let chosen = keys[order_by_sums(&sums, &keys)[0]];
                    for (t, metric) in totals.iter_mut().zip(metrics) {
                        *t += metric_value(&ex.candidates[chosen].scores, &ex.id, metric.as_str())?;
                    }
                }
                Ok(totals)
            })
            .collect();
        let mut totals = vec![0.0; metrics.len()];
        for r in per_example {
            for (t, v) in totals.iter_mut().zip(r?) {
                *t += v;
            }
        }
        let denom = (trials * dataset.len()) as f64;
        points.push(SubsamplePoint {
            k,
            means: metrics.iter().zip(totals).map(|(m, t)| (m.to_string(), t / denom)).collect(),
        });
    }
    Ok(points)
}

/// Mean gate vector of each task over every candidate in the pools.
pub fn expert_utilization<S: AsRef<str>>(
    model: &RerankerModel,
    dataset: &Dataset,
    methods: &[S],
    features: &FeatureStore,
) -> Result<Vec<Vec<f64>>> {
    let mut sums = vec![vec![0.0; model.num_experts()]; model.num_tasks()];
    let mut count = 0usize;
    for ex in &dataset.examples {
        let pool = merge_pools(ex, methods)?;
        for entry in &pool.entries {
            let out = model.forward(features.get(&ex.id, entry.index)?, None)?;
            for (row, g) in sums.iter_mut().zip(&out.gates) {
                for (s, x) in row.iter_mut().zip(g) {
                    *s += x;
                }
            }
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::Empty("no candidates to measure gate weights on"));
    }
    for row in &mut sums {
        row.iter_mut().for_each(|x| *x /= count as f64);
    }
    Ok(sums)
}

/// Pearson correlation between every pair of metrics over all candidates of
/// `method`.
pub fn metric_correlation_report(dataset: &Dataset, metrics: &[MetricId], method: &str) -> Result<Vec<Vec<f64>>> {
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); metrics.len()];
    for ex in &dataset.examples {
        for (i, c) in ex.candidates.iter().enumerate() {
            if c.method != method {
                continue;
            }
            for (col, metric) in columns.iter_mut().zip(metrics) {
                col.push(c.scores.get(metric.as_str()).ok_or_else(|| Error::MissingScore {
                    line: 0,
                    id: ex.id.clone(),
                    candidate: i,
                    metric: metric.to_string(),
                })?);
            }
        }
    }
    let n = metrics.len();
    let mut out = vec![vec![1.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let r = pearson(&columns[i], &columns[j])?;
            out[i][j] = r;
            out[j][i] = r;
        }
        if columns[i].len() < 2 || columns[i].iter().all(|&x| x == columns[i][0]) {
            return Err(Error::UndefinedCorrelation);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoveltyEntry {
    pub n: usize,
    /// Mean novel fraction over the summaries long enough for `n`.
    pub mean: Option<f64>,
    pub counted: usize,
    pub skipped: usize,
}

/// Mean novel n-gram fraction of `(source, summary)` pairs. Summaries
/// shorter than `n` tokens are skipped and counted.
pub fn novelty_report<A: AsRef<str>, B: AsRef<str>>(pairs: &[(A, B)], ns: &[usize]) -> Result<Vec<NoveltyEntry>> {
    let tokenized: Vec<(Vec<String>, Vec<String>)> = pairs
        .iter()
        .map(|(src, summ)| {
            (
                tokenize(src.as_ref(), TokenizerConfig::SURFACE),
                tokenize(summ.as_ref(), TokenizerConfig::SURFACE),
            )
        })
        .collect();
    let mut out = Vec::with_capacity(ns.len());
    for &n in ns {
        if n == 0 {
            return Err(Error::ZeroNgramOrder);
        }
        let mut total = 0.0;
        let mut counted = 0;
        let mut skipped = 0;
        for (src, summ) in &tokenized {
            if summ.len() < n {
                skipped += 1;
                continue;
            }
            total += novel_ngram_fraction(summ, src, n)?;
            counted += 1;
        }
        out.push(NoveltyEntry {
            n,
            mean: (counted > 0).then(|| total / counted as f64),
            counted,
            skipped,
        });
    }
    Ok(out)
}

/// `(source, selected text)` for each outcome.
pub fn selected_pairs<'a>(outcomes: &[RankingOutcome], dataset: &'a Dataset) -> Vec<(&'a str, &'a str)> {
    outcomes
        .iter()
        .zip(&dataset.examples)
        .map(|(o, ex)| (ex.source.as_str(), ex.candidates[o.selected].text.as_str()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::Candidate;

    fn example(id: &str, cands: &[(&str, f64, f64)]) -> CandidateExample {
        CandidateExample {
            id: id.into(),
            source: "the cat sat on the mat".into(),
            reference: "the cat sat".into(),
            candidates: cands
                .iter()
                .enumerate()
                .map(|(i, (m, a, b))| Candidate {
                    text: format!("candidate {i}"),
                    method: m.to_string(),
                    scores: [("a", *a), ("b", *b)].into_iter().collect(),
                    features: None,
                })
                .collect(),
        }
    }

    fn metrics() -> Vec<MetricId> {
        vec![MetricId::new("a"), MetricId::new("b")]
    }

    #[test]
    fn hand_sum_ordering() {
        let probs = [[0.9, 0.8], [0.5, 0.5], [0.95, 0.7]];
        let sums: Vec<f64> = probs.iter().map(|p| p.iter().sum()).collect();
        assert_eq!(order_by_sums(&sums, &[0, 1, 2]), vec![0, 2, 1]);
        assert_eq!(order_by_sums(&[0.3, 0.3, 0.3], &[0, 1, 2]), vec![0, 1, 2]);
        assert_eq!(order_by_sums(&[0.3, 0.3], &[5, 2]), vec![1, 0]);
        assert_eq!(order_by_sums(&[0.1], &[0]), vec![0]);
    }

    #[test]
    fn oracle_examples() {
        let ds = Dataset::new(vec![
            example("x", &[("beam", 0.2, 0.4), ("dbs", 0.5, 0.1)]),
            example("y", &[("beam", 0.6, 0.2), ("dbs", 0.3, 0.3)]),
        ]);
        let merged = oracle_scores(&ds, &metrics(), &["beam", "dbs"]).unwrap();
        let beam = oracle_scores(&ds, &metrics(), &["beam"]).unwrap();
        let dbs = oracle_scores(&ds, &metrics(), &["dbs"]).unwrap();
        assert!((merged["a"] - 0.55).abs() < 1e-12);
        assert!((merged["b"] - 0.35).abs() < 1e-12);
        assert!((beam["a"] - 0.4).abs() < 1e-12);
        for m in ["a", "b"] {
            assert!(merged[m] >= beam[m] && merged[m] >= dbs[m]);
        }
        assert!(oracle_scores(&ds, &metrics(), &["topk"]).is_err());
    }

    #[test]
    fn overlap_fractions() {
        let ds = Dataset::new(vec![
            example("x", &[("beam", 0.2, 0.2), ("dbs", 0.5, 0.5)]),
            example("y", &[("beam", 0.6, 0.6), ("dbs", 0.3, 0.3)]),
            example("z", &[("beam", 0.1, 0.1), ("dbs", 0.3, 0.3)]),
            example("w", &[("beam", 0.1, 0.1), ("dbs", 0.3, 0.3)]),
        ]);
        let pick = |id: &str, sel: usize| RankingOutcome {
            id: id.into(),
            ranking: vec![sel, 1 - sel],
            selected: sel,
            scores: ScoreVector::new(),
            pool: vec![0, 1],
            prob_sums: vec![0.0, 0.0],
            gates: vec![],
        };
        let outcomes = vec![pick("x", 1), pick("y", 0), pick("z", 1), pick("w", 1)];
        let s = overlap_stats(&outcomes, &ds, &metrics(), &["beam", "dbs"], "beam").unwrap();
        assert_eq!(s.picks_base, 0.25);
        assert_eq!(s.picks_best, 1.0);
    }

    #[test]
    fn correlation_matrix_properties() {
        let ds = Dataset::new(vec![
            example("x", &[("beam", 0.2, 0.2), ("beam", 0.5, 0.5)]),
            example("y", &[("beam", 0.6, 0.6), ("dbs", 0.3, 0.9)]),
        ]);
        let r = metric_correlation_report(&ds, &metrics(), "beam").unwrap();
        assert_eq!(r, vec![vec![1.0, 1.0], vec![1.0, 1.0]]);
        let flat = Dataset::new(vec![example("x", &[("beam", 0.2, 0.1), ("beam", 0.2, 0.5)])]);
        assert!(metric_correlation_report(&flat, &metrics(), "beam").is_err());
    }

    #[test]
    fn novelty_skips_short_summaries() {
        let src = "a b c d e f g";
        let r = novelty_report(&[(src, "a b c"), (src, "a b c d x")], &[1, 4]).unwrap();
        assert_eq!(r[0].counted, 2);
        assert!((r[0].mean.unwrap() - 0.1).abs() < 1e-12);
        assert_eq!((r[1].counted, r[1].skipped), (1, 1));
        assert!((r[1].mean.unwrap() - 0.5).abs() < 1e-12);
        let prefix = novelty_report(&[(src, "a b c d")], &[1, 2, 3, 4]).unwrap();
        assert!(prefix.iter().all(|e| e.mean == Some(0.0)));
        assert!(novelty_report(&[(src, "a")], &[0]).is_err());
    }
}
