//! Best-candidate recall at k.

use std::collections::HashSet;

use serde::Serialize;

use super::RankingOutcome;
use crate::candidates::{merge_pools, Dataset};
use crate::error::{Error, Result};
use crate::metrics::MetricId;

/// Probability that a uniformly random ranking of `m` candidates, `m_best`
/// of which are best, puts at least one best candidate in its top `k`:
/// `(C(m, m_best) - C(m - k, m_best)) / C(m, m_best)`.
pub fn random_baseline_recall(m: usize, m_best: usize, k: usize) -> Result<f64> {
    if m_best == 0 || m_best > m || k == 0 || k > m {
        return Err(Error::InvalidArgument(format!(
            "need 1 <= m_best <= m and 1 <= k <= m, got m = {m}, m_best = {m_best}, k = {k}"
        )));
    }
    // C(m-k, b) / C(m, b) = prod_{i<b} (m-k-i) / (m-i)
    let mut miss = 1.0;
    for i in 0..m_best {
        if m - k <= i {
            return Ok(1.0);
        }
        miss *= (m - k - i) as f64 / (m - i) as f64;
    }
    Ok(1.0 - miss)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallCurve {
    pub ks: Vec<usize>,
    pub model: Vec<f64>,
    pub random: Vec<f64>,
    /// Candidates taken in load order.
    pub base_order: Vec<f64>,
}

/// First rank (0-based) at which `ranking` hits a member of `best`.
fn first_hit(ranking: &[usize], best: &HashSet<usize>) -> usize {
    ranking.iter().position(|i| best.contains(i)).unwrap_or(usize::MAX)
}

/// Recall curves for `k = 1..=max_k`. An example is recalled at `k` when one
/// of its top `k` candidates belongs to the best set under summed
/// normalized scores; `k` beyond a pool's size counts as the full pool.
pub fn recall_at_k<S: AsRef<str>>(
    outcomes: &[RankingOutcome],
    dataset: &Dataset,
    metrics: &[MetricId],
    methods: &[S],
    max_k: usize,
) -> Result<RecallCurve> {
    if outcomes.len() != dataset.len() {
        return Err(Error::LengthMismatch {
            left: outcomes.len(),
            right: dataset.len(),
        });
    }
    if dataset.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let ks: Vec<usize> = (1..=max_k).collect();
    let mut model = vec![0.0; max_k];
    let mut random = vec![0.0; max_k];
    let mut base_order = vec![0.0; max_k];
    for (outcome, example) in outcomes.iter().zip(&dataset.examples) {
        if outcome.id != example.id {
            return Err(Error::InvalidArgument(format!(
                "outcome for {:?} aligned with example {:?}",
                outcome.id, example.id
            )));
        }
        let pool = merge_pools(example, methods)?;
        let best: HashSet<usize> = pool
            .best_set(metrics)?
            .iter()
            .zip(&pool.entries)
            .filter(|(b, _)| **b)
            .map(|(_, e)| e.index)
            .collect();
        let mut load_order: Vec<usize> = pool.entries.iter().map(|e| e.index).collect();
        load_order.sort_unstable();
        let model_hit = first_hit(&outcome.ranking, &best);
        let base_hit = first_hit(&load_order, &best);
        let m = pool.len();
        for (j, &k) in ks.iter().enumerate() {
            if model_hit < k {
                model[j] += 1.0;
            }
            if base_hit < k {
                base_order[j] += 1.0;
            }
            random[j] += random_baseline_recall(m, best.len(), k.min(m))?;
        }
    }
    let n = dataset.len() as f64;
    for v in [&mut model, &mut random, &mut base_order] {
        v.iter_mut().for_each(|x| *x /= n);
    }
    Ok(RecallCurve {
        ks,
        model,
        random,
        base_order,
    })
}
