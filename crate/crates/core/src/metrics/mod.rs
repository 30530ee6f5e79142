//! Candidate quality metrics: native ROUGE, the registry of active metrics,
//! and the small statistics built on top of per-candidate scores.

mod rouge;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use rouge::{lcs_len, rouge_l, rouge_n, NativeMetric, ScoreTriple};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricId(String);

impl MetricId {
    pub fn new(name: impl Into<String>) -> Self {
        MetricId(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn native(&self) -> Option<NativeMetric> {
        NativeMetric::from_name(&self.0)
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for MetricId {
    fn from(s: &str) -> Self {
        MetricId::new(s)
    }
}

/// Ordered set of metrics every candidate must carry a score for. Native
/// metric names are reserved: they can only enter through [`MetricRegistry::native`]
/// or [`MetricRegistry::from_names`].
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MetricRegistry {
    metrics: Vec<MetricId>,
}

impl MetricRegistry {
    pub fn empty() -> Self {
        Self::default()
    }

    /// rouge1, rouge2, rougeL in that order.
    pub fn native() -> Self {
        MetricRegistry {
            metrics: NativeMetric::ALL.iter().map(|m| MetricId::new(m.name())).collect(),
        }
    }

    /// Builds a registry in the given order; names that are not native
    /// become external metrics.
    pub fn from_names<S: AsRef<str>>(names: &[S]) -> Result<Self> {
        let mut reg = Self::empty();
        for name in names {
            let name = name.as_ref();
            if reg.contains(name) {
                return Err(Error::DuplicateMetric(name.to_string()));
            }
            reg.metrics.push(MetricId::new(name));
        }
        Ok(reg)
    }

    pub fn register_external(&mut self, name: &str) -> Result<()> {
        if NativeMetric::from_name(name).is_some() || self.contains(name) {
            return Err(Error::DuplicateMetric(name.to_string()));
        }
        self.metrics.push(MetricId::new(name));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.metrics.iter().any(|m| m.as_str() == name)
    }

    pub fn resolve(&self, name: &str) -> Result<&MetricId> {
        self.metrics
            .iter()
            .find(|m| m.as_str() == name)
            .ok_or_else(|| Error::UnknownMetric {
                name: name.to_string(),
                registered: self.names(),
            })
    }

    pub fn names(&self) -> Vec<String> {
        self.metrics.iter().map(|m| m.to_string()).collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &MetricId> {
        self.metrics.iter()
    }

    pub fn externals(&self) -> impl Iterator<Item = &MetricId> {
        self.metrics.iter().filter(|m| m.native().is_none())
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }
}

/// Raw per-metric scores of one candidate. ROUGE values live on [0, 1].
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ScoreVector(BTreeMap<String, f64>);

impl ScoreVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, metric: &str) -> Option<f64> {
        self.0.get(metric).copied()
    }

    pub fn insert(&mut self, metric: impl Into<String>, value: f64) {
        self.0.insert(metric.into(), value);
    }

    pub fn contains(&self, metric: &str) -> bool {
        self.0.contains_key(metric)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.0.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl<S: Into<String>> FromIterator<(S, f64)> for ScoreVector {
    fn from_iter<I: IntoIterator<Item = (S, f64)>>(iter: I) -> Self {
        ScoreVector(iter.into_iter().map(|(k, v)| (k.into(), v)).collect())
    }
}

/// Min-max normalization within one pool. A pool where every score is the
/// same maps to 0.5 throughout.
pub fn normalize_pool_scores(raw: &[f64]) -> Result<Vec<f64>> {
    if raw.is_empty() {
        return Err(Error::Empty("pool scores"));
    }
    let (lo, hi) = raw
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;
    if range > 0.0 {
        Ok(raw.iter().map(|&x| (x - lo) / range).collect())
    } else {
        Ok(vec![0.5; raw.len()])
    }
}

/// Sample Pearson correlation.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch {
            left: xs.len(),
            right: ys.len(),
        });
    }
    if xs.len() < 2 {
        return Err(Error::UndefinedCorrelation);
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean over metrics of the percentage improvement of `system` over the
/// baseline value for the same metric. Callers pass, per metric, the best
/// value among the compared baselines (see [`best_per_metric`]).
pub fn mean_relative_gain(
    system: &BTreeMap<String, f64>,
    baselines: &BTreeMap<String, f64>,
) -> Result<f64> {
    if system.is_empty() {
        return Err(Error::Empty("gain metrics"));
    }
    if system.len() != baselines.len() {
        return Err(Error::LengthMismatch {
            left: system.len(),
            right: baselines.len(),
        });
    }
    let mut total = 0.0;
    for (metric, &value) in system {
        let base = *baselines.get(metric).ok_or_else(|| Error::UnknownMetric {
            name: metric.clone(),
            registered: baselines.keys().cloned().collect(),
        })?;
        if base <= 0.0 {
            return Err(Error::NonPositiveBaseline {
                metric: metric.clone(),
                value: base,
            });
        }
        total += 100.0 * (value / base - 1.0);
    }
    Ok(total / system.len() as f64)
}

/// Per-metric maximum across several baseline systems.
pub fn best_per_metric<'a, I>(baselines: I) -> BTreeMap<String, f64>
where
    I: IntoIterator<Item = &'a BTreeMap<String, f64>>,
{
    let mut best: BTreeMap<String, f64> = BTreeMap::new();
    for row in baselines {
        for (metric, &value) in row {
            best.entry(metric.clone())
                .and_modify(|b| *b = b.max(value))
                .or_insert(value);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn map(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(normalize_pool_scores(&[10.0, 20.0, 30.0]).unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(normalize_pool_scores(&[5.0, 5.0, 5.0]).unwrap(), vec![0.5; 3]);
        assert_eq!(normalize_pool_scores(&[0.2, 0.8]).unwrap(), vec![0.0, 1.0]);
        assert!(matches!(normalize_pool_scores(&[]), Err(Error::Empty(_))));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 3.0];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[-1.0, -2.0, -3.0]).unwrap() + 1.0).abs() < 1e-15);
        assert!((pearson(&x, &[1.0, 3.0, 2.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[2.0, 2.0, 2.0]), Err(Error::UndefinedCorrelation)));
        assert!(matches!(pearson(&x, &[1.0]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn gain_examples() {
        let base = map(&[("rouge1", 44.56), ("rouge2", 21.48), ("rougeL", 41.58)]);
        assert_eq!(mean_relative_gain(&base, &base).unwrap(), 0.0);
        let sys = map(&[("rouge1", 47.16), ("rouge2", 22.55), ("rougeL", 43.87)]);
        let g = mean_relative_gain(&sys, &base).unwrap();
        assert!((g - 5.44).abs() < 0.005, "{g}");
        let g = mean_relative_gain(&map(&[("m", 4.0)]), &map(&[("m", 2.0)])).unwrap();
        assert!((g - 100.0).abs() < 1e-12);
        assert!(matches!(
            mean_relative_gain(&map(&[("m", 4.0)]), &map(&[("m", 0.0)])),
            Err(Error::NonPositiveBaseline { .. })
        ));
    }

    #[test]
    fn best_per_metric_takes_columnwise_max() {
        let beam = map(&[("rouge1", 44.23), ("rouge2", 21.48), ("rougeL", 41.21)]);
        let dbs = map(&[("rouge1", 44.56), ("rouge2", 20.90), ("rougeL", 41.58)]);
        let best = best_per_metric([&beam, &dbs]);
        assert_eq!(best, map(&[("rouge1", 44.56), ("rouge2", 21.48), ("rougeL", 41.58)]));
    }

    #[test]
    fn registry_rules() {
        let mut reg = MetricRegistry::native();
        reg.register_external("bertscore").unwrap();
        assert_eq!(reg.names(), vec!["rouge1", "rouge2", "rougeL", "bertscore"]);
        assert!(matches!(reg.register_external("rouge1"), Err(Error::DuplicateMetric(_))));
        assert!(matches!(reg.register_external("bertscore"), Err(Error::DuplicateMetric(_))));
        let mut empty = MetricRegistry::empty();
        assert!(matches!(empty.register_external("rougeL"), Err(Error::DuplicateMetric(_))));
        match reg.resolve("meteor") {
            Err(Error::UnknownMetric { registered, .. }) => assert_eq!(registered.len(), 4),
            other => panic!("{other:?}"),
        }
        assert_eq!(reg.externals().count(), 1);
    }

    proptest! {
        #[test]
        fn normalized_scores_in_unit_interval(raw in proptest::collection::vec(-100.0f64..100.0, 1..20)) {
            let norm = normalize_pool_scores(&raw).unwrap();
            prop_assert!(norm.iter().all(|&x| (0.0..=1.0).contains(&x)));
            let argmax = |v: &[f64]| v.iter().enumerate().fold(0, |b, (i, &x)| if x > v[b] { i } else { b });
            let (lo, hi) = raw.iter().fold((f64::MAX, f64::MIN), |(l, h), &x| (l.min(x), h.max(x)));
            if hi > lo {
                prop_assert_eq!(argmax(&norm), argmax(&raw));
            }
        }

        #[test]
        fn pearson_affine_invariant(
            xs in proptest::collection::vec(-10.0f64..10.0, 3..30),
            noise in proptest::collection::vec(-10.0f64..10.0, 30),
            scale in 0.1f64..10.0,
            shift in -5.0f64..5.0,
        ) {
            let ys: Vec<f64> = xs.iter().zip(&noise).map(|(x, e)| x + e).collect();
            if let Ok(r) = pearson(&xs, &ys) {
                let xs2: Vec<f64> = xs.iter().map(|x| scale * x + shift).collect();
                let r2 = pearson(&xs2, &ys).unwrap();
                prop_assert!((r - r2).abs() < 1e-12);
            }
        }
    }
}
