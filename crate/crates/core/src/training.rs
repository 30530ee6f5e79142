//! Training loop, checkpoint selection and the half-split data protocol.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::candidates::{merge_pools, sample_training_candidates, Dataset, LabelScope};
use crate::error::{Error, Result};
use crate::evaluation::{rerank_dataset, summed_selected_score};
use crate::features::FeatureStore;
use crate::metrics::MetricId;
use crate::moe::{
    init_model, optimizer_step, sample_expert_mask, AdamState, ModelConfig, RerankerModel, Schedule, TrainItem,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    /// Examples per optimizer step.
    pub batch_size: usize,
    pub m_top: usize,
    pub m_bottom: usize,
    pub train_methods: Vec<String>,
    pub metrics: Vec<String>,
    pub warmup_fraction: f64,
    pub peak_lr: f64,
    pub seed: u64,
    pub label_scope: LabelScope,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch_size: 32,
            m_top: 1,
            m_bottom: 1,
            train_methods: Vec::new(),
            metrics: Vec::new(),
            warmup_fraction: 0.05,
            peak_lr: 1e-3,
            seed: 0,
            label_scope: LabelScope::Subset,
        }
    }
}

impl TrainConfig {
    pub fn metric_ids(&self) -> Vec<MetricId> {
        self.metrics.iter().map(MetricId::new).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.metrics.is_empty() {
            return Err(Error::InvalidArgument("metric set is empty".into()));
        }
        if self.train_methods.is_empty() {
            return Err(Error::InvalidArgument("training method set is empty".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        if !(self.peak_lr > 0.0 && self.peak_lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad learning rate {}", self.peak_lr)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::InvalidArgument(format!("bad warmup fraction {}", self.warmup_fraction)));
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// SplitMix64 finalizer over a (seed, stream) pair.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed.wrapping_add(stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_SHUFFLE: u64 = 1 << 32;
const STREAM_MASKS: u64 = 2 << 32;

/// One sampled candidate of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct PairItem {
    pub candidate: usize,
    pub features: Vec<f64>,
    pub labels: Vec<f64>,
}

/// The sampled candidates of one example.
#[derive(Debug, Clone, PartialEq)]
pub struct ExamplePairs {
    pub example: usize,
    pub items: Vec<PairItem>,
}

/// Samples the head and tail of every merged training pool and attaches
/// features and per-metric labels.
pub fn build_training_pairs(dataset: &Dataset, features: &FeatureStore, config: &TrainConfig) -> Result<Vec<ExamplePairs>> {
    config.validate()?;
    let metrics = config.metric_ids();
    dataset
        .examples
        .par_iter()
        .enumerate()
        .map(|(e, ex)| {
            let pool = merge_pools(ex, &config.train_methods)?;
            let sampled = sample_training_candidates(&pool, config.m_top, config.m_bottom, &metrics, config.label_scope)?;
            let items = sampled
                .positions
                .iter()
                .zip(sampled.labels)
                .map(|(&p, labels)| {
                    let entry = &pool.entries[p];
                    if !config.train_methods.contains(&entry.candidate.method) {
                        return Err(Error::InvalidArgument(format!(
                            "candidate {} of {:?} uses method {:?} outside the training set",
                            entry.index, ex.id, entry.candidate.method
                        )));
                    }
                    Ok(PairItem {
                        candidate: entry.index,
                        features: features.get(&ex.id, entry.index)?.to_vec(),
                        labels,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(ExamplePairs { example: e, items })
        })
        .collect()
}

/// Example visiting order of `epoch` (counted from 1).
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, STREAM_SHUFFLE + epoch as u64)));
    order
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// 0 for the untrained model, otherwise the number of completed epochs.
    pub epoch: usize,
    pub validation_score: f64,
    pub model: RerankerModel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub checkpoints: Vec<Checkpoint>,
    /// Index into `checkpoints` of the highest validation score, earliest on ties.
    pub best: usize,
    /// Mean training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainOutcome {
    pub fn best_checkpoint(&self) -> &Checkpoint {
        &self.checkpoints[self.best]
    }
}

fn validation_score(model: &RerankerModel, val: &Dataset, features: &FeatureStore, metrics: &[MetricId]) -> Result<f64> {
    let outcomes = rerank_dataset(model, val, &model.train_methods, features)?;
    let score = summed_selected_score(&outcomes, metrics)?;
    if !score.is_finite() {
        return Err(Error::NonFinite("validation score".into()));
    }
    Ok(score)
}

/// Trains from a fresh initialization and keeps one checkpoint per epoch.
/// With zero epochs the untrained model is the only checkpoint.
pub fn train(
    train_set: &Dataset,
    train_features: &FeatureStore,
    val_set: &Dataset,
    val_features: &FeatureStore,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    if model_config.num_tasks != config.metrics.len() {
        return Err(Error::InvalidArgument(format!(
            "model has {} tasks but {} metrics are configured",
            model_config.num_tasks,
            config.metrics.len()
        )));
    }
    train_features.check_dim(model_config.input_dim)?;
    val_features.check_dim(model_config.input_dim)?;
    let metrics = config.metric_ids();
    let pairs = build_training_pairs(train_set, train_features, config)?;
    let mut model = init_model(model_config, config.metrics.clone(), config.train_methods.clone())?;

    if config.epochs == 0 {
        let score = validation_score(&model, val_set, val_features, &metrics)?;
        return Ok(TrainOutcome {
            checkpoints: vec![Checkpoint {
                epoch: 0,
                validation_score: score,
                model,
            }],
            best: 0,
            epoch_losses: Vec::new(),
        });
    }

    let steps_per_epoch = pairs.len().div_ceil(config.batch_size);
    let schedule = Schedule::from_fraction(config.peak_lr, config.warmup_fraction, steps_per_epoch * config.epochs);
    let mut adam = AdamState::new(&model.params, schedule);
    let mut mask_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, STREAM_MASKS));
    let (num_experts, dropout) = (model.num_experts(), model.config.expert_dropout);

    let mut checkpoints = Vec::with_capacity(config.epochs);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let order = epoch_order(pairs.len(), config.seed, epoch);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let items: Vec<TrainItem> = batch
                .iter()
                .flat_map(|&e| pairs[e].items.iter())
                .map(|it| TrainItem {
                    features: &it.features,
                    labels: &it.labels,
                })
                .collect();
            let masks = items
                .iter()
                .map(|_| sample_expert_mask(num_experts, dropout, &mut mask_rng))
                .collect::<Result<Vec<_>>>()?;
            let (loss, grads) = model.batch_gradients(&items, Some(&masks))?;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss in epoch {epoch}")));
            }
            optimizer_step(&mut model, &grads, &mut adam)?;
            loss_sum += loss;
        }
        let mean_loss = loss_sum / steps_per_epoch as f64;
        let score = validation_score(&model, val_set, val_features, &metrics)?;
        log::info!("epoch {epoch}: loss {mean_loss:.5}, validation {score:.5}");
        epoch_losses.push(mean_loss);
        checkpoints.push(Checkpoint {
            epoch,
            validation_score: score,
            model: model.clone(),
        });
    }
    let best = select_best(&checkpoints);
    Ok(TrainOutcome {
        checkpoints,
        best,
        epoch_losses,
    })
}

/// Highest validation score, earliest checkpoint on ties.
pub fn select_best(checkpoints: &[Checkpoint]) -> usize {
    let mut best = 0;
    for (i, c) in checkpoints.iter().enumerate() {
        if c.validation_score > checkpoints[best].validation_score {
            best = i;
        }
    }
    best
}

/// Record of a half split and of where each half's candidates came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub split_seed: u64,
    pub half_a: Vec<String>,
    pub half_b: Vec<String>,
    /// Free-text description of the model that generated half A's
    /// candidates; it must have been trained on half B.
    #[serde(default)]
    pub generator_a: Option<String>,
    #[serde(default)]
    pub generator_b: Option<String>,
    #[serde(default)]
    pub config_hash: Option<String>,
}

impl SplitManifest {
    /// Splits `dataset` into halves and records the memberships; generator
    /// fields are left for the user to fill in.
    pub fn split(dataset: &Dataset, seed: u64) -> Result<(SplitManifest, Dataset, Dataset)> {
        let (a, b) = crate::candidates::half_split(dataset, seed)?;
        let manifest = SplitManifest {
            split_seed: seed,
            half_a: a.ids().map(str::to_string).collect(),
            half_b: b.ids().map(str::to_string).collect(),
            generator_a: None,
            generator_b: None,
            config_hash: None,
        };
        Ok((manifest, a, b))
    }
}

/// Joins the cross-inferred halves into one training set after checking
/// provenance and that no example leaks across halves.
pub fn merge_cross_inferred(manifest: &SplitManifest, half_a: &Dataset, half_b: &Dataset) -> Result<Dataset> {
    for (name, generator) in [("generator_a", &manifest.generator_a), ("generator_b", &manifest.generator_b)] {
        if generator.as_deref().is_none_or(|g| g.trim().is_empty()) {
            return Err(Error::Provenance(format!("manifest field {name:?} is missing")));
        }
    }
    let members_a: HashSet<&str> = manifest.half_a.iter().map(String::as_str).collect();
    let members_b: HashSet<&str> = manifest.half_b.iter().map(String::as_str).collect();
    if let Some(id) = members_a.intersection(&members_b).next() {
        return Err(Error::Leakage(format!("id {id:?} is listed in both halves")));
    }
    let ids_a: HashSet<&str> = half_a.ids().collect();
    if let Some(id) = half_b.ids().find(|id| ids_a.contains(id)) {
        return Err(Error::Leakage(format!("id {id:?} appears in both candidate files")));
    }
    for (ds, members, own, other) in [(half_a, &members_a, "A", &members_b), (half_b, &members_b, "B", &members_a)] {
        for id in ds.ids() {
            if other.contains(id) {
                return Err(Error::Leakage(format!("id {id:?} of half {own} belongs to the other half")));
            }
            if !members.contains(id) {
                return Err(Error::Provenance(format!("id {id:?} of half {own} is not in the manifest")));
            }
        }
    }
    let mut examples = half_a.examples.clone();
    examples.extend(half_b.examples.iter().cloned());
    Ok(Dataset::new(examples))
}

/// Merges the cross-inferred halves, featurizes with `featurize`, and
/// trains on the result.
pub fn run_half_split_protocol<F>(
    manifest: &SplitManifest,
    half_a: &Dataset,
    half_b: &Dataset,
    val_set: &Dataset,
    featurize: F,
    model_config: ModelConfig,
    config: &TrainConfig,
) -> Result<(Dataset, TrainOutcome)>
where
    F: Fn(&Dataset) -> Result<FeatureStore>,
{
    let merged = merge_cross_inferred(manifest, half_a, half_b)?;
    let train_features = featurize(&merged)?;
    let val_features = featurize(val_set)?;
    let outcome = train(&merged, &train_features, val_set, &val_features, model_config, config)?;
    Ok((merged, outcome))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::candidates::{Candidate, CandidateExample};

    fn tiny(id: &str) -> CandidateExample {
        CandidateExample {
            id: id.into(),
            source: "a b c".into(),
            reference: "a b".into(),
            candidates: vec![Candidate {
                text: "a".into(),
                method: "beam".into(),
                scores: [("rouge1", 0.5)].into_iter().collect(),
                features: None,
            }],
        }
    }

    fn manifest() -> SplitManifest {
        SplitManifest {
            split_seed: 1,
            half_a: vec!["a1".into(), "a2".into()],
            half_b: vec!["b1".into()],
            generator_a: Some("model trained on B".into()),
            generator_b: Some("model trained on A".into()),
            config_hash: None,
        }
    }

    #[test]
    fn merge_union_and_errors() {
        let a = Dataset::new(vec![tiny("a1"), tiny("a2")]);
        let b = Dataset::new(vec![tiny("b1")]);
        assert_eq!(merge_cross_inferred(&manifest(), &a, &b).unwrap().len(), 3);

        let leaky = Dataset::new(vec![tiny("a1")]);
        assert!(matches!(merge_cross_inferred(&manifest(), &a, &leaky), Err(Error::Leakage(_))));

        let mut m = manifest();
        m.generator_b = None;
        assert!(matches!(merge_cross_inferred(&m, &a, &b), Err(Error::Provenance(_))));
        m.generator_b = Some("  ".into());
        assert!(matches!(merge_cross_inferred(&m, &a, &b), Err(Error::Provenance(_))));

        let stray = Dataset::new(vec![tiny("zz")]);
        assert!(matches!(merge_cross_inferred(&manifest(), &a, &stray), Err(Error::Provenance(_))));
    }

    #[test]
    fn manifest_json_requires_known_fields() {
        let text = r#"{"split_seed": 1, "half_a": [], "half_b": [], "extra": 1}"#;
        assert!(serde_json::from_str::<SplitManifest>(text).is_err());
        let text = r#"{"split_seed": 1, "half_a": ["x"], "half_b": ["y"]}"#;
        let m: SplitManifest = serde_json::from_str(text).unwrap();
        assert!(m.generator_a.is_none());
    }

    #[test]
    fn split_manifest_partitions_ids() {
        let ds = Dataset::new((0..7).map(|i| tiny(&format!("e{i}"))).collect());
        let (m, a, b) = SplitManifest::split(&ds, 3).unwrap();
        assert_eq!((a.len(), b.len()), (4, 3));
        assert_eq!(m.half_a.len() + m.half_b.len(), 7);
        assert!(m.half_a.iter().all(|id| !m.half_b.contains(id)));
    }

    #[test]
    fn epoch_orders_are_seeded_permutations() {
        let a = epoch_order(50, 9, 1);
        assert_eq!(a, epoch_order(50, 9, 1));
        assert_ne!(a, epoch_order(50, 9, 2));
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..50).collect::<Vec<_>>());
    }

    #[test]
    fn selection_prefers_earliest_max() {
        let model = init_model(ModelConfig::new(2, 1), vec!["m".into()], vec![]).unwrap();
        let ck = |epoch, s| Checkpoint {
            epoch,
            validation_score: s,
            model: model.clone(),
        };
        assert_eq!(select_best(&[ck(1, 0.3), ck(2, 0.5), ck(3, 0.5), ck(4, 0.1)]), 1);
        assert_eq!(select_best(&[ck(0, 0.2)]), 0);
    }

    #[test]
    fn config_defaults_and_hash() {
        let c = TrainConfig::default();
        assert_eq!((c.epochs, c.batch_size, c.m_top, c.m_bottom), (5, 32, 1, 1));
        assert_eq!(c.hash().len(), 64);
        let mut d = c.clone();
        d.seed = 1;
        assert_ne!(c.hash(), d.hash());
        assert!(c.validate().is_err());
    }
}
