//! Seeded synthetic candidate pools for smoke tests and demos.
//!
//! Each example has a pseudo-word source document, a reference built mostly
//! from source tokens, and candidates that copy each reference position with
//! a per-candidate probability. Candidates carry inline features: the
//! lexical features followed by one noisy signal feature whose correlation
//! with the summed normalized metric score is set by `signal_correlation`.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::candidates::{merge_pools, score_native, Candidate, CandidateExample, Dataset};
use crate::error::{Error, Result};
use crate::features::{extract_lexical, LexicalOptions};
use crate::metrics::{pearson, MetricId, MetricRegistry};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub examples: usize,
    pub candidates: usize,
    pub source_len: usize,
    pub summary_len: usize,
    pub vocab: usize,
    pub methods: Vec<String>,
    pub signal_correlation: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            examples: 100,
            candidates: 8,
            source_len: 50,
            summary_len: 14,
            vocab: 300,
            methods: vec!["beam".into(), "sampling".into()],
            signal_correlation: 0.9,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub dataset: Dataset,
    /// Measured Pearson r between the signal feature and the summed
    /// normalized score, over all candidates.
    pub signal_correlation: f64,
}

fn pseudo_word(mut i: usize) -> String {
    const ONSETS: &[&str] = &["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
    const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];
    let mut w = String::new();
    loop {
        w.push_str(ONSETS[i % ONSETS.len()]);
        i /= ONSETS.len();
        w.push_str(NUCLEI[i % NUCLEI.len()]);
        i /= NUCLEI.len();
        if i == 0 {
            return w;
        }
    }
}

pub fn generate(config: &SyntheticConfig) -> Result<SyntheticSet> {
    if config.examples == 0 || config.candidates < 2 || config.methods.is_empty() {
        return Err(Error::InvalidArgument(format!("degenerate synthetic config {config:?}")));
    }
    if !(0.0 < config.signal_correlation && config.signal_correlation <= 1.0) {
        return Err(Error::InvalidArgument("signal correlation must lie in (0, 1]".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let vocab: Vec<String> = (0..config.vocab.max(2)).map(pseudo_word).collect();
    let per_method = config.candidates.div_ceil(config.methods.len());
    let mut examples = Vec::with_capacity(config.examples);
    for e in 0..config.examples {
        let source: Vec<&str> = (0..config.source_len)
            .map(|_| vocab.choose(&mut rng).unwrap().as_str())
            .collect();
        let reference: Vec<&str> = (0..config.summary_len)
            .map(|_| {
                if rng.random_bool(0.7) {
                    *source.choose(&mut rng).unwrap()
                } else {
                    vocab.choose(&mut rng).unwrap().as_str()
                }
            })
            .collect();
        let candidates = (0..config.candidates)
            .map(|c| {
                let quality: f64 = rng.random();
                let text: Vec<&str> = reference
                    .iter()
                    .map(|&r| if rng.random_bool(quality) { r } else { *source.choose(&mut rng).unwrap() })
                    .collect();
                Candidate {
                    text: text.join(" "),
                    method: config.methods[(c / per_method).min(config.methods.len() - 1)].clone(),
                    scores: Default::default(),
                    features: None,
                }
            })
            .collect();
        examples.push(CandidateExample {
            id: format!("syn-{e:06}"),
            source: source.join(" "),
            reference: reference.join(" "),
            candidates,
        });
    }
    let mut dataset = Dataset::new(examples);
    let registry = MetricRegistry::native();
    score_native(&mut dataset, &registry, true);

    let metrics: Vec<MetricId> = registry.iter().cloned().collect();
    let mut sums = Vec::new();
    for ex in &dataset.examples {
        let pool = merge_pools(ex, &config.methods)?;
        let s = pool.summed_normalized(&metrics)?;
        let mut by_index = vec![0.0; ex.candidates.len()];
        for (entry, v) in pool.entries.iter().zip(s) {
            by_index[entry.index] = v;
        }
        sums.push(by_index);
    }
    let flat: Vec<f64> = sums.iter().flatten().copied().collect();
    let mean = flat.iter().sum::<f64>() / flat.len() as f64;
    let sd = (flat.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / flat.len() as f64).sqrt();
    let rho = config.signal_correlation;
    let sigma = sd * (1.0 / (rho * rho) - 1.0).sqrt();
    let noise = Normal::new(0.0, sigma.max(0.0)).map_err(|e| Error::InvalidArgument(e.to_string()))?;

    let options = LexicalOptions::default();
    let mut signals = Vec::with_capacity(flat.len());
    for (ex, s) in dataset.examples.iter_mut().zip(&sums) {
        for (cand, &target) in ex.candidates.iter_mut().zip(s) {
            let signal = target + noise.sample(&mut rng);
            let mut f = extract_lexical(&ex.source, &cand.text, &options);
            f.push(signal);
            cand.features = Some(f);
            signals.push(signal);
        }
    }
    let signal_correlation = pearson(&signals, &flat)?;
    Ok(SyntheticSet {
        dataset,
        signal_correlation,
    })
}
