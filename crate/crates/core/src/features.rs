//! Fixed-size representations of a (source, candidate) pair.
//!
//! The re-ranker only needs a deterministic map from the pair to a real
//! vector. Three sources are supported: built-in lexical features, vectors
//! stored inline on each candidate of the dataset file, and a separate
//! precomputed-features file (one `{"id", "index", "vector"}` record per
//! line) for embeddings exported from an external encoder.
//!
//! Lexical feature layout (every value lies in [0, 1]):
//!
//! | index | feature |
//! |------:|---------|
//! | 0 | candidate/source token-length ratio, capped at 1 |
//! | 1 | candidate length, capped at `length_cap` and scaled |
//! | 2-4 | clipped n-gram overlap precision against the source, n = 1..3 |
//! | 5-7 | clipped n-gram overlap recall against the source, n = 1..3 |
//! | 8-10 | novel n-gram fraction, n = 1..3 (0 when the candidate is shorter than n) |
//! | 11 | LCS with the source divided by candidate length |
//! | 12 | distinct candidate tokens divided by candidate length |
//! | 13 | unigram overlap precision on stemmed tokens |
//! | 14 | share of candidate tokens present in the source lead (first 64 tokens) |
//! | 15 | longest contiguous span copied from the source divided by candidate length |

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidates::Dataset;
use crate::error::{Error, Result};
use crate::metrics::lcs_len;
use crate::textproc::{ngrams, novel_ngram_fraction, tokenize, TokenizerConfig};

pub const LEXICAL_DIM: usize = 16;
const LEAD_TOKENS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    Lexical,
    /// Vectors carried in each candidate's `features` field.
    Inline,
    /// Vectors in a separate file.
    Precomputed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LexicalOptions {
    /// Source tokens beyond this are dropped before any feature is computed.
    pub source_token_cap: usize,
    pub length_cap: usize,
}

impl Default for LexicalOptions {
    fn default() -> Self {
        LexicalOptions {
            source_token_cap: 512,
            length_cap: 128,
        }
    }
}

pub fn extract_lexical(source: &str, candidate: &str, options: &LexicalOptions) -> Vec<f64> {
    let mut src = tokenize(source, TokenizerConfig::SURFACE);
    src.truncate(options.source_token_cap);
    let cand = tokenize(candidate, TokenizerConfig::SURFACE);
    lexical_from_tokens(&src, &cand, options)
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        (num as f64 / den as f64).min(1.0)
    }
}

fn lexical_from_tokens(src: &[String], cand: &[String], options: &LexicalOptions) -> Vec<f64> {
    let mut v = vec![0.0; LEXICAL_DIM];
    if cand.is_empty() {
        return v;
    }
    let len = cand.len();
    v[0] = ratio(len, src.len());
    v[1] = ratio(len.min(options.length_cap), options.length_cap);
    for n in 1..=3 {
        // n >= 1 so ngrams cannot fail.
        let c = ngrams(cand, n).expect("n >= 1");
        let s = ngrams(src, n).expect("n >= 1");
        let overlap = c.clipped_overlap(&s);
        v[1 + n] = ratio(overlap, c.total());
        v[4 + n] = ratio(overlap, s.total());
        v[7 + n] = novel_ngram_fraction(cand, src, n).unwrap_or(0.0);
    }
    v[11] = ratio(lcs_len(cand, src), len);
    v[12] = ratio(cand.iter().collect::<HashSet<_>>().len(), len);

    let stem = |t: &[String]| -> Vec<String> {
        tokenize(&t.join(" "), TokenizerConfig::ROUGE)
    };
    let (cs, ss) = (stem(cand), stem(src));
    let c1 = ngrams(&cs, 1).expect("n >= 1");
    v[13] = ratio(c1.clipped_overlap(&ngrams(&ss, 1).expect("n >= 1")), c1.total());

    let lead: HashSet<&String> = src.iter().take(LEAD_TOKENS).collect();
    v[14] = ratio(cand.iter().filter(|t| lead.contains(t)).count(), len);
    v[15] = ratio(longest_common_span(cand, src), len);
    v
}

fn longest_common_span(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    let mut best = 0;
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { 0 };
            best = best.max(cur[j + 1]);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    best
}

/// Feature vectors keyed by (example id, candidate index).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureStore {
    dim: usize,
    vectors: HashMap<(String, usize), Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeatureRecord {
    id: String,
    index: usize,
    vector: Vec<f64>,
}

impl FeatureStore {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: &str, index: usize) -> Result<&[f64]> {
        self.vectors
            .get(&(id.to_string(), index))
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingFeatures {
                id: id.to_string(),
                index,
            })
    }

    pub fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: self.dim,
            });
        }
        Ok(())
    }

    pub fn lexical(dataset: &Dataset, options: &LexicalOptions) -> Self {
        let vectors = dataset
            .examples
            .par_iter()
            .flat_map_iter(|ex| {
                let mut src = tokenize(&ex.source, TokenizerConfig::SURFACE);
                src.truncate(options.source_token_cap);
                ex.candidates
                    .iter()
                    .enumerate()
                    .map(|(i, c)| {
                        let cand = tokenize(&c.text, TokenizerConfig::SURFACE);
                        ((ex.id.clone(), i), lexical_from_tokens(&src, &cand, options))
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        FeatureStore {
            dim: LEXICAL_DIM,
            vectors,
        }
    }

    /// Collects the `features` arrays carried by the candidates themselves.
    pub fn inline(dataset: &Dataset) -> Result<Self> {
        let mut builder = Builder::default();
        for ex in &dataset.examples {
            for (i, c) in ex.candidates.iter().enumerate() {
                let v = c.features.as_ref().ok_or_else(|| Error::MissingFeatures {
                    id: ex.id.clone(),
                    index: i,
                })?;
                builder.insert(&ex.id, i, v.clone())?;
            }
        }
        Ok(builder.finish())
    }

    pub fn build(dataset: &Dataset, mode: FeatureMode, options: &LexicalOptions, path: Option<&Path>) -> Result<Self> {
        match mode {
            FeatureMode::Lexical => Ok(Self::lexical(dataset, options)),
            FeatureMode::Inline => Self::inline(dataset),
            FeatureMode::Precomputed => {
                let path = path.ok_or_else(|| {
                    Error::InvalidArgument("precomputed features need a file path".into())
                })?;
                load_precomputed(path, dataset)
            }
        }
    }
}

#[derive(Default)]
struct Builder {
    dim: Option<usize>,
    vectors: HashMap<(String, usize), Vec<f64>>,
}

impl Builder {
    fn insert(&mut self, id: &str, index: usize, v: Vec<f64>) -> Result<()> {
        let expected = *self.dim.get_or_insert(v.len());
        if v.len() != expected {
            return Err(Error::RaggedFeatures {
                expected,
                found: v.len(),
                id: id.to_string(),
                index,
            });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("feature vector of {id:?} candidate {index}")));
        }
        self.vectors.insert((id.to_string(), index), v);
        Ok(())
    }

    fn finish(self) -> FeatureStore {
        FeatureStore {
            dim: self.dim.unwrap_or(0),
            vectors: self.vectors,
        }
    }
}

/// Reads a precomputed-features file and checks it covers every candidate
/// of `dataset` with vectors of one common length.
pub fn load_precomputed(path: impl AsRef<Path>, dataset: &Dataset) -> Result<FeatureStore> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_precomputed(BufReader::new(file), path, dataset)
}

pub fn read_precomputed<R: BufRead>(reader: R, origin: &Path, dataset: &Dataset) -> Result<FeatureStore> {
    let mut builder = Builder::default();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeatureRecord = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: origin.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        builder.insert(&rec.id, rec.index, rec.vector)?;
    }
    for ex in &dataset.examples {
        for i in 0..ex.candidates.len() {
            if !builder.vectors.contains_key(&(ex.id.clone(), i)) {
                return Err(Error::MissingFeatures {
                    id: ex.id.clone(),
                    index: i,
                });
            }
        }
    }
    Ok(builder.finish())
}
