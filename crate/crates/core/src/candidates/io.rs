//! Line-delimited JSON persistence for candidate datasets.
//!
//! One example per line:
//!
//! ```text
//! {"id": "...", "source": "...", "reference": "...",
//!  "candidates": [{"text": "...", "method": "beam", "scores": {"rouge1": 0.4}, "features": [0.1, 0.2]}]}
//! ```
//!
//! `scores` and `features` are optional. Unknown fields are an error in
//! strict mode and a warning otherwise.

use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Deserialize;
use serde_json::Value;

use super::{Candidate, CandidateExample, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{MetricRegistry, NativeMetric, ScoreVector};
use crate::textproc::{tokenize, TokenizerConfig};

#[derive(Debug, Clone)]
pub struct LoadOptions {
    pub registry: MetricRegistry,
    /// Allowed decoding methods; `None` accepts any tag.
    pub methods: Option<Vec<String>>,
    pub strict: bool,
}

impl LoadOptions {
    pub fn new(registry: MetricRegistry) -> Self {
        LoadOptions {
            registry,
            methods: None,
            strict: false,
        }
    }

    pub fn with_methods<S: AsRef<str>>(mut self, methods: &[S]) -> Self {
        self.methods = Some(methods.iter().map(|m| m.as_ref().to_string()).collect());
        self
    }

    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }
}

#[derive(Deserialize)]
struct RawExample {
    id: String,
    source: String,
    reference: String,
    candidates: Vec<RawCandidate>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

#[derive(Deserialize)]
struct RawCandidate {
    text: String,
    method: String,
    #[serde(default)]
    scores: ScoreVector,
    #[serde(default)]
    features: Option<Vec<f64>>,
    #[serde(flatten)]
    extra: BTreeMap<String, Value>,
}

pub fn load_dataset(path: impl AsRef<Path>, options: &LoadOptions) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path, options)
}

/// Parses a dataset from any buffered reader; `origin` is only used in
/// error messages.
pub fn read_dataset<R: BufRead>(reader: R, origin: &Path, options: &LoadOptions) -> Result<Dataset> {
    let mut examples = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in reader.lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawExample = serde_json::from_str(&line).map_err(|e| Error::MalformedLine {
            path: origin.to_path_buf(),
            line: lineno,
            message: e.to_string(),
        })?;
        let example = validate(raw, lineno, origin, options)?;
        if !seen.insert(example.id.clone()) {
            return Err(Error::DuplicateId {
                line: lineno,
                id: example.id,
            });
        }
        examples.push(example);
    }
    Ok(Dataset { examples })
}

fn check_extra(
    extra: &BTreeMap<String, Value>,
    what: &str,
    lineno: usize,
    origin: &Path,
    strict: bool,
) -> Result<()> {
    if extra.is_empty() {
        return Ok(());
    }
    let keys: Vec<&str> = extra.keys().map(String::as_str).collect();
    if strict {
        return Err(Error::MalformedLine {
            path: origin.to_path_buf(),
            line: lineno,
            message: format!("unknown {what} fields {keys:?}"),
        });
    }
    log::warn!("{}:{lineno}: ignoring unknown {what} fields {keys:?}", origin.display());
    Ok(())
}

fn validate(raw: RawExample, lineno: usize, origin: &Path, options: &LoadOptions) -> Result<CandidateExample> {
    check_extra(&raw.extra, "example", lineno, origin, options.strict)?;
    let reference_tokens = tokenize(&raw.reference, TokenizerConfig::ROUGE);
    let mut candidates = Vec::with_capacity(raw.candidates.len());
    for (idx, rc) in raw.candidates.into_iter().enumerate() {
        check_extra(&rc.extra, "candidate", lineno, origin, options.strict)?;
        if let Some(allowed) = &options.methods {
            if !allowed.contains(&rc.method) {
                return Err(Error::UnknownMethod {
                    line: lineno,
                    candidate: idx,
                    method: rc.method,
                    allowed: allowed.clone(),
                });
            }
        }
        if let Some(f) = &rc.features {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("features of {:?} candidate {idx}", raw.id)));
            }
        }
        let mut scores = rc.scores;
        let mut cand_tokens = None;
        for metric in options.registry.iter() {
            if scores.contains(metric.as_str()) {
                continue;
            }
            match metric.native() {
                Some(native) => {
                    let tokens =
                        cand_tokens.get_or_insert_with(|| tokenize(&rc.text, TokenizerConfig::ROUGE));
                    scores.insert(metric.as_str(), native.score_tokens(tokens, &reference_tokens).f1);
                }
                None => {
                    return Err(Error::MissingScore {
                        line: lineno,
                        id: raw.id.clone(),
                        candidate: idx,
                        metric: metric.to_string(),
                    })
                }
            }
        }
        candidates.push(Candidate {
            text: rc.text,
            method: rc.method,
            scores,
            features: rc.features,
        });
    }
    Ok(CandidateExample {
        id: raw.id,
        source: raw.source,
        reference: raw.reference,
        candidates,
    })
}

pub fn save_dataset(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_dataset(&mut w, dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dataset<W: Write>(w: &mut W, dataset: &Dataset) -> Result<()> {
    for example in &dataset.examples {
        serde_json::to_writer(&mut *w, example)?;
        w.write_all(b"\n").map_err(|e| Error::io("<dataset writer>", e))?;
    }
    Ok(())
}

/// Recomputes the native ROUGE scores named in `registry`. With
/// `overwrite == false` only absent scores are filled in.
pub fn score_native(dataset: &mut Dataset, registry: &MetricRegistry, overwrite: bool) {
    let natives: Vec<NativeMetric> = registry.iter().filter_map(|m| m.native()).collect();
    for example in &mut dataset.examples {
        let reference = tokenize(&example.reference, TokenizerConfig::ROUGE);
        for cand in &mut example.candidates {
            let tokens = tokenize(&cand.text, TokenizerConfig::ROUGE);
            for native in &natives {
                if overwrite || !cand.scores.contains(native.name()) {
                    cand.scores
                        .insert(native.name(), native.score_tokens(&tokens, &reference).f1);
                }
            }
        }
    }
}
