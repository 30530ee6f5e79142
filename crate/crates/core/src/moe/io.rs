//! Binary model file.
//!
//! Layout (little endian):
//!
//! ```text
//! magic     8 bytes  "PRMODEL\0"
//! version   u32
//! hlen      u32      length of the JSON header
//! header    hlen     {"config", "metrics", "train_methods", "tensors": [{"name", "shape"}]}
//! tensors   f64...   row-major, in header order
//! checksum  32 bytes SHA-256 of everything above
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelConfig, Params, RerankerModel};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PRMODEL\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: ModelConfig,
    metrics: Vec<String>,
    train_methods: Vec<String>,
    tensors: Vec<TensorEntry>,
}

#[derive(Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

pub fn write_model(model: &RerankerModel) -> Result<Vec<u8>> {
    let header = Header {
        config: model.config.clone(),
        metrics: model.metrics.clone(),
        train_methods: model.train_methods.clone(),
        tensors: model
            .params
            .specs()
            .into_iter()
            .map(|s| TensorEntry {
                name: s.name,
                shape: s.shape,
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 8 * model.params.num_values() + DIGEST_LEN);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u32).to_le_bytes());
    buf.extend_from_slice(&json);
    for t in model.params.tensors() {
        for x in t {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest[..]);
    Ok(buf)
}

pub fn read_model(bytes: &[u8]) -> Result<RerankerModel> {
    if bytes.len() < MAGIC.len() + 8 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::ModelFormat("not a model file".into()));
    }
    let (body, stored) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body)[..] != *stored {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(Error::ModelFormat(format!(
            "unsupported version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes(body[12..16].try_into().unwrap()) as usize;
    let data_start = 16 + hlen;
    if body.len() < data_start {
        return Err(Error::ModelFormat("header runs past end of file".into()));
    }
    let header: Header = serde_json::from_slice(&body[16..data_start])
        .map_err(|e| Error::ModelFormat(format!("bad header: {e}")))?;
    header.config.validate()?;
    if header.metrics.len() != header.config.num_tasks {
        return Err(Error::ModelFormat(format!(
            "{} metrics for {} tasks",
            header.metrics.len(),
            header.config.num_tasks
        )));
    }
    let mut params = Params::zeros(&header.config);
    let expected: Vec<TensorEntry> = params
        .specs()
        .into_iter()
        .map(|s| TensorEntry {
            name: s.name,
            shape: s.shape,
        })
        .collect();
    if expected != header.tensors {
        return Err(Error::ModelFormat("tensor layout does not match the configuration".into()));
    }
    let data = &body[data_start..];
    if data.len() != 8 * params.num_values() {
        return Err(Error::ModelFormat(format!(
            "expected {} parameter bytes, found {}",
            8 * params.num_values(),
            data.len()
        )));
    }
    let mut values = data.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    for t in params.tensors_mut() {
        for x in t.iter_mut() {
            *x = values.next().unwrap();
        }
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("stored parameters".into()));
    }
    Ok(RerankerModel {
        config: header.config,
        metrics: header.metrics,
        train_methods: header.train_methods,
        params,
    })
}

pub fn save_model(path: impl AsRef<Path>, model: &RerankerModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_model(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<RerankerModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_model(&bytes)
}
