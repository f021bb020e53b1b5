//! `SETC` model checkpoints.
//!
//! Layout: the magic `SETC`, a little-endian `u32` format version, a `u32`
//! byte length followed by that many bytes of JSON metadata, then every entry
//! of the metadata's tensor table as little-endian `f32` values in table
//! order. The table lists trainable parameters followed by batch-norm running
//! statistics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use setrans_autodiff::{cast, Scalar};

use crate::model::{ModelConfig, SETransModel};
use crate::task::Task;
use crate::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SETC";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub task: Task,
    pub config: ModelConfig,
    pub seed: u64,
    /// Precision the model was trained in; the payload is always `f32`.
    pub trained_dtype: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone)]
pub struct Checkpoint<T: Scalar> {
    pub task: Task,
    pub seed: u64,
    pub model: SETransModel<T>,
}

const STAT_NAMES: [&str; 4] = [
    "block1.unit1.bn",
    "block1.unit2.bn",
    "block2.unit1.bn",
    "block2.unit2.bn",
];

/// Every stored tensor of `model`, in payload order, as `f64` values.
fn tensors<T: Scalar>(model: &SETransModel<T>) -> Vec<(TensorEntry, Vec<f64>)> {
    let mut out: Vec<(TensorEntry, Vec<f64>)> = model
        .params
        .iter()
        .map(|p| {
            (
                TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                },
                p.value.to_f64(),
            )
        })
        .collect();
    let to64 = |v: &[T]| v.iter().map(|x| x.to_f64().expect("finite scalar")).collect::<Vec<_>>();
    for (name, s) in STAT_NAMES.iter().zip(&model.stats) {
        for (suffix, values) in [("running_mean", &s.mean), ("running_var", &s.var)] {
            out.push((
                TensorEntry {
                    name: format!("{name}.{suffix}"),
                    shape: vec![values.len()],
                },
                to64(values),
            ));
        }
    }
    out
}

pub fn encode_checkpoint<T: Scalar>(model: &SETransModel<T>, task: Task, seed: u64) -> Result<Vec<u8>> {
    let entries = tensors(model);
    let meta = CheckpointMeta {
        task,
        config: model.config().clone(),
        seed,
        trained_dtype: T::DTYPE.name().to_string(),
        tensors: entries.iter().map(|(e, _)| e.clone()).collect(),
    };
    let json = serde_json::to_vec(&meta).map_err(|e| Error::Input(format!("checkpoint metadata: {e}")))?;
    let payload: usize = entries.iter().map(|(_, v)| v.len()).sum();
    let mut bytes = Vec::with_capacity(12 + json.len() + 4 * payload);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(json.len() as u32).to_le_bytes());
    bytes.extend_from_slice(&json);
    for (_, values) in &entries {
        for &v in values {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(bytes)
}

pub fn save_checkpoint<T: Scalar>(model: &SETransModel<T>, task: Task, seed: u64, path: &Path) -> Result<()> {
    super::write_atomic(path, &encode_checkpoint(model, task, seed)?)
}

fn corrupt(detail: impl Into<String>) -> Error {
    Error::Corrupt(detail.into())
}

/// Reads only the header and metadata.
pub fn decode_meta(bytes: &[u8]) -> Result<(CheckpointMeta, usize)> {
    if bytes.len() < 12 {
        return Err(corrupt(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let body = 12 + len;
    if bytes.len() < body {
        return Err(corrupt("truncated metadata"));
    }
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[12..body]).map_err(|e| corrupt(format!("metadata: {e}")))?;
    Ok((meta, body))
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    let (meta, mut pos) = decode_meta(bytes)?;
    let mut model = SETransModel::<T>::new(&meta.config, 0).map_err(|e| corrupt(format!("config: {e}")))?;
    let expected: Vec<TensorEntry> = tensors(&model).into_iter().map(|(e, _)| e).collect();
    if expected != meta.tensors {
        return Err(corrupt("tensor table does not match the declared model configuration"));
    }
    let payload: usize = expected.iter().map(|e| e.shape.iter().product::<usize>()).sum();
    if bytes.len() != pos + 4 * payload {
        return Err(corrupt(format!(
            "expected {} bytes, found {}",
            pos + 4 * payload,
            bytes.len()
        )));
    }
    let mut next = |n: usize| -> Vec<T> {
        let out = bytes[pos..pos + 4 * n]
            .chunks_exact(4)
            .map(|c| cast::<T>(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        pos += 4 * n;
        out
    };
    for p in model.params.iter_mut() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&next(n));
    }
    for s in model.stats.iter_mut() {
        let n = s.mean.len();
        s.mean = next(n);
        s.var = next(n);
    }
    Ok(Checkpoint {
        task: meta.task,
        seed: meta.seed,
        model,
    })
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes)
}
