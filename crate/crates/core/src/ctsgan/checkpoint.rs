//! Self-describing JSON checkpoints.
//!
//! Tensors are stored as nested arrays of decimals with 17 significant
//! digits, which round-trip every `f64` exactly, alongside a SHA-256 over
//! the little-endian bit patterns of the values.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::model::{CtsganModel, Hyperparams, LossTraces, NetworkKind, Stage};
use crate::data::NormalizationParams;
use crate::error::{Error, Result};
use crate::nn::{ParameterStore, Tensor};

pub const CHECKPOINT_VERSION: u32 = 1;
const FORMAT: &str = "ctsgan-checkpoint";

#[derive(Serialize)]
struct TensorOut<'a> {
    network: &'static str,
    name: &'a str,
    shape: &'a [usize],
    checksum: String,
    data: Box<RawValue>,
}

#[derive(Serialize)]
struct CheckpointOut<'a> {
    format: &'static str,
    version: u32,
    stage: Stage,
    seed: u64,
    fine_tune_steps: u64,
    hyperparams: &'a Hyperparams,
    normalization: Option<&'a NormalizationParams>,
    traces: &'a LossTraces,
    tensors: Vec<TensorOut<'a>>,
}

#[derive(Deserialize)]
struct TensorIn {
    network: String,
    name: String,
    shape: Vec<usize>,
    checksum: String,
    data: Value,
}

#[derive(Deserialize)]
struct Header {
    format: String,
    version: u32,
}

#[derive(Deserialize)]
struct CheckpointIn {
    stage: Stage,
    seed: u64,
    #[serde(default)]
    fine_tune_steps: u64,
    hyperparams: Hyperparams,
    normalization: Option<NormalizationParams>,
    #[serde(default)]
    traces: LossTraces,
    tensors: Vec<TensorIn>,
}

fn tensor_checksum(data: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in data {
        hasher.update(v.to_bits().to_le_bytes());
    }
    hex::encode(hasher.finalize())
}

fn write_nested(out: &mut String, data: &[f64], shape: &[usize]) {
    out.push('[');
    if shape.len() <= 1 {
        for (i, v) in data.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            out.push_str(&format!("{v:.16e}"));
        }
    } else {
        let inner: usize = shape[1..].iter().product();
        for (i, chunk) in data.chunks(inner.max(1)).enumerate().take(shape[0]) {
            if i > 0 {
                out.push(',');
            }
            write_nested(out, chunk, &shape[1..]);
        }
    }
    out.push(']');
}

fn read_nested(value: &Value, shape: &[usize], out: &mut Vec<f64>, name: &str) -> Result<()> {
    let arr = value
        .as_array()
        .ok_or_else(|| Error::Integrity(format!("tensor `{name}` is not a nested array")))?;
    let Some((&n, rest)) = shape.split_first() else {
        return Err(Error::Integrity(format!("tensor `{name}` nests deeper than its shape")));
    };
    if arr.len() != n {
        return Err(Error::Integrity(format!(
            "tensor `{name}` has {} entries where its shape declares {n}",
            arr.len()
        )));
    }
    for item in arr {
        if rest.is_empty() {
            let v = item
                .as_f64()
                .ok_or_else(|| Error::Integrity(format!("tensor `{name}` holds a non-number")))?;
            out.push(v);
        } else {
            read_nested(item, rest, out, name)?;
        }
    }
    Ok(())
}

/// Serializes the model to the checkpoint JSON document.
pub fn to_json(model: &CtsganModel) -> Result<String> {
    let mut tensors = Vec::new();
    for kind in NetworkKind::ALL {
        for (name, t) in model.params(kind).iter() {
            let mut text = String::new();
            write_nested(&mut text, t.data(), t.shape());
            tensors.push(TensorOut {
                network: kind.name(),
                name,
                shape: t.shape(),
                checksum: tensor_checksum(t.data()),
                data: RawValue::from_string(text)?,
            });
        }
    }
    let doc = CheckpointOut {
        format: FORMAT,
        version: CHECKPOINT_VERSION,
        stage: model.stage,
        seed: model.seed,
        fine_tune_steps: model.fine_tune_steps,
        hyperparams: &model.hp,
        normalization: model.norm.as_ref(),
        traces: &model.traces,
        tensors,
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

/// Rebuilds a model from checkpoint JSON, verifying version, shapes and
/// per-tensor checksums. Nothing is returned unless every check passes.
pub fn from_json(text: &str) -> Result<CtsganModel> {
    let header: Header = serde_json::from_str(text)
        .map_err(|e| Error::Integrity(format!("unreadable checkpoint: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Integrity(format!("unknown format `{}`", header.format)));
    }
    if header.version != CHECKPOINT_VERSION {
        return Err(Error::Version {
            found: header.version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let doc: CheckpointIn = serde_json::from_str(text)
        .map_err(|e| Error::Integrity(format!("malformed checkpoint: {e}")))?;

    let mut model = CtsganModel::build(doc.hyperparams, doc.seed)?;
    let mut seen = std::collections::BTreeSet::new();
    for t in doc.tensors {
        let kind = NetworkKind::ALL
            .into_iter()
            .find(|k| k.name() == t.network)
            .ok_or_else(|| Error::Integrity(format!("unknown network `{}`", t.network)))?;
        let mut data = Vec::with_capacity(t.shape.iter().product());
        read_nested(&t.data, &t.shape, &mut data, &t.name)?;
        if tensor_checksum(&data) != t.checksum {
            return Err(Error::Integrity(format!("checksum mismatch for tensor `{}`", t.name)));
        }
        let store: &mut ParameterStore = model.params_mut(kind);
        if store.try_get(&t.name).is_none() {
            return Err(Error::Integrity(format!(
                "tensor `{}` does not belong to the {} architecture",
                t.name, t.network
            )));
        }
        store
            .set(&t.name, Tensor::new(t.shape, data)?)
            .map_err(|e| Error::Integrity(e.to_string()))?;
        seen.insert((kind.name(), t.name));
    }
    let expected: usize = NetworkKind::ALL.iter().map(|&k| model.params(k).len()).sum();
    if seen.len() != expected {
        return Err(Error::Integrity(format!(
            "checkpoint holds {} of {expected} tensors",
            seen.len()
        )));
    }
    if let Some(norm) = &doc.normalization {
        norm.validate()?;
    }
    model.stage = doc.stage;
    model.norm = doc.normalization;
    model.traces = doc.traces;
    model.fine_tune_steps = doc.fine_tune_steps;
    Ok(model)
}

pub fn save_checkpoint(model: &CtsganModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, to_json(model)?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<CtsganModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_json(&text)
}

impl CtsganModel {
    pub fn to_checkpoint_json(&self) -> Result<String> {
        to_json(self)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        from_json(text)
    }
}
