//! Parameter checkpoint file: a one-line JSON manifest naming every entry
//! (name, shape, trainable flag) followed by 32-bit little-endian float
//! payloads in manifest order. Batch-norm running statistics ride along as
//! buffer entries; arbitrary caller metadata is embedded in the manifest.

use super::params::{BnStats, ParamStore};
use super::tensor::Tensor;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const FORMAT_TAG: &str = "cardiodx-checkpoint-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("checkpoint manifest: {0}")]
    Manifest(String),
    #[error("checkpoint payload: {0}")]
    Payload(String),
    #[error("parameter {name}: shape {got:?} does not match expected {expected:?}")]
    ShapeMismatch {
        name: String,
        got: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("parameter {0} required by the allowlist is missing from the checkpoint")]
    MissingAllowed(String),
}

#[derive(Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Serialize, Deserialize)]
struct BnEntry {
    name: String,
    channels: usize,
    updates: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format: String,
    params: Vec<ParamEntry>,
    bn_stats: Vec<BnEntry>,
    meta: serde_json::Value,
}

pub fn save_checkpoint(
    store: &ParamStore,
    meta: &serde_json::Value,
    path: &Path,
) -> Result<(), CheckpointError> {
    let manifest = Manifest {
        format: FORMAT_TAG.to_string(),
        params: store
            .params()
            .iter()
            .map(|p| ParamEntry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                trainable: p.trainable,
            })
            .collect(),
        bn_stats: store
            .bn_entries()
            .iter()
            .map(|(name, s)| BnEntry {
                name: name.clone(),
                channels: s.channels(),
                updates: s.updates,
            })
            .collect(),
        meta: meta.clone(),
    };
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer(&mut w, &manifest).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    w.write_all(b"\n")?;
    let mut write_f32s = |values: &[f64]| -> std::io::Result<()> {
        for &v in values {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
        Ok(())
    };
    for p in store.params() {
        write_f32s(p.value.data())?;
    }
    for (_, s) in store.bn_entries() {
        write_f32s(&s.running_mean)?;
        write_f32s(&s.running_var)?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(ParamStore, serde_json::Value), CheckpointError> {
    let mut r = BufReader::new(File::open(path)?);
    let mut header = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return Err(CheckpointError::Manifest("missing newline after manifest".into()));
        }
        if byte[0] == b'\n' {
            break;
        }
        header.push(byte[0]);
    }
    let manifest: Manifest =
        serde_json::from_slice(&header).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.format != FORMAT_TAG {
        return Err(CheckpointError::Manifest(format!(
            "unknown format tag {:?}",
            manifest.format
        )));
    }
    let mut read_f32s = |count: usize, what: &str| -> Result<Vec<f64>, CheckpointError> {
        let mut buf = vec![0u8; count * 4];
        r.read_exact(&mut buf)
            .map_err(|_| CheckpointError::Payload(format!("truncated payload at {what}")))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect())
    };
    let mut store = ParamStore::new();
    for e in &manifest.params {
        let count: usize = e.shape.iter().product();
        let data = read_f32s(count, &e.name)?;
        let tensor = Tensor::from_vec(&e.shape, data)
            .map_err(|err| CheckpointError::Manifest(err.to_string()))?;
        store.add_param(&e.name, tensor, e.trainable);
    }
    for e in &manifest.bn_stats {
        store.add_bn(&e.name, e.channels);
        let stats = store.bn_stats_mut(&e.name).expect("just added");
        stats.running_mean = read_f32s(e.channels, &e.name)?;
        stats.running_var = read_f32s(e.channels, &e.name)?;
        stats.updates = e.updates;
    }
    Ok((store, manifest.meta))
}

/// Copy parameter values (and, for batch-norm names, running statistics)
/// from `src` into `dst` for exactly the allowlisted names. Every allowed
/// name must exist on both sides with matching shapes.
pub fn copy_allowed(
    dst: &mut ParamStore,
    src: &ParamStore,
    allowed_params: &[String],
    allowed_bn: &[String],
) -> Result<(), CheckpointError> {
    for name in allowed_params {
        let from = src
            .param(name)
            .ok_or_else(|| CheckpointError::MissingAllowed(name.clone()))?;
        let to = dst
            .param_mut(name)
            .ok_or_else(|| CheckpointError::MissingAllowed(name.clone()))?;
        if to.value.shape() != from.value.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                got: from.value.shape().to_vec(),
                expected: to.value.shape().to_vec(),
            });
        }
        to.value = from.value.clone();
    }
    for name in allowed_bn {
        let from: &BnStats = src
            .bn_stats(name)
            .ok_or_else(|| CheckpointError::MissingAllowed(name.clone()))?;
        let channels = dst
            .bn_stats(name)
            .ok_or_else(|| CheckpointError::MissingAllowed(name.clone()))?
            .channels();
        if channels != from.channels() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                got: vec![from.channels()],
                expected: vec![channels],
            });
        }
        *dst.bn_stats_mut(name).expect("checked above") = from.clone();
    }
    Ok(())
}
