//! Checkpoint serialization.
//!
//! A checkpoint is a JSON header (model description, seeds, training
//! progress, parameter names and shapes) followed by the raw parameter
//! payloads as little-endian 32-bit floats, in header order. Optimizer
//! state rides along as additional named tensors, so resuming training
//! continues bit-exactly when the working scalar is `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::{fr, to_f64, Scalar};

const MAGIC: &[u8; 4] = b"MFAE";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u32),
    #[error("corrupt header: {0}")]
    Header(#[from] serde_json::Error),
    #[error("payload size mismatch: expected {expected} values, found {found}")]
    PayloadSize { expected: usize, found: usize },
    #[error("parameter {0} missing from checkpoint")]
    MissingParam(String),
    #[error("parameter {name} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch { name: String, expected: Vec<usize>, found: Vec<usize> },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamMeta {
    pub name: String,
    pub shape: Vec<usize>,
}

/// Header of a checkpoint file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    /// Model kind and configuration, opaque to this module.
    pub model: serde_json::Value,
    pub seed: u64,
    pub epoch: u64,
    pub step: u64,
    pub params: Vec<ParamMeta>,
}

/// A loaded checkpoint: header plus one value vector per parameter.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub values: Vec<Vec<f32>>,
}

impl Checkpoint {
    /// Finds a tensor by name and checks its shape.
    pub fn tensor(&self, name: &str, shape: &[usize]) -> Result<&[f32], CheckpointError> {
        let idx = self
            .header
            .params
            .iter()
            .position(|p| p.name == name)
            .ok_or_else(|| CheckpointError::MissingParam(name.to_string()))?;
        let meta = &self.header.params[idx];
        if meta.shape != shape {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                expected: shape.to_vec(),
                found: meta.shape.clone(),
            });
        }
        Ok(&self.values[idx])
    }

    pub fn tensor_cast<T: Scalar>(&self, name: &str, shape: &[usize]) -> Result<Vec<T>, CheckpointError> {
        Ok(self.tensor(name, shape)?.iter().map(|&v| fr(v as f64)).collect())
    }
}

/// Writes a checkpoint; `entries` supplies (name, shape, values).
pub fn save<T: Scalar>(
    path: impl AsRef<Path>,
    model: serde_json::Value,
    seed: u64,
    epoch: u64,
    step: u64,
    entries: &[(&str, &[usize], &[T])],
) -> Result<(), CheckpointError> {
    let header = CheckpointHeader {
        version: VERSION,
        model,
        seed,
        epoch,
        step,
        params: entries
            .iter()
            .map(|(name, shape, _)| ParamMeta { name: name.to_string(), shape: shape.to_vec() })
            .collect(),
    };
    let header_bytes = serde_json::to_vec(&header)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(header_bytes.len() as u32).to_le_bytes())?;
    w.write_all(&header_bytes)?;
    for (_, _, values) in entries {
        for &v in values.iter() {
            w.write_all(&(to_f64(v) as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a checkpoint back.
pub fn load(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut word = [0u8; 4];
    r.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    r.read_exact(&mut word)?;
    let header_len = u32::from_le_bytes(word) as usize;
    let mut header_bytes = vec![0u8; header_len];
    r.read_exact(&mut header_bytes)?;
    let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    let expected: usize = header.params.iter().map(|p| p.shape.iter().product::<usize>()).sum();
    if payload.len() != expected * 4 {
        return Err(CheckpointError::PayloadSize { expected, found: payload.len() / 4 });
    }
    let mut values = Vec::with_capacity(header.params.len());
    let mut offset = 0;
    for meta in &header.params {
        let n: usize = meta.shape.iter().product();
        let mut v = Vec::with_capacity(n);
        for _ in 0..n {
            v.push(f32::from_le_bytes([
                payload[offset],
                payload[offset + 1],
                payload[offset + 2],
                payload[offset + 3],
            ]));
            offset += 4;
        }
        values.push(v);
    }
    Ok(Checkpoint { header, values })
}
