//! Checkpoint container: magic, format version, a JSON header describing
//! every tensor, then a little-endian `f32` payload.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{ImpHyper, ImpParams};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"POLIMPCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset into the payload, in `f32` elements.
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hyper: ImpHyper,
    tensors: Vec<TensorEntry>,
    #[serde(default)]
    meta: Value,
}

/// What a loaded checkpoint carries besides the parameters.
#[derive(Clone, Debug)]
pub struct CheckpointMeta {
    pub meta: Value,
    /// Hex SHA-256 of the whole file.
    pub sha256: String,
}

pub fn encode_checkpoint(params: &ImpParams, meta: &Value) -> Result<Vec<u8>> {
    let mut tensors = Vec::new();
    let mut payload = Vec::new();
    let mut offset = 0;
    for (name, t) in params.tensors() {
        tensors.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += t.len();
        for &x in t.iter() {
            payload.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    let header = serde_json::to_vec(&Header {
        hyper: params.hyper.clone(),
        tensors,
        meta: meta.clone(),
    })?;
    let mut out = Vec::with_capacity(20 + header.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<(ImpParams, CheckpointMeta)> {
    let bad = |m: &str| Error::Format(format!("checkpoint: {m}"));
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(bad("missing magic"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    let body = &bytes[20..];
    if body.len() < hlen {
        return Err(bad("truncated header"));
    }
    let header: Header = serde_json::from_slice(&body[..hlen])?;
    let payload = &body[hlen..];
    let mut params = ImpParams::zeros(header.hyper)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.tensors().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect();
    if expected.len() != header.tensors.len() {
        return Err(bad("tensor count does not match hyperparameters"));
    }
    let mut total = 0;
    for ((name, shape), (_, mut t)) in expected.iter().zip(params.tensors_mut()) {
        let entry = header
            .tensors
            .iter()
            .find(|e| &e.name == name)
            .ok_or_else(|| bad(&format!("missing tensor {name}")))?;
        if &entry.shape != shape {
            return Err(bad(&format!("tensor {name} has shape {:?}, expected {shape:?}", entry.shape)));
        }
        let start = entry.offset * 4;
        let end = start + t.len() * 4;
        if end > payload.len() {
            return Err(bad(&format!("tensor {name} runs past the payload")));
        }
        for (x, chunk) in t.iter_mut().zip(payload[start..end].chunks_exact(4)) {
            *x = f32::from_le_bytes(chunk.try_into().unwrap()) as f64;
        }
        total += t.len();
    }
    if total * 4 != payload.len() {
        return Err(bad("payload size does not match tensor table"));
    }
    Ok((
        params,
        CheckpointMeta {
            meta: header.meta,
            sha256: hex::encode(Sha256::digest(bytes)),
        },
    ))
}

/// Writes `params` and returns the file's SHA-256.
pub fn save_checkpoint(path: &Path, params: &ImpParams, meta: &Value) -> Result<String> {
    let bytes = encode_checkpoint(params, meta)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_checkpoint(path: &Path) -> Result<(ImpParams, CheckpointMeta)> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
