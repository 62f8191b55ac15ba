//! Checkpoint format:
//!
//! ```text
//! "RACLM1" | u64 LE header length | JSON header | raw f64 LE payload
//! ```
//!
//! The header records the config, tensor names and shapes, payload length,
//! the SHA-256 of the payload and free-form run metadata.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{LMConfig, LMParams, Tensor};
use crate::error::{RacError, Result};

pub const CHECKPOINT_MAGIC: &[u8; 6] = b"RACLM1";

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    config: LMConfig,
    tensors: Vec<TensorEntry>,
    payload_bytes: u64,
    checksum: String,
    #[serde(default)]
    meta: serde_json::Value,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn to_bytes(params: &LMParams, meta: serde_json::Value) -> Vec<u8> {
    let mut payload = Vec::with_capacity(params.num_params() * 8);
    for t in &params.tensors {
        for x in &t.data {
            payload.extend_from_slice(&x.to_le_bytes());
        }
    }
    let header = Header {
        config: params.config.clone(),
        tensors: params
            .tensors
            .iter()
            .map(|t| TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
            })
            .collect(),
        payload_bytes: payload.len() as u64,
        checksum: hex(&Sha256::digest(&payload)),
        meta,
    };
    let header = serde_json::to_vec(&header).expect("header serialises");
    let mut out = Vec::with_capacity(14 + header.len() + payload.len());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    out
}

pub fn from_bytes(bytes: &[u8]) -> Result<(LMParams, serde_json::Value)> {
    if bytes.len() < 14 || &bytes[..6] != CHECKPOINT_MAGIC {
        return Err(RacError::CorruptHeader("missing RACLM1 magic".into()));
    }
    let hlen = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
    let header_bytes = bytes
        .get(14..14usize.saturating_add(hlen))
        .ok_or_else(|| RacError::CorruptHeader("truncated header".into()))?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| RacError::CorruptHeader(e.to_string()))?;
    let payload = &bytes[14 + hlen..];
    if payload.len() as u64 != header.payload_bytes
        || hex(&Sha256::digest(payload)) != header.checksum
    {
        return Err(RacError::Checksum("checkpoint payload".into()));
    }
    let mut offset = 0;
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for e in header.tensors {
        let n: usize = e.shape.iter().product();
        let chunk = payload
            .get(offset..offset + n * 8)
            .ok_or_else(|| RacError::CorruptHeader(format!("payload too short for `{}`", e.name)))?;
        offset += n * 8;
        let data = chunk
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        tensors.push(Tensor {
            name: e.name,
            shape: e.shape,
            data,
        });
    }
    if offset != payload.len() {
        return Err(RacError::CorruptHeader("payload longer than declared tensors".into()));
    }
    let params = LMParams::from_tensors(header.config, tensors)?;
    params.check_finite()?;
    Ok((params, header.meta))
}

pub fn save(params: &LMParams, meta: serde_json::Value, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, to_bytes(params, meta))?;
    Ok(())
}

pub fn load(path: impl AsRef<Path>) -> Result<(LMParams, serde_json::Value)> {
    from_bytes(&std::fs::read(path)?)
}
