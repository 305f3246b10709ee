// SPDX-License-Identifier: MIT OR Apache-2.0

//! Binary weight file.
//!
//! ```text
//! "KVSM" | u32 LE version (=1) | u32 LE header length | JSON header | f32 LE payload
//! ```
//!
//! The JSON header carries the [`ModelConfig`] and a manifest of
//! `{name, shape, offset}` entries; offsets are byte offsets into the
//! payload, which stores every tensor row-major in manifest order.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::weights::{tensor_layout, Tensor, Weights};
use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"KVSM";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    tensors: Vec<ManifestEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

/// Serialises weights into the KVSM byte format.
pub fn write_weights(weights: &Weights) -> Vec<u8> {
    let mut offset = 0;
    let mut manifest = Vec::new();
    for (name, t) in weights.named_tensors() {
        manifest.push(ManifestEntry {
            name,
            shape: t.shape.clone(),
            offset,
        });
        offset += t.data.len() * 4;
    }
    let header = serde_json::to_vec(&Header {
        config: weights.config.clone(),
        tensors: manifest,
    })
    .expect("header serialises");

    let mut out = Vec::with_capacity(12 + header.len() + offset);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    for (_, t) in weights.named_tensors() {
        for v in &t.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn save_weights(weights: &Weights, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_weights(weights);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

fn read_u32(bytes: &[u8], at: usize) -> Result<u32> {
    let slice = bytes.get(at..at + 4).ok_or(Error::TruncatedPayload {
        expected: at + 4,
        found: bytes.len(),
    })?;
    Ok(u32::from_le_bytes(slice.try_into().expect("4 bytes")))
}

/// Parses the KVSM byte format.
pub fn read_weights(bytes: &[u8]) -> Result<(ModelConfig, Weights)> {
    let magic: [u8; 4] = match bytes.get(..4) {
        Some(m) => m.try_into().expect("4 bytes"),
        None => {
            let mut found = [0u8; 4];
            found[..bytes.len()].copy_from_slice(bytes);
            return Err(Error::BadMagic { found });
        }
    };
    if magic != MAGIC {
        return Err(Error::BadMagic { found: magic });
    }
    let version = read_u32(bytes, 4)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = read_u32(bytes, 8)? as usize;
    let header_bytes = bytes
        .get(12..12 + header_len)
        .ok_or(Error::TruncatedPayload {
            expected: 12 + header_len,
            found: bytes.len(),
        })?;
    let header: Header = serde_json::from_slice(header_bytes)
        .map_err(|e| Error::HeaderInconsistent(format!("header JSON: {e}")))?;
    header.config.validate()?;

    let layout = tensor_layout(&header.config);
    if layout.len() != header.tensors.len() {
        return Err(Error::HeaderInconsistent(format!(
            "config implies {} tensors, manifest lists {}",
            layout.len(),
            header.tensors.len()
        )));
    }
    let mut expected_offset = 0;
    for ((name, shape), entry) in layout.iter().zip(&header.tensors) {
        if &entry.name != name || &entry.shape != shape {
            return Err(Error::HeaderInconsistent(format!(
                "manifest entry {} {:?} does not match expected {name} {shape:?}",
                entry.name, entry.shape
            )));
        }
        if entry.offset != expected_offset {
            return Err(Error::HeaderInconsistent(format!(
                "{name}: offset {} (expected {expected_offset})",
                entry.offset
            )));
        }
        expected_offset += shape.iter().product::<usize>() * 4;
    }

    let payload = &bytes[12 + header_len..];
    if payload.len() != expected_offset {
        if payload.len() < expected_offset {
            return Err(Error::TruncatedPayload {
                expected: expected_offset,
                found: payload.len(),
            });
        }
        return Err(Error::HeaderInconsistent(format!(
            "{} trailing payload bytes",
            payload.len() - expected_offset
        )));
    }

    let tensors = header
        .tensors
        .iter()
        .map(|entry| {
            let n: usize = entry.shape.iter().product();
            let raw = &payload[entry.offset..entry.offset + n * 4];
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            Tensor::from_vec(&entry.shape, data)
        })
        .collect::<Result<Vec<_>>>()?;
    let weights = Weights::from_ordered(header.config.clone(), tensors)?;
    Ok((header.config, weights))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<(ModelConfig, Weights)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_weights(&bytes)
}
