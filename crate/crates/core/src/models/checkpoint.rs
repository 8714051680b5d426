//! Checkpoint file: `AACKPT1`, a little-endian u32 byte length, a JSON
//! manifest (architecture plus `{name, shape}` per tensor), then every
//! tensor's data as little-endian f32 in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{LatentSpec, ModelConfig, ModelKind, ModelParams};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 7] = b"AACKPT1";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    kind: ModelKind,
    latent: LatentSpec,
    config: ModelConfig,
    params: Vec<Entry>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let manifest = Manifest {
        kind: params.kind,
        latent: params.latent,
        config: params.config.clone(),
        params: params
            .iter()
            .map(|(name, t)| Entry {
                name: name.to_owned(),
                shape: t.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let len = u32::try_from(json.len()).map_err(|_| Error::format(7, "manifest exceeds 4 GiB"))?;
    let payload: usize = params.tensors().iter().map(Tensor::numel).sum();
    let mut out = Vec::with_capacity(11 + json.len() + 4 * payload);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(&json);
    for t in params.tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    if bytes.len() < 7 || &bytes[..7] != CHECKPOINT_MAGIC {
        return Err(Error::format(0, "missing AACKPT1 magic"));
    }
    let len_bytes: [u8; 4] = bytes
        .get(7..11)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| Error::format(7, "truncated manifest length"))?;
    let len = u32::from_le_bytes(len_bytes) as usize;
    let json = bytes
        .get(11..11 + len)
        .ok_or_else(|| Error::format(11, format!("manifest of {len} bytes is truncated")))?;
    let manifest: Manifest =
        serde_json::from_slice(json).map_err(|e| Error::format(11, format!("bad manifest: {e}")))?;

    let mut offset = 11 + len;
    let mut names = Vec::with_capacity(manifest.params.len());
    let mut tensors = Vec::with_capacity(manifest.params.len());
    for entry in manifest.params {
        let numel = entry
            .shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(offset as u64, format!("shape of '{}' overflows", entry.name)))?;
        let end = numel
            .checked_mul(4)
            .and_then(|n| n.checked_add(offset))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::format(offset as u64, format!("payload of '{}' is truncated", entry.name)))?;
        let data = bytes[offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let tensor = Tensor::new(entry.shape, data).map_err(|e| Error::format(offset as u64, e))?;
        names.push(entry.name);
        tensors.push(tensor);
        offset = end;
    }
    if offset != bytes.len() {
        return Err(Error::format(offset as u64, "trailing bytes after last tensor"));
    }

    let params = ModelParams::from_parts(manifest.kind, manifest.latent, manifest.config, names, tensors);
    // The stored tensors must match what this architecture would build.
    let reference = ModelParams::build(params.kind, params.latent, params.config.clone(), 0)?;
    let layout = |p: &ModelParams| -> Vec<(String, Vec<usize>)> {
        p.iter().map(|(n, t)| (n.to_owned(), t.shape().to_vec())).collect()
    };
    if layout(&reference) != layout(&params) {
        return Err(Error::config(format!(
            "checkpoint tensors do not match the {} {} architecture: expected {:?}",
            params.kind,
            params.latent,
            layout(&reference)
        )));
    }
    Ok(params)
}

pub fn write_checkpoint(params: &ModelParams, path: &Path) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    fs::write(path, bytes).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    decode_checkpoint(&bytes)
}
