//! Checkpoint file: one line of UTF-8 JSON manifest, a newline, then the
//! little-endian `f32` payload of every parameter in manifest order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ParameterStore;
use super::tensor::{Real, Tensor};
use crate::error::{MossError, Result};

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ManifestEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub seed: u64,
    pub params: Vec<ManifestEntry>,
}

pub fn to_bytes<T: Real>(store: &ParameterStore<T>) -> Result<Vec<u8>> {
    let mut params = Vec::with_capacity(store.len());
    let mut payload = Vec::with_capacity(store.num_scalars() * 4);
    for (_, name, t) in store.iter() {
        params.push(ManifestEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        for v in t.data() {
            payload.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
        }
    }
    let manifest = Manifest {
        seed: store.seed(),
        params,
    };
    let mut out = serde_json::to_vec(&manifest)?;
    out.push(b'\n');
    out.extend_from_slice(&payload);
    Ok(out)
}

pub fn from_bytes(bytes: &[u8]) -> Result<ParameterStore<f32>> {
    let split = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| MossError::contract("checkpoint has no manifest terminator"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[..split])?;
    let payload = &bytes[split + 1..];
    let mut store = ParameterStore::new(manifest.seed);
    for e in &manifest.params {
        let n: usize = e.shape.iter().product();
        let end = e.offset + n * 4;
        if end > payload.len() {
            return Err(MossError::contract(format!(
                "checkpoint payload truncated at parameter `{}`",
                e.name
            )));
        }
        let data = payload[e.offset..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        store.insert(&e.name, Tensor::new(e.shape.clone(), data)?)?;
    }
    Ok(store)
}

pub fn save<T: Real>(store: &ParameterStore<T>, path: &Path) -> Result<()> {
    fs::write(path, to_bytes(store)?).map_err(|e| MossError::io(path, e))
}

pub fn load(path: &Path) -> Result<ParameterStore<f32>> {
    let bytes = fs::read(path).map_err(|e| MossError::io(path, e))?;
    from_bytes(&bytes)
}
