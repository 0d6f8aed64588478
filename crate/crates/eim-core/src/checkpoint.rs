//! Flat binary checkpoint format for parameter stores.
//!
//! Layout: 4-byte magic `EIMC`, little-endian u32 version, little-endian u64
//! header length, a JSON header listing `{name, shape}` per parameter in
//! store order, then the concatenated little-endian f64 payloads in the same
//! order. Loading is strict: the file and the store must describe exactly
//! the same parameters.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::CheckpointError;
use crate::params::ParamStore;
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"EIMC";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    shape: Vec<usize>,
}

/// Serialize every parameter in the store to `path`, overwriting.
pub fn save(path: &Path, store: &ParamStore) -> Result<(), CheckpointError> {
    let mut header = Vec::with_capacity(store.len());
    let mut payload_len = 0usize;
    for id in store.ids() {
        let value = store.value(id);
        header.push(HeaderEntry {
            name: store.name(id).to_string(),
            shape: value.shape().to_vec(),
        });
        payload_len += value.data().len() * 8;
    }
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;

    let mut out = Vec::with_capacity(16 + header_bytes.len() + payload_len);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for id in store.ids() {
        for &v in store.value(id).data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

/// One parameter as stored on disk: name, shape, values.
pub type CheckpointEntry = (String, Vec<usize>, Vec<f64>);

/// Parse a checkpoint file into entries in file order.
pub fn read_entries(path: &Path) -> Result<Vec<CheckpointEntry>, CheckpointError> {
    let bytes = fs::read(path)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let payload_start = 16usize.checked_add(header_len).ok_or(CheckpointError::Truncated)?;
    if bytes.len() < payload_start {
        return Err(CheckpointError::Truncated);
    }
    let header: Vec<HeaderEntry> = serde_json::from_slice(&bytes[16..payload_start])
        .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;

    let mut offset = payload_start;
    let mut entries = Vec::with_capacity(header.len());
    for entry in header {
        let len: usize = entry.shape.iter().product::<usize>().max(1);
        // scalars have empty shape and one element
        let len = if entry.shape.is_empty() { 1 } else { len };
        let end = offset.checked_add(len * 8).ok_or(CheckpointError::Truncated)?;
        if bytes.len() < end {
            return Err(CheckpointError::Truncated);
        }
        let values: Vec<f64> = bytes[offset..end]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        offset = end;
        entries.push((entry.name, entry.shape, values));
    }
    Ok(entries)
}

/// Load a checkpoint into an already-constructed store. Every store
/// parameter must appear in the file with a matching shape and vice versa.
pub fn load_into(path: &Path, store: &mut ParamStore) -> Result<(), CheckpointError> {
    let entries = read_entries(path)?;
    let mut seen = vec![false; entries.len()];
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let name = store.name(id).to_string();
        let expected = store.value(id).shape().to_vec();
        let pos = entries
            .iter()
            .position(|(n, _, _)| *n == name)
            .ok_or_else(|| CheckpointError::MissingParam(name.clone()))?;
        let (_, shape, values) = &entries[pos];
        if *shape != expected {
            return Err(CheckpointError::ShapeMismatch {
                name,
                expected,
                found: shape.clone(),
            });
        }
        seen[pos] = true;
        store.set_value(id, Tensor::new(shape.clone(), values.clone()));
    }
    if let Some(pos) = seen.iter().position(|&s| !s) {
        return Err(CheckpointError::UnknownParam(entries[pos].0.clone()));
    }
    Ok(())
}
