//! Checkpoint format: a flat binary blob of little-endian f32 payloads plus
//! a JSON manifest describing name, shape and offset of every tensor.
//!
//! `save("ckpt/model")` writes `ckpt/model.bin` and `ckpt/model.json`. The
//! manifest is the source of truth for layout; the blob carries no framing.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
    /// Byte offset of this tensor's payload in the blob.
    offset: u64,
    /// Element count (payload is 4·len bytes).
    len: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    tensors: Vec<ManifestEntry>,
    #[serde(default)]
    meta: serde_json::Value,
}

fn paths(prefix: &Path) -> (PathBuf, PathBuf) {
    let mut bin = prefix.as_os_str().to_owned();
    bin.push(".bin");
    let mut json = prefix.as_os_str().to_owned();
    json.push(".json");
    (PathBuf::from(bin), PathBuf::from(json))
}

/// Writes `entries` in order. `meta` is stored verbatim in the manifest for
/// callers that want to stash model configuration next to the weights.
pub fn save_tensors(prefix: &Path, entries: &[(String, Tensor)], meta: serde_json::Value) -> Result<()> {
    let (bin_path, json_path) = paths(prefix);
    if let Some(dir) = bin_path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    let mut blob: Vec<u8> = Vec::new();
    let mut manifest = Manifest { format_version: FORMAT_VERSION, tensors: Vec::new(), meta };
    for (name, t) in entries {
        let offset = blob.len() as u64;
        for &v in t.data() {
            blob.extend_from_slice(&v.to_le_bytes());
        }
        manifest.tensors.push(ManifestEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: t.numel() as u64,
        });
    }
    fs::write(&bin_path, &blob)?;
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Param(format!("manifest encode: {e}")))?;
    fs::write(&json_path, text)?;
    Ok(())
}

/// Reads a checkpoint back; returns tensors in manifest order plus the meta
/// value. Validates offsets, lengths, shape products and blob size.
pub fn load_tensors(prefix: &Path) -> Result<(Vec<(String, Tensor)>, serde_json::Value)> {
    let (bin_path, json_path) = paths(prefix);
    let text = fs::read_to_string(&json_path).map_err(|e| map_missing(e, &json_path))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::DataFormat {
        path: json_path.clone(),
        reason: format!("manifest parse: {e}"),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::DataFormat {
            path: json_path,
            reason: format!(
                "unsupported format_version {} (this build reads {})",
                manifest.format_version, FORMAT_VERSION
            ),
        });
    }
    let blob = fs::read(&bin_path).map_err(|e| map_missing(e, &bin_path))?;
    let mut out = Vec::with_capacity(manifest.tensors.len());
    for e in &manifest.tensors {
        let product: usize = e.shape.iter().product();
        if product as u64 != e.len {
            return Err(Error::DataFormat {
                path: json_path,
                reason: format!("tensor {}: shape {:?} does not match len {}", e.name, e.shape, e.len),
            });
        }
        let start = e.offset as usize;
        let end = start + 4 * e.len as usize;
        if end > blob.len() || e.offset % 4 != 0 {
            return Err(Error::DataFormat {
                path: bin_path,
                reason: format!(
                    "tensor {}: payload [{start}, {end}) exceeds blob of {} bytes",
                    e.name,
                    blob.len()
                ),
            });
        }
        let data: Vec<f32> = blob[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        out.push((e.name.clone(), Tensor::new(e.shape.clone(), data)?));
    }
    Ok((out, manifest.meta))
}

fn map_missing(e: std::io::Error, path: &Path) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::DataFormat { path: path.to_path_buf(), reason: "checkpoint file missing".into() }
    } else {
        Error::Io(e)
    }
}
