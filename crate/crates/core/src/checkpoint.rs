//! Binary checkpoint: `GASTCKPT`, u32 LE version, u64 LE manifest length,
//! canonical JSON manifest, raw f32 LE payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GastError, Result};
use crate::model::{GastNet, GastNetConfig};
use crate::tensor::{ParamKind, Tensor};

pub const MAGIC: &[u8; 8] = b"GASTCKPT";
pub const VERSION: u32 = 1;
const HEADER: usize = 8 + 4 + 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub kind: Kind,
    pub shape: Vec<usize>,
    /// Byte offset into the payload.
    pub offset: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kind {
    Trainable,
    Buffer,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub config: GastNetConfig,
    pub params: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn of(model: &GastNet<f32>) -> Manifest {
        let mut offset = 0u64;
        let params = model
            .params
            .entries()
            .iter()
            .map(|e| {
                let entry = ManifestEntry {
                    name: e.name.clone(),
                    kind: match e.kind {
                        ParamKind::Trainable => Kind::Trainable,
                        ParamKind::Buffer => Kind::Buffer,
                    },
                    shape: e.value.shape().to_vec(),
                    offset,
                };
                offset += 4 * e.value.numel() as u64;
                entry
            })
            .collect();
        Manifest { format_version: VERSION, config: model.cfg.clone(), params }
    }

    pub fn payload_len(&self) -> u64 {
        self.params.iter().map(|p| 4 * p.shape.iter().product::<usize>() as u64).sum()
    }

    /// Element count of trainable entries.
    pub fn trainable_count(&self) -> usize {
        self.params.iter().filter(|p| p.kind == Kind::Trainable).map(|p| p.shape.iter().product::<usize>()).sum()
    }

    /// Sorted-key compact JSON.
    pub fn canonical_json(&self) -> Result<String> {
        let value = serde_json::to_value(self)?;
        Ok(serde_json::to_string(&value)?)
    }
}

fn bad(msg: impl Into<String>) -> GastError {
    GastError::Checkpoint(msg.into())
}

pub fn to_bytes(model: &GastNet<f32>) -> Result<Vec<u8>> {
    let manifest = Manifest::of(model);
    let json = manifest.canonical_json()?;
    let mut out = Vec::with_capacity(HEADER + json.len() + manifest.payload_len() as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(json.as_bytes());
    for e in model.params.entries() {
        for v in e.value.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses the header and manifest, checking version and payload length.
pub fn read_manifest(bytes: &[u8]) -> Result<(Manifest, &[u8])> {
    if bytes.len() < HEADER || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(format!("checkpoint version {version}, expected {VERSION}")));
    }
    let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
    let rest = &bytes[HEADER..];
    if (rest.len() as u64) < len {
        return Err(bad(format!("manifest needs {len} bytes, file has {}", rest.len())));
    }
    let (json, payload) = rest.split_at(len as usize);
    let manifest: Manifest = serde_json::from_slice(json).map_err(|e| bad(format!("manifest: {e}")))?;
    if manifest.format_version != version {
        return Err(bad(format!("manifest format_version {} disagrees with header {version}", manifest.format_version)));
    }
    let mut expected = 0u64;
    for p in &manifest.params {
        if p.offset != expected {
            return Err(bad(format!("{}: offset {} but previous entries end at {expected}", p.name, p.offset)));
        }
        expected += 4 * p.shape.iter().product::<usize>() as u64;
    }
    if payload.len() as u64 != expected {
        return Err(bad(format!("payload is {} bytes, manifest describes {expected}", payload.len())));
    }
    Ok((manifest, payload))
}

pub fn from_bytes(bytes: &[u8]) -> Result<GastNet<f32>> {
    let (manifest, payload) = read_manifest(bytes)?;
    let mut model = GastNet::<f32>::build(manifest.config.clone(), 0)?;
    if model.params.len() != manifest.params.len() {
        return Err(bad(format!(
            "manifest lists {} tensors, the configured model has {}",
            manifest.params.len(),
            model.params.len()
        )));
    }
    let ids: Vec<_> = model.params.ids().collect();
    for (id, p) in ids.into_iter().zip(&manifest.params) {
        let e = model.params.entry(id);
        if e.name != p.name || e.value.shape() != p.shape.as_slice() {
            return Err(bad(format!("manifest entry {} {:?} does not match model tensor {} {:?}", p.name, p.shape, e.name, e.value.shape())));
        }
        let start = p.offset as usize;
        let data = payload[start..start + 4 * e.value.numel()]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        model.params.set(id, Tensor::new(&p.shape, data)?)?;
    }
    Ok(model)
}

pub fn save_checkpoint(model: &GastNet<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<GastNet<f32>> {
    from_bytes(&fs::read(path)?)
}
