//! Checkpoint container.
//!
//! Layout: the 7-byte magic `ADCKPT1`, a little-endian `u32` header length, a
//! UTF-8 JSON header (model config, group names, tensor names/shapes/dtypes,
//! training metadata), then each tensor as little-endian `f32` in header
//! order.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{GroupName, NnError, ParamStore};

pub const CKPT_MAGIC: &[u8; 7] = b"ADCKPT1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub step: u64,
    pub valid_loss: Option<f64>,
    pub seed: u64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    group: GroupName,
    shape: [usize; 2],
    dtype: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: serde_json::Value,
    groups: Vec<GroupName>,
    tensors: Vec<TensorEntry>,
    meta: CheckpointMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: serde_json::Value,
    pub meta: CheckpointMeta,
    pub params: ParamStore<f32>,
}

impl Checkpoint {
    pub fn encode(&self) -> Result<Vec<u8>, NnError> {
        if let Some(v) = self.meta.valid_loss {
            if !v.is_finite() {
                return Err(NnError::Checkpoint("validation loss is not finite".into()));
            }
        }
        let header = Header {
            config: self.config.clone(),
            groups: self.params.groups().into_iter().collect(),
            tensors: self
                .params
                .iter()
                .map(|(_, p)| TensorEntry {
                    name: p.name.clone(),
                    group: p.group,
                    shape: [p.value.nrows(), p.value.ncols()],
                    dtype: "f32".into(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(11 + json.len() + 4 * self.params.num_scalars());
        out.extend_from_slice(CKPT_MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, p) in self.params.iter() {
            for v in p.value.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, NnError> {
        let bad = |m: &str| NnError::Checkpoint(m.to_string());
        if bytes.len() < 11 || &bytes[..7] != CKPT_MAGIC {
            return Err(bad("missing ADCKPT1 magic"));
        }
        let hlen = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
        let body = bytes.get(11..11 + hlen).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| NnError::Checkpoint(e.to_string()))?;
        let mut offset = 11 + hlen;
        let mut params = ParamStore::new();
        for t in &header.tensors {
            if t.dtype != "f32" {
                return Err(NnError::Checkpoint(format!("unsupported dtype {} for {}", t.dtype, t.name)));
            }
            let n = t.shape[0] * t.shape[1];
            let chunk = bytes
                .get(offset..offset + 4 * n)
                .ok_or_else(|| NnError::Checkpoint(format!("payload of {} is truncated", t.name)))?;
            let values: Vec<f32> = chunk.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            let value = Array2::from_shape_vec((t.shape[0], t.shape[1]), values).expect("size from header");
            params.add(t.name.clone(), t.group, value);
            offset += 4 * n;
        }
        if offset != bytes.len() {
            return Err(bad("trailing bytes after tensor payloads"));
        }
        Ok(Self { config: header.config, meta: header.meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), NnError> {
        fs::write(path, self.encode()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, NnError> {
        Self::decode(&fs::read(path)?)
    }

    /// Little-endian payload bytes of one tensor.
    pub fn tensor_bytes(&self, name: &str) -> Option<Vec<u8>> {
        let id = self.params.id(name)?;
        Some(self.params.value(id).iter().flat_map(|v| v.to_le_bytes()).collect())
    }
}
