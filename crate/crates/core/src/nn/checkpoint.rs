//! Checkpoint archive.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      8 bytes  "PEPRCKPT"
//! version    u32      1
//! json_len   u32      length of the header document
//! json       bytes    UTF-8 {"kind": ..., "task": ..., "model": ModelConfig}
//! count      u32      number of arrays
//! per array:
//!   name_len u32, name bytes (UTF-8)
//!   ndim     u32, dims u32 * ndim
//!   data     f32 * prod(dims)
//! ```
//!
//! Arrays appear in parameter-store order. Weight-decay membership is not
//! stored; it follows from the parameter name.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Task};
use super::layers::weight_decay_applies;
use super::model::{is_privileged, PeprModel};
use super::params::{Param, ParamStore};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"PEPRCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckpointKind {
    /// Every trained array, including the event branch.
    Full,
    /// RGB encoder and task head only.
    Inference,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub kind: CheckpointKind,
    pub task: Task,
    pub model: ModelConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub header: CheckpointHeader,
    pub store: ParamStore<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn full(model: &PeprModel<T>) -> Self {
        Self {
            header: CheckpointHeader {
                kind: CheckpointKind::Full,
                task: model.task,
                model: model.config.clone(),
            },
            store: model.store.clone(),
        }
    }

    pub fn inference(model: &PeprModel<T>) -> Self {
        Self {
            header: CheckpointHeader {
                kind: CheckpointKind::Inference,
                task: model.task,
                model: model.config.clone(),
            },
            store: model.inference_store(),
        }
    }

    /// Names of arrays that must never ship in an inference checkpoint.
    pub fn privileged_arrays(&self) -> Vec<String> {
        self.store
            .iter()
            .filter(|(_, p)| is_privileged(&p.name))
            .map(|(_, p)| p.name.clone())
            .collect()
    }

    pub fn into_model(self) -> Result<PeprModel<T>> {
        PeprModel::from_store(self.header.model, self.header.task, self.store)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let json = serde_json::to_vec(&self.header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.store.len() as u32).to_le_bytes());
        for (_, p) in self.store.iter() {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for d in &p.shape {
                out.extend_from_slice(&(*d as u32).to_le_bytes());
            }
            for v in &p.data {
                out.extend_from_slice(&(v.f64() as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, origin };
        if r.take(8)? != MAGIC {
            return Err(Error::format(origin, "not a checkpoint (bad magic)"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format(origin, format!("unsupported checkpoint version {version}")));
        }
        let json_len = r.u32()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(json_len)?)
            .map_err(|e| Error::format(origin, format!("bad header: {e}")))?;
        let count = r.u32()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::format(origin, "array name is not UTF-8"))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| T::c(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
                .collect();
            let decay = weight_decay_applies(&name);
            store
                .insert(Param { name, shape, data, decay })
                .map_err(|e| Error::format(origin, e.to_string()))?;
        }
        if r.pos != bytes.len() {
            return Err(Error::format(origin, "trailing bytes after last array"));
        }
        Ok(Self { header, store })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    origin: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(self.origin, "truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
