//! Checkpoint container.
//!
//! Layout: `ECGM` magic, version byte, three zero bytes, a `u32` LE length
//! of the JSON header, the UTF-8 JSON header, then every parameter array in
//! declaration order as `f32` LE. The header carries the run metadata and
//! a `name -> (byte_offset, shape)` index into the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ArchId, ArchSpec, ModelError, ModelGraph};
use crate::nn::HasParams;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ECGM";
pub const CHECKPOINT_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub values: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub arch: ArchId,
    pub fs_hz: u32,
    pub fold_index: usize,
    pub spec: ArchSpec,
    pub best_epoch: usize,
    pub best_val_f1: f64,
    pub config_hash: Option<String>,
    pub params: Vec<NamedArray>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    name: String,
    byte_offset: usize,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    arch: ArchId,
    fs_hz: u32,
    fold_index: usize,
    dropout_p: f64,
    best_epoch: usize,
    best_val_f1: f64,
    #[serde(default)]
    config_hash: Option<String>,
    spec: ArchSpec,
    index: Vec<IndexEntry>,
}

fn err(msg: impl Into<String>) -> ModelError {
    ModelError::Checkpoint(msg.into())
}

impl ModelCheckpoint {
    /// Snapshot of `graph`'s parameters and buffers, rounded to `f32`.
    pub fn capture(graph: &ModelGraph, fs_hz: u32, fold_index: usize) -> Self {
        ModelCheckpoint {
            arch: graph.arch(),
            fs_hz,
            fold_index,
            spec: graph.spec().clone(),
            best_epoch: 0,
            best_val_f1: 0.0,
            config_hash: None,
            params: graph
                .params()
                .into_iter()
                .map(|p| NamedArray {
                    name: p.name.clone(),
                    shape: p.shape.clone(),
                    trainable: p.trainable,
                    values: p.value.iter().map(|&v| v as f32).collect(),
                })
                .collect(),
        }
    }

    pub fn dropout_p(&self) -> f64 {
        self.spec.dropout_p()
    }

    /// Copies stored values into `graph`; names and shapes must match.
    pub fn restore_into(&self, graph: &mut ModelGraph) -> Result<(), ModelError> {
        if graph.spec() != &self.spec {
            return Err(err("architecture spec differs from the graph"));
        }
        let mut params = graph.params_mut();
        if params.len() != self.params.len() {
            return Err(err(format!(
                "graph has {} arrays, checkpoint has {}",
                params.len(),
                self.params.len()
            )));
        }
        for (p, a) in params.iter_mut().zip(&self.params) {
            if p.name != a.name || p.shape != a.shape {
                return Err(err(format!(
                    "array mismatch: graph {} {:?} vs checkpoint {} {:?}",
                    p.name, p.shape, a.name, a.shape
                )));
            }
            for (dst, &src) in p.value.iter_mut().zip(&a.values) {
                *dst = src as f64;
            }
        }
        Ok(())
    }

    pub fn to_graph(&self) -> Result<ModelGraph, ModelError> {
        let mut graph = ModelGraph::build(self.spec.clone(), 0);
        self.restore_into(&mut graph)?;
        Ok(graph)
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut index = Vec::with_capacity(self.params.len());
        let mut offset = 0;
        for a in &self.params {
            index.push(IndexEntry {
                name: a.name.clone(),
                byte_offset: offset,
                shape: a.shape.clone(),
                trainable: a.trainable,
            });
            offset += 4 * a.values.len();
        }
        let header = Header {
            arch: self.arch,
            fs_hz: self.fs_hz,
            fold_index: self.fold_index,
            dropout_p: self.spec.dropout_p(),
            best_epoch: self.best_epoch,
            best_val_f1: self.best_val_f1,
            config_hash: self.config_hash.clone(),
            spec: self.spec.clone(),
            index,
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::with_capacity(12 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&[0, 0, 0]);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        for a in &self.params {
            for v in &a.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        if bytes.len() < 12 || &bytes[0..4] != CHECKPOINT_MAGIC {
            return Err(err("bad magic"));
        }
        if bytes[4] != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", bytes[4])));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let body = &bytes[12..];
        if body.len() < hlen {
            return Err(err("truncated header"));
        }
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| err(format!("header: {e}")))?;
        let payload = &body[hlen..];
        let mut params = Vec::with_capacity(header.index.len());
        for e in header.index {
            let n: usize = e.shape.iter().product();
            let end = e.byte_offset + 4 * n;
            if end > payload.len() {
                return Err(err(format!("array {} runs past the payload", e.name)));
            }
            let values = payload[e.byte_offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            params.push(NamedArray {
                name: e.name,
                shape: e.shape,
                trainable: e.trainable,
                values,
            });
        }
        Ok(ModelCheckpoint {
            arch: header.arch,
            fs_hz: header.fs_hz,
            fold_index: header.fold_index,
            spec: header.spec.with_dropout(header.dropout_p),
            best_epoch: header.best_epoch,
            best_val_f1: header.best_val_f1,
            config_hash: header.config_hash,
            params,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ModelError> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ModelError> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| ModelError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::decode(&bytes)
    }
}
