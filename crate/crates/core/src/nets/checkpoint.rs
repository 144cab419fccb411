//! Self-describing binary parameter container.
//!
//! Layout: 8-byte magic, `u32` format version, `u64` header length, JSON
//! header, little-endian `f32` payloads in header order, then a SHA-256 of
//! everything before it.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::tensorcore::{ParamStore, Parameter, Tensor};

pub const MAGIC: &[u8; 8] = b"BLABCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint I/O on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint format version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

/// One step of the chain of stages that produced a checkpoint.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub stage: String,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub fingerprint: String,
    pub provenance: Vec<Provenance>,
    pub meta: serde_json::Value,
    pub params: ParamStore<f32>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    fingerprint: String,
    provenance: Vec<Provenance>,
    meta: serde_json::Value,
    tensors: Vec<TensorHeader>,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

impl Checkpoint {
    pub fn new(kind: impl Into<String>, fingerprint: impl Into<String>, params: ParamStore<f32>) -> Self {
        Self {
            kind: kind.into(),
            fingerprint: fingerprint.into(),
            provenance: Vec::new(),
            meta: serde_json::Value::Null,
            params,
        }
    }

    /// Whether a stage of this name appears in the provenance chain.
    pub fn has_stage(&self, stage: &str) -> bool {
        self.provenance.iter().any(|p| p.stage == stage)
    }

    fn check_provenance(chain: &[Provenance]) -> Result<(), CheckpointError> {
        let mut seen = BTreeSet::new();
        for p in chain {
            if !seen.insert(&p.fingerprint) {
                return Err(CheckpointError::Format(format!("provenance cycle at {}", p.fingerprint)));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        Self::check_provenance(&self.provenance)?;
        let header = Header {
            kind: self.kind.clone(),
            fingerprint: self.fingerprint.clone(),
            provenance: self.provenance.clone(),
            meta: self.meta.clone(),
            tensors: self
                .params
                .iter()
                .map(|p| TensorHeader { name: p.name.clone(), shape: p.tensor.shape().to_vec(), trainable: p.trainable })
                .collect(),
        };
        let header = serde_json::to_vec(&header).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let mut out = Vec::with_capacity(24 + header.len() + 4 * self.params.numel() + 32);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for p in self.params.iter() {
            for v in p.tensor.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        if bytes.len() < 20 + 32 {
            return Err(CheckpointError::Format("truncated".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version { found: version, expected: FORMAT_VERSION });
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
        let hend = 20usize.checked_add(hlen).filter(|&e| e <= body.len());
        let hend = hend.ok_or_else(|| CheckpointError::Format("header length out of range".into()))?;
        let header: Header =
            serde_json::from_slice(&body[20..hend]).map_err(|e| CheckpointError::Format(e.to_string()))?;
        Self::check_provenance(&header.provenance)?;
        let mut payload = body[hend..].chunks_exact(4);
        if !payload.remainder().is_empty() {
            return Err(CheckpointError::Format("payload not a whole number of f32".into()));
        }
        let mut params = ParamStore::new();
        for t in header.tensors {
            let n: usize = t.shape.iter().product();
            let data: Vec<f32> = payload
                .by_ref()
                .take(n)
                .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
                .collect();
            if data.len() != n {
                return Err(CheckpointError::Format(format!("payload ends inside {}", t.name)));
            }
            let tensor = Tensor::new(t.shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
            params
                .insert(Parameter::new(t.name, tensor, t.trainable))
                .map_err(|e| CheckpointError::Format(e.to_string()))?;
        }
        if payload.next().is_some() {
            return Err(CheckpointError::Format("trailing payload".into()));
        }
        Ok(Self {
            kind: header.kind,
            fingerprint: header.fingerprint,
            provenance: header.provenance,
            meta: header.meta,
            params,
        })
    }
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let bytes = ckpt.to_bytes()?;
    let io = |source| CheckpointError::Io { path: path.display().to_string(), source };
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path).map_err(|source| CheckpointError::Io { path: path.display().to_string(), source })?;
    Checkpoint::from_bytes(&bytes)
}
