//! Binary checkpoint format.
//!
//! ```text
//! "CRMD" | u32 version | u32 len | TOML manifest | u32 count |
//!   count × (u32 name_len | name | u32 rank | rank × u32 dim | f32 payload)
//! ```
//! All integers and floats are little-endian. Tensors appear in canonical
//! parameter order.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::{ArchConfig, Model, Weights};
use crate::imaging::DegradationSpace;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"CRMD";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic bytes)")]
    NotACheckpoint,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("bad manifest: {0}")]
    Manifest(String),
    #[error("architecture mismatch in {field}: expected {expected}, found {found}")]
    ArchMismatch {
        field: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("tensor mismatch: {0}")]
    TensorMismatch(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cresmd,
    Baseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: ModelKind,
    pub arch: ArchConfig,
    pub space: DegradationSpace,
}

/// A decoded checkpoint and the SHA-256 of its bytes.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub digest: String,
}

impl Checkpoint {
    pub fn kind(&self) -> ModelKind {
        if self.model.is_baseline() {
            ModelKind::Baseline
        } else {
            ModelKind::Cresmd
        }
    }
}

pub fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode(model: &Model<f32>) -> Vec<u8> {
    let manifest = Manifest {
        kind: if model.is_baseline() {
            ModelKind::Baseline
        } else {
            ModelKind::Cresmd
        },
        arch: model.arch,
        space: model.space.clone(),
    };
    let text = toml::to_string(&manifest).expect("manifest serializes");
    let named = model.weights.named();
    let mut out = Vec::with_capacity(64 + text.len() + 4 * model.param_count().total());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    put_u32(&mut out, text.len());
    out.extend_from_slice(text.as_bytes());
    put_u32(&mut out, named.len());
    for (name, t) in named {
        put_u32(&mut out, name.len());
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len());
        for &d in t.shape() {
            put_u32(&mut out, d);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        if self.buf.len() < n {
            return Err(CheckpointError::Truncated(what));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u32(&mut self, what: &'static str) -> Result<usize, CheckpointError> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<Model<f32>, CheckpointError> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(CheckpointError::NotACheckpoint);
    }
    let mut r = Reader { buf: &bytes[4..] };
    let version = r.u32("version")? as u32;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len = r.u32("manifest length")?;
    let text = std::str::from_utf8(r.take(len, "manifest")?).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    let manifest: Manifest = toml::from_str(text).map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    manifest.arch.validate().map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    manifest.space.validate().map_err(|e| CheckpointError::Manifest(e.to_string()))?;
    if manifest.space.len() != manifest.arch.condition_dim {
        return Err(CheckpointError::Manifest(format!(
            "space has {} dimensions, condition_dim is {}",
            manifest.space.len(),
            manifest.arch.condition_dim
        )));
    }

    let shapes = Weights::shapes(&manifest.arch, manifest.kind == ModelKind::Cresmd);
    let expected = shapes.named();
    let count = r.u32("tensor count")?;
    if count != expected.len() {
        return Err(CheckpointError::TensorMismatch(format!(
            "{count} tensors, architecture needs {}",
            expected.len()
        )));
    }
    let mut tensors = Vec::with_capacity(count);
    for (want_name, want_shape) in &expected {
        let n = r.u32("tensor name length")?;
        let name = r.take(n, "tensor name")?;
        if name != want_name.as_bytes() {
            return Err(CheckpointError::TensorMismatch(format!(
                "expected {want_name}, found {}",
                String::from_utf8_lossy(name)
            )));
        }
        let rank = r.u32("tensor rank")?;
        let shape = (0..rank).map(|_| r.u32("tensor shape")).collect::<Result<Vec<_>, _>>()?;
        if &&shape != want_shape {
            return Err(CheckpointError::TensorMismatch(format!(
                "{want_name}: expected shape {want_shape:?}, found {shape:?}"
            )));
        }
        let numel: usize = shape.iter().product();
        let data = r
            .take(4 * numel, "tensor payload")?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect::<Vec<_>>();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(CheckpointError::TensorMismatch(format!("{want_name} holds non-finite values")));
        }
        tensors.push(Tensor::new(shape, data).map_err(|e| CheckpointError::TensorMismatch(e.to_string()))?);
    }
    if !r.buf.is_empty() {
        return Err(CheckpointError::TensorMismatch(format!("{} trailing bytes", r.buf.len())));
    }
    let mut it = tensors.into_iter();
    let weights = shapes.map(|_, _| it.next().expect("count checked"));
    Ok(Model {
        arch: manifest.arch,
        space: manifest.space,
        weights,
    })
}

/// Writes the checkpoint and returns its digest.
pub fn save_checkpoint(path: impl AsRef<Path>, model: &Model<f32>) -> Result<String, CheckpointError> {
    let bytes = encode(model);
    std::fs::write(path, &bytes)?;
    Ok(digest(&bytes))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let bytes = std::fs::read(path)?;
    let model = decode(&bytes)?;
    Ok(Checkpoint {
        model,
        digest: digest(&bytes),
    })
}

/// Loads a checkpoint and fails with the first differing field if its
/// architecture is not `arch`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, arch: &ArchConfig) -> Result<Checkpoint, CheckpointError> {
    let ck = load_checkpoint(path)?;
    if let Some((field, expected, found)) = ck.model.arch.first_difference(arch) {
        return Err(CheckpointError::ArchMismatch { field, expected, found });
    }
    Ok(ck)
}
