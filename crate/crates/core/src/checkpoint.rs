//! Binary model checkpoints.
//!
//! Layout: `NCML` magic, little-endian `u32` format version, `u32` header
//! length, a JSON header, every parameter block as little-endian `f32` in
//! declaration order, then a CRC32 of all preceding bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::write_atomic;
use crate::model::{ModelArch, NcDensityModel};
use crate::sde::SdeSpec;
use crate::Real;

pub const MAGIC: &[u8; 4] = b"NCML";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error, PartialEq)]
pub enum CheckpointError {
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {FORMAT_VERSION})")]
    Version { found: u32 },
    #[error("architecture mismatch: {0}")]
    ArchMismatch(String),
    #[error("malformed checkpoint header: {0}")]
    Header(String),
}

impl CheckpointError {
    /// Stable machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            CheckpointError::Crc { .. } => "checkpoint_crc",
            CheckpointError::BadMagic => "checkpoint_magic",
            CheckpointError::Version { .. } => "checkpoint_version",
            CheckpointError::ArchMismatch(_) => "checkpoint_arch",
            CheckpointError::Header(_) => "checkpoint_header",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockEntry {
    pub name: String,
    pub len: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: ModelArch,
    pub sde: Option<SdeSpec>,
    pub step: u64,
    pub seed: u64,
    pub blocks: Vec<BlockEntry>,
}

/// Training context saved alongside the weights.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct CheckpointMeta {
    pub sde: Option<SdeSpec>,
    pub step: u64,
    pub seed: u64,
}

pub fn encode<S: Real>(model: &NcDensityModel<S>, meta: &CheckpointMeta) -> Vec<u8> {
    let header = CheckpointHeader {
        arch: model.arch().clone(),
        sde: meta.sde.clone(),
        step: meta.step,
        seed: meta.seed,
        blocks: model
            .blocks()
            .iter()
            .map(|b| BlockEntry {
                name: b.name.clone(),
                len: b.data.len(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for b in model.blocks() {
        for v in &b.data {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Decodes a checkpoint. The checksum is verified first, so truncation and
/// bit flips both surface as [`CheckpointError::Crc`].
pub fn decode<S: Real>(bytes: &[u8]) -> Result<(NcDensityModel<S>, CheckpointMeta), CheckpointError> {
    if bytes.len() < 16 {
        return Err(CheckpointError::Crc {
            stored: 0,
            computed: crc32fast::hash(bytes),
        });
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(CheckpointError::Crc { stored, computed });
    }
    if &body[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let version = u32::from_le_bytes(body[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        return Err(CheckpointError::Version { found: version });
    }
    let hlen = u32::from_le_bytes(body[8..12].try_into().unwrap()) as usize;
    let json = body
        .get(12..12 + hlen)
        .ok_or_else(|| CheckpointError::Header("header length exceeds file".into()))?;
    let header: CheckpointHeader =
        serde_json::from_slice(json).map_err(|e| CheckpointError::Header(e.to_string()))?;
    let template = NcDensityModel::<S>::zeroed(header.arch.clone())
        .map_err(|e| CheckpointError::ArchMismatch(e.to_string()))?;
    let expected: Vec<BlockEntry> = template
        .blocks()
        .iter()
        .map(|b| BlockEntry {
            name: b.name.clone(),
            len: b.data.len(),
        })
        .collect();
    if expected != header.blocks {
        return Err(CheckpointError::ArchMismatch(
            "stored blocks do not match the declared architecture".into(),
        ));
    }
    let mut payload = &body[12 + hlen..];
    let total: usize = expected.iter().map(|b| b.len).sum();
    if payload.len() != 4 * total {
        return Err(CheckpointError::ArchMismatch(format!(
            "expected {} parameter bytes, found {}",
            4 * total,
            payload.len()
        )));
    }
    let mut data = Vec::with_capacity(expected.len());
    for b in &expected {
        let (chunk, rest) = payload.split_at(4 * b.len);
        data.push(
            chunk
                .chunks_exact(4)
                .map(|c| S::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
                .collect(),
        );
        payload = rest;
    }
    let model = NcDensityModel::from_blocks(header.arch, data)
        .map_err(|e| CheckpointError::ArchMismatch(e.to_string()))?;
    Ok((
        model,
        CheckpointMeta {
            sde: header.sde,
            step: header.step,
            seed: header.seed,
        },
    ))
}

pub fn save<S: Real>(path: &Path, model: &NcDensityModel<S>, meta: &CheckpointMeta) -> crate::Result<()> {
    write_atomic(path, &encode(model, meta))
}

pub fn load<S: Real>(path: &Path) -> crate::Result<(NcDensityModel<S>, CheckpointMeta)> {
    let bytes = std::fs::read(path)?;
    Ok(decode(&bytes)?)
}

/// Loads a checkpoint and requires its architecture to equal `expected`.
pub fn load_expecting<S: Real>(
    path: &Path,
    expected: &ModelArch,
) -> crate::Result<(NcDensityModel<S>, CheckpointMeta)> {
    let (model, meta) = load(path)?;
    if model.arch() != expected {
        return Err(CheckpointError::ArchMismatch(format!(
            "checkpoint has {:?}, expected {:?}",
            model.arch(),
            expected
        ))
        .into());
    }
    Ok((model, meta))
}
