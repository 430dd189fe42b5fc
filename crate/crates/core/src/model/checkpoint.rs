//! Checkpoint archive.
//!
//! ```text
//! magic      8 bytes   "PNFCKPT\0"
//! version    u32 LE    1
//! meta_len   u32 LE
//! meta       meta_len bytes of UTF-8 JSON {config, marker_stats, metadata}
//! count      u32 LE    number of tensors
//! tensors    count × { name_len u32 LE, name UTF-8, rows u32 LE, cols u32 LE, rows·cols × f32 LE }
//! checksum   32 bytes  SHA-256 of every preceding byte
//! ```
//!
//! Parameters live on the f32 grid (initialization and optimizer steps round to it), so
//! storing them as f32 is lossless. Saving a value that is not exactly representable fails.

use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::BackboneConfig;
use super::Backbone;
use crate::data::MarkerStats;
use crate::error::{Error, Result};
use crate::nn::ParamSet;

const MAGIC: &[u8; 8] = b"PNFCKPT\0";
const VERSION: u32 = 1;
const CHECKSUM_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: BackboneConfig,
    pub params: ParamSet,
    pub marker_stats: MarkerStats,
    pub metadata: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: BackboneConfig,
    marker_stats: MarkerStats,
    #[serde(default)]
    metadata: serde_json::Value,
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    Backbone::bind(ckpt.config.clone(), &ckpt.params)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    let meta = serde_json::to_vec(&Meta {
        config: ckpt.config.clone(),
        marker_stats: ckpt.marker_stats.clone(),
        metadata: ckpt.metadata.clone(),
    })?;
    buf.extend_from_slice(&(meta.len() as u32).to_le_bytes());
    buf.extend_from_slice(&meta);
    buf.extend_from_slice(&(ckpt.params.len() as u32).to_le_bytes());
    for (name, value) in ckpt.params.iter() {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        let (r, c) = value.dim();
        buf.extend_from_slice(&(r as u32).to_le_bytes());
        buf.extend_from_slice(&(c as u32).to_le_bytes());
        for &v in value.iter() {
            let f = v as f32;
            if f64::from(f) != v {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` holds {v}, which is not exactly representable as f32"
                )));
            }
            buf.extend_from_slice(&f.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!("integrity error: unexpected end of data at byte {}", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < MAGIC.len() + 12 + CHECKSUM_LEN {
        return Err(Error::Checkpoint(format!(
            "integrity error: {} is truncated ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    let (body, stored) = bytes.split_at(bytes.len() - CHECKSUM_LEN);
    if Sha256::digest(body).as_slice() != stored {
        return Err(Error::Checkpoint(format!(
            "integrity error: checksum mismatch in {} (truncated or corrupted)",
            path.display()
        )));
    }
    let mut cur = Cursor { bytes: body, pos: 0 };
    if cur.take(MAGIC.len())? != MAGIC {
        return Err(Error::Checkpoint(format!("{} is not a checkpoint file", path.display())));
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = cur.u32()? as usize;
    let meta: Meta = serde_json::from_slice(cur.take(meta_len)?)
        .map_err(|e| Error::Checkpoint(format!("invalid metadata block: {e}")))?;
    meta.config.validate()?;
    let count = cur.u32()? as usize;
    let mut params = ParamSet::default();
    for _ in 0..count {
        let name_len = cur.u32()? as usize;
        let name = std::str::from_utf8(cur.take(name_len)?)
            .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
            .to_string();
        let rows = cur.u32()? as usize;
        let cols = cur.u32()? as usize;
        let raw = cur.take(rows * cols * 4)?;
        let data: Vec<f64> = raw
            .chunks_exact(4)
            .map(|b| f64::from(f32::from_le_bytes(b.try_into().expect("4 bytes"))))
            .collect();
        params.insert(&name, Array2::from_shape_vec((rows, cols), data).expect("sized by header"));
    }
    if cur.pos != body.len() {
        return Err(Error::Checkpoint("trailing bytes after tensor table".into()));
    }
    Backbone::bind(meta.config.clone(), &params)?;
    Ok(Checkpoint {
        config: meta.config,
        params,
        marker_stats: meta.marker_stats,
        metadata: meta.metadata,
    })
}

/// Loads a checkpoint and rejects it unless its configuration equals `expected`.
pub fn load_checkpoint_expecting(path: impl AsRef<Path>, expected: &BackboneConfig) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let diffs = ckpt.config.differences(expected);
    if !diffs.is_empty() {
        return Err(Error::Checkpoint(format!(
            "configuration mismatch (checkpoint vs expected): {}",
            diffs.join("; ")
        )));
    }
    Ok(ckpt)
}

/// Saves and reloads `params` under `config`.
pub fn checkpoint_roundtrip(params: &ParamSet, config: &BackboneConfig, path: impl AsRef<Path>) -> Result<ParamSet> {
    let ckpt = Checkpoint {
        config: config.clone(),
        params: params.clone(),
        marker_stats: MarkerStats::default(),
        metadata: serde_json::Value::Null,
    };
    save_checkpoint(path.as_ref(), &ckpt)?;
    Ok(load_checkpoint_expecting(path, config)?.params)
}
