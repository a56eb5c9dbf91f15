//! `LRCK` checkpoint container.
//!
//! ```text
//! magic        4 bytes  "LRCK"
//! version      u16      1
//! fingerprint  u64      hash of the model configuration
//! count        u32
//! count x {
//!   name_len   u16
//!   name       utf-8
//!   rank       u8
//!   dims       u64 x rank
//!   payload    f32 x prod(dims)
//! }
//! ```

use std::collections::HashSet;
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::tensorfile::{put_shaped_payload, read_bytes, write_bytes, Reader};
use crate::error::{FormatError, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"LRCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// Stable 64-bit hash of a serializable configuration.
pub fn fingerprint<C: Serialize>(cfg: &C) -> u64 {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    let d = Sha256::digest(&json);
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub fingerprint: u64,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, fingerprint: u64) -> Self {
        Self {
            fingerprint,
            tensors: store.iter().map(|p| (p.name.clone(), p.value().clone())).collect(),
        }
    }

    pub fn to_store(&self) -> Result<ParamStore> {
        let mut s = ParamStore::new();
        for (name, t) in &self.tensors {
            s.insert(name, t.clone())?;
        }
        Ok(s)
    }

    pub fn encode(&self) -> std::result::Result<Vec<u8>, FormatError> {
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.fingerprint.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        let mut seen = HashSet::new();
        for (name, t) in &self.tensors {
            if name.is_empty() || name.len() > u16::MAX as usize || !seen.insert(name.as_str()) {
                return Err(FormatError::InvalidName(name.clone()));
            }
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            put_shaped_payload(&mut out, t.shape(), t.data())?;
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> std::result::Result<Self, FormatError> {
        let mut r = Reader::new(bytes);
        r.magic(CHECKPOINT_MAGIC)?;
        r.version(CHECKPOINT_VERSION)?;
        let fingerprint = r.u64()?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let raw = r.take(len)?;
            let name = std::str::from_utf8(raw)
                .map_err(|_| FormatError::InvalidName(String::from_utf8_lossy(raw).into_owned()))?
                .to_string();
            if name.is_empty() || !seen.insert(name.clone()) {
                return Err(FormatError::InvalidName(name));
            }
            let (shape, data) = r.shaped_payload()?;
            tensors.push((name, Tensor::new(shape, data).expect("validated shape")));
        }
        if r.remaining() > 0 {
            return Err(FormatError::TrailingBytes(r.remaining() as u64));
        }
        Ok(Self { fingerprint, tensors })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    write_bytes(path.as_ref(), &ckpt.encode()?)
}

/// Loads a checkpoint. When `expected` is given and differs from the stored
/// fingerprint a warning is logged; the returned flag is `false` in that case.
pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<u64>) -> Result<(Checkpoint, bool)> {
    let path = path.as_ref();
    let ckpt = Checkpoint::decode(&read_bytes(path)?)?;
    let matches = expected.is_none_or(|e| e == ckpt.fingerprint);
    if !matches {
        log::warn!(
            "checkpoint {} was written for config fingerprint {:016x}, current config is {:016x}",
            path.display(),
            ckpt.fingerprint,
            expected.unwrap()
        );
    }
    Ok((ckpt, matches))
}
