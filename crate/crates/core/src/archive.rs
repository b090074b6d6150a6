//! Named-tensor archive.
//!
//! ```text
//! magic            8 bytes   "DCGTARCH"
//! format version   u32 LE
//! header length    u64 LE
//! header           UTF-8 JSON: config_hash, metadata, and one
//!                  {name, dtype, shape, offset} record per tensor
//! payload          little-endian tensor data; offsets are relative to
//!                  the first payload byte
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"DCGTARCH";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config_hash: String,
    metadata: serde_json::Value,
    tensors: Vec<Record>,
}

#[derive(Serialize, Deserialize)]
struct Record {
    name: String,
    dtype: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub config_hash: String,
    pub metadata: serde_json::Value,
    pub tensors: Vec<(String, Tensor)>,
}

impl Archive {
    pub fn new(config_hash: impl Into<String>, metadata: serde_json::Value) -> Self {
        Archive { config_hash: config_hash.into(), metadata, tensors: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        self.tensors.push((name.into(), t));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut records = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            records.push(Record { name: name.clone(), dtype: "f64".into(), shape: t.shape().to_vec(), offset });
            offset += 8 * t.len() as u64;
        }
        let header =
            Header { config_hash: self.config_hash.clone(), metadata: self.metadata.clone(), tensors: records };
        let header = serde_json::to_vec(&header).map_err(|e| Error::Archive(e.to_string()))?;
        let mut out = Vec::with_capacity(20 + header.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, t) in &self.tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(Error::Archive("not a tensor archive".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(Error::Version { found: version, expected: FORMAT_VERSION });
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Archive("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&bytes[20..header_end]).map_err(|e| Error::Archive(format!("bad header: {e}")))?;
        let payload = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for r in header.tensors {
            if r.dtype != "f64" {
                return Err(Error::Archive(format!("tensor {} has unsupported dtype {}", r.name, r.dtype)));
            }
            let n: usize = r.shape.iter().product();
            let start = r.offset as usize;
            let end = start + 8 * n;
            if end > payload.len() {
                return Err(Error::Archive(format!("tensor {} runs past the payload", r.name)));
            }
            let data = payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((r.name, Tensor::new(r.shape, data)?));
        }
        Ok(Archive { config_hash: header.config_hash, metadata: header.metadata, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Hex SHA-256 of `bytes`.
pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
