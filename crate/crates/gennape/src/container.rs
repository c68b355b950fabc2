//! Flat binary persistence for model weights: magic bytes "GNPE", a format
//! version, then named tensors as (name length, name bytes, rank, dims,
//! little-endian f64 data), closed by a SHA-256 checksum of everything
//! before it.

use crate::nn::ParamSet;
use crate::tape::Tensor;
use sha2::{Digest, Sha256};
use std::path::Path;
use thiserror::Error;

pub const MAGIC: &[u8; 4] = b"GNPE";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a tensor container (bad magic)")]
    BadMagic,
    #[error("VersionMismatch: file version {found}, supported {supported}")]
    VersionMismatch { found: u32, supported: u32 },
    #[error("ChecksumError: stored digest does not match contents")]
    Checksum,
    #[error("truncated or malformed container at byte {0}")]
    Truncated(usize),
    #[error("missing tensor {0:?}")]
    Missing(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<usize>,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    entries: Vec<Entry>,
}

impl Container {
    pub fn new() -> Self {
        Container::default()
    }

    pub fn push(&mut self, name: impl Into<String>, dims: Vec<usize>, data: Vec<f64>) {
        let name = name.into();
        assert_eq!(dims.iter().product::<usize>(), data.len(), "dims/data mismatch for {name}");
        assert!(self.get(&name).is_none(), "duplicate tensor {name}");
        self.entries.push(Entry { name, dims, data });
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, v: f64) {
        self.push(name, vec![1], vec![v]);
    }

    pub fn push_vec(&mut self, name: impl Into<String>, v: &[f64]) {
        self.push(name, vec![v.len()], v.to_vec());
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Entry, ContainerError> {
        self.get(name).ok_or_else(|| ContainerError::Missing(name.to_string()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64, ContainerError> {
        Ok(self.require(name)?.data[0])
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// Store every tensor of a ParamSet under `prefix.name`.
    pub fn push_param_set(&mut self, prefix: &str, params: &ParamSet) {
        self.push_scalar(format!("{prefix}.__len"), params.len() as f64);
        for (i, (name, t)) in params.iter().enumerate() {
            self.push_vec(format!("{prefix}.__name{i}"), &encode_name(name));
            self.push(format!("{prefix}.{name}"), vec![t.rows, t.cols], t.data.clone());
        }
    }

    pub fn param_set(&self, prefix: &str) -> Result<ParamSet, ContainerError> {
        let len = self.scalar(&format!("{prefix}.__len"))? as usize;
        let mut params = ParamSet::new();
        for i in 0..len {
            let name = decode_name(&self.require(&format!("{prefix}.__name{i}"))?.data);
            let e = self.require(&format!("{prefix}.{name}"))?;
            let (rows, cols) = match e.dims.as_slice() {
                [r, c] => (*r, *c),
                _ => return Err(ContainerError::Truncated(0)),
            };
            params.push(name, Tensor::from_vec(rows, cols, e.data.clone()));
        }
        Ok(params)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for &d in &e.dims {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ContainerError> {
        if bytes.len() < 4 + 4 + 4 + 32 {
            return Err(ContainerError::Truncated(bytes.len()));
        }
        if &bytes[..4] != MAGIC {
            return Err(ContainerError::BadMagic);
        }
        let (body, stored) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stored {
            return Err(ContainerError::Checksum);
        }
        let mut pos = 4;
        let u32_at = |p: &mut usize| -> Result<u32, ContainerError> {
            let end = *p + 4;
            if end > body.len() {
                return Err(ContainerError::Truncated(*p));
            }
            let v = u32::from_le_bytes(body[*p..end].try_into().unwrap());
            *p = end;
            Ok(v)
        };
        let version = u32_at(&mut pos)?;
        if version != VERSION {
            return Err(ContainerError::VersionMismatch { found: version, supported: VERSION });
        }
        let count = u32_at(&mut pos)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = u32_at(&mut pos)? as usize;
            if pos + name_len > body.len() {
                return Err(ContainerError::Truncated(pos));
            }
            let name = String::from_utf8(body[pos..pos + name_len].to_vec())
                .map_err(|_| ContainerError::Truncated(pos))?;
            pos += name_len;
            let rank = u32_at(&mut pos)? as usize;
            let mut dims = Vec::with_capacity(rank);
            for _ in 0..rank {
                if pos + 8 > body.len() {
                    return Err(ContainerError::Truncated(pos));
                }
                dims.push(u64::from_le_bytes(body[pos..pos + 8].try_into().unwrap()) as usize);
                pos += 8;
            }
            let n: usize = dims.iter().product();
            if pos + 8 * n > body.len() {
                return Err(ContainerError::Truncated(pos));
            }
            let data = (0..n)
                .map(|i| f64::from_le_bytes(body[pos + 8 * i..pos + 8 * (i + 1)].try_into().unwrap()))
                .collect();
            pos += 8 * n;
            entries.push(Entry { name, dims, data });
        }
        if pos != body.len() {
            return Err(ContainerError::Truncated(pos));
        }
        Ok(Container { entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), ContainerError> {
        Ok(std::fs::write(path, self.to_bytes())?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, ContainerError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn encode_name(name: &str) -> Vec<f64> {
    name.bytes().map(|b| b as f64).collect()
}

fn decode_name(data: &[f64]) -> String {
    data.iter().map(|&v| v as u8 as char).collect()
}
