//! Binary weight files.
//!
//! Layout (little-endian): the magic bytes, a `u32` version, a `u32` length
//! plus a JSON header, a `u32` record count, then one record per tensor:
//! `u32` name length, UTF-8 name, `u32` rank, `rank × u64` dims and the raw
//! `f32` payload.

use std::io::Write;
use std::path::Path;

use serde_json::Value;

use super::{ParameterStore, Tensor};
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PVMCKPT\0";
pub const VERSION: u32 = 1;
pub const ADAM_M_PREFIX: &str = "__adam_m/";
pub const ADAM_V_PREFIX: &str = "__adam_v/";

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Value,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn new(header: Value) -> Self {
        Checkpoint {
            header,
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        self.tensors.push(NamedTensor {
            name: name.into(),
            shape,
            data,
        });
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Adds every parameter of `store` and its two optimizer moments.
    pub fn add_store(&mut self, store: &ParameterStore<f32>) {
        for e in &store.entries {
            let shape = e.tensor.shape().to_vec();
            self.push(e.name.clone(), shape.clone(), e.tensor.data().to_vec());
            self.push(
                format!("{ADAM_M_PREFIX}{}", e.name),
                shape.clone(),
                e.m.clone(),
            );
            self.push(format!("{ADAM_V_PREFIX}{}", e.name), shape, e.v.clone());
        }
    }

    /// Overwrites parameters (and moments when present) of a store built
    /// with the same architecture.
    pub fn load_store(&self, store: &mut ParameterStore<f32>) -> Result<()> {
        for e in &mut store.entries {
            let t = self
                .get(&e.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {:?}", e.name)))?;
            if t.shape != e.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?}: shape {:?} vs expected {:?}",
                    e.name,
                    t.shape,
                    e.tensor.shape()
                )));
            }
            e.tensor = Tensor::new(t.shape.clone(), t.data.clone())?;
            if let Some(m) = self.get(&format!("{ADAM_M_PREFIX}{}", e.name)) {
                e.m = m.data.clone();
            }
            if let Some(v) = self.get(&format!("{ADAM_V_PREFIX}{}", e.name)) {
                e.v = v.data.clone();
            }
        }
        store.step = self.header.get("step").and_then(Value::as_u64).unwrap_or(0);
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header)?;
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let hlen = r.u32()? as usize;
        let header = serde_json::from_slice(r.take(hlen)?)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        for _ in 0..count {
            let nlen = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(nlen)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?
                .to_string();
            let rank = r.u32()? as usize;
            let mut shape = Vec::with_capacity(rank.min(8));
            for _ in 0..rank {
                shape.push(
                    usize::try_from(r.u64()?)
                        .map_err(|_| Error::Checkpoint("dimension overflow".into()))?,
                );
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Checkpoint("dimension overflow".into()))?;
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("too large".into()))?,
            )?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push(NamedTensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { header, tensors })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = std::path::PathBuf::from(tmp);
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
