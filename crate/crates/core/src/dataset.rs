//! Single-file dataset container.
//!
//! Layout: `MAGIC`, little-endian `u32` format version, `u64` manifest length,
//! the manifest as JSON, then the records back to back. Each record is a
//! `u32` byte length followed by the id (`u32` length + UTF-8), the face
//! count `n` as `u32` and `9n` coordinate bytes in canonical order.
//! Manifest offsets are relative to the first record.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::mesh::{from_sequence, to_sequence, FaceSequence, QuantizedMesh};
use crate::rng::fnv1a;
use crate::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PVMDATA\0";
pub const FORMAT_VERSION: u32 = 1;
pub const TEST_FRACTION: f64 = 0.1;
pub const MIN_TEST: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::Config(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub id: String,
    /// Source file stem; augmented copies share it and its split.
    pub source: String,
    pub split: Split,
    pub offset: u64,
    pub num_faces: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dropped {
    pub id: String,
    pub reason: String,
}

/// Everything needed to reproduce the records from the source files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessing {
    pub bits: u32,
    pub max_faces: usize,
    pub augment: usize,
    pub seed: u64,
    pub eta_select: f64,
    pub eta_drop: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub preprocessing: Preprocessing,
    pub records: Vec<RecordEntry>,
    pub dropped: Vec<Dropped>,
}

impl DatasetManifest {
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.records
            .iter()
            .filter(|r| r.split == split)
            .map(|r| r.id.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != FORMAT_VERSION {
            return Err(Error::Dataset(format!(
                "unsupported version {}",
                self.version
            )));
        }
        for w in self.records.windows(2) {
            if w[1].offset <= w[0].offset {
                return Err(Error::Dataset("record offsets not increasing".into()));
            }
        }
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if !seen.insert(&r.id) {
                return Err(Error::Dataset(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub split: Split,
    pub mesh: QuantizedMesh,
}

/// Assigns test membership per source id: sources are ranked by FNV-1a hash
/// of the id and the first `max(MIN_TEST, round(10%))` go to test, always
/// leaving at least one training source.
pub fn assign_splits(sources: &[String]) -> Vec<Split> {
    let n = sources.len();
    let wanted = ((n as f64 * TEST_FRACTION).round() as usize).max(MIN_TEST);
    let test_count = wanted.min(n.saturating_sub(1));
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&i| (fnv1a(sources[i].as_bytes()), i));
    let mut out = vec![Split::Train; n];
    for &i in &order[..test_count] {
        out[i] = Split::Test;
    }
    out
}

fn encode_record(id: &str, mesh: &QuantizedMesh) -> Vec<u8> {
    let coords = to_sequence(mesh).into_coords();
    let mut body = Vec::with_capacity(12 + id.len() + coords.len());
    body.extend_from_slice(&(id.len() as u32).to_le_bytes());
    body.extend_from_slice(id.as_bytes());
    body.extend_from_slice(&((coords.len() / 9) as u32).to_le_bytes());
    body.extend_from_slice(&coords);
    let mut out = Vec::with_capacity(body.len() + 4);
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&body);
    out
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
            .ok_or_else(|| Error::Dataset("truncated container".into()))?;
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

fn decode_record(body: &[u8]) -> Result<(String, QuantizedMesh)> {
    let mut r = Reader {
        bytes: body,
        pos: 0,
    };
    let id_len = r.u32()? as usize;
    let id = String::from_utf8(r.take(id_len)?.to_vec())
        .map_err(|_| Error::Dataset("record id is not UTF-8".into()))?;
    let n = r.u32()? as usize;
    let coords = r.take(9 * n)?.to_vec();
    if r.pos != body.len() {
        return Err(Error::Dataset(format!("record {id}: trailing bytes")));
    }
    let (mesh, dropped) = from_sequence(&FaceSequence::new(coords)?)?;
    if dropped > 0 || mesh.num_faces() != n {
        return Err(Error::Dataset(format!(
            "record {id}: degenerate faces stored"
        )));
    }
    Ok((id, mesh))
}

/// An in-memory dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<Record>,
}

/// One mesh to be stored, tagged with the source it came from.
pub struct PendingRecord {
    pub id: String,
    pub source: String,
    pub mesh: QuantizedMesh,
}

impl Dataset {
    /// Builds the manifest (splits and offsets) for already-processed meshes.
    pub fn build(
        pending: Vec<PendingRecord>,
        dropped: Vec<Dropped>,
        preprocessing: Preprocessing,
    ) -> Result<Self> {
        let sources: Vec<String> = pending
            .iter()
            .map(|p| p.source.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect();
        let splits = assign_splits(&sources);
        let split_of = |s: &str| splits[sources.binary_search_by(|x| x.as_str().cmp(s)).unwrap()];
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(pending.len());
        let mut records = Vec::with_capacity(pending.len());
        for p in pending {
            let split = split_of(&p.source);
            entries.push(RecordEntry {
                id: p.id.clone(),
                source: p.source,
                split,
                offset,
                num_faces: p.mesh.num_faces(),
            });
            offset += encode_record(&p.id, &p.mesh).len() as u64;
            records.push(Record {
                id: p.id,
                split,
                mesh: p.mesh,
            });
        }
        let manifest = DatasetManifest {
            version: FORMAT_VERSION,
            preprocessing,
            records: entries,
            dropped,
        };
        manifest.validate()?;
        Ok(Dataset { manifest, records })
    }

    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = serde_json::to_vec(&self.manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for r in &self.records {
            out.extend_from_slice(&encode_record(&r.id, &r.mesh));
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Dataset("not a dataset container".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Dataset(format!("unsupported version {version}")));
        }
        let len = r.u64()? as usize;
        let manifest: DatasetManifest = serde_json::from_slice(r.take(len)?)?;
        manifest.validate()?;
        let base = r.pos;
        let mut records = Vec::with_capacity(manifest.records.len());
        for entry in &manifest.records {
            if (r.pos - base) as u64 != entry.offset {
                return Err(Error::Dataset(format!(
                    "record {}: offset mismatch",
                    entry.id
                )));
            }
            let size = r.u32()? as usize;
            let (id, mesh) = decode_record(r.take(size)?)?;
            if id != entry.id {
                return Err(Error::Dataset(format!(
                    "record {id}: manifest says {}",
                    entry.id
                )));
            }
            records.push(Record {
                id,
                split: entry.split,
                mesh,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Dataset("trailing bytes after last record".into()));
        }
        Ok(Dataset { manifest, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::nn::checkpoint::write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
