//! On-disk block representation store (`BREPSST1`).
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! header   magic "BREPSST1" | dim u32 | doc_count u64 | created_unix_seconds u64
//! docs     per document: id_len u32 | id bytes | n_blocks u32 | n_blocks * dim f32
//! index    per document: id_len u32 | id bytes | offset u64 (of the doc record)
//! ```

use std::collections::HashMap;
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::embed::Representation;
use crate::error::{Error, Result};

pub const STORE_MAGIC: &[u8; 8] = b"BREPSST1";
pub const HEADER_LEN: usize = 28;
const DOC_COUNT_OFFSET: u64 = 12;
const CREATED_RANGE: std::ops::Range<usize> = 20..28;

#[derive(Debug, Clone, PartialEq)]
pub struct StoredDocument {
    pub doc_id: String,
    pub block_vectors: Vec<Representation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StoreSummary {
    pub doc_count: u64,
    pub block_count: u64,
}

pub fn validate_doc_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(['\n', '\r']) {
        return Err(Error::InvalidDocId(id.to_string()));
    }
    Ok(())
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Streaming store writer. The file appears at its final path only after
/// [`StoreWriter::finish`] succeeds.
pub struct StoreWriter {
    path: PathBuf,
    dim: usize,
    out: BufWriter<NamedTempFile>,
    offset: u64,
    index: Vec<(String, u64)>,
    seen: HashMap<String, ()>,
    block_count: u64,
}

impl StoreWriter {
    pub fn create(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        Self::create_with_timestamp(path, dim, now_unix())
    }

    pub fn create_with_timestamp(path: impl AsRef<Path>, dim: usize, created: u64) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if dim == 0 || dim > u32::MAX as usize {
            return Err(Error::InvalidArgument(format!(
                "invalid store dimension {dim}"
            )));
        }
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
            _ => PathBuf::from("."),
        };
        let tmp = NamedTempFile::new_in(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut out = BufWriter::new(tmp);
        let mut header = Vec::with_capacity(HEADER_LEN);
        header.extend_from_slice(STORE_MAGIC);
        header.extend_from_slice(&(dim as u32).to_le_bytes());
        header.extend_from_slice(&0u64.to_le_bytes());
        header.extend_from_slice(&created.to_le_bytes());
        out.write_all(&header).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            dim,
            out,
            offset: HEADER_LEN as u64,
            index: Vec::new(),
            seen: HashMap::new(),
            block_count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn add(&mut self, doc: &StoredDocument) -> Result<()> {
        validate_doc_id(&doc.doc_id)?;
        if self.seen.contains_key(&doc.doc_id) {
            return Err(Error::DuplicateDocId(doc.doc_id.clone()));
        }
        for v in &doc.block_vectors {
            if v.dim() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    actual: v.dim(),
                });
            }
        }
        let id = doc.doc_id.as_bytes();
        let mut rec = Vec::with_capacity(8 + id.len() + doc.block_vectors.len() * self.dim * 4);
        rec.extend_from_slice(&(id.len() as u32).to_le_bytes());
        rec.extend_from_slice(id);
        rec.extend_from_slice(&(doc.block_vectors.len() as u32).to_le_bytes());
        for v in &doc.block_vectors {
            for x in v.iter() {
                rec.extend_from_slice(&x.to_le_bytes());
            }
        }
        self.out
            .write_all(&rec)
            .map_err(|e| Error::io(&self.path, e))?;
        self.index.push((doc.doc_id.clone(), self.offset));
        self.seen.insert(doc.doc_id.clone(), ());
        self.offset += rec.len() as u64;
        self.block_count += doc.block_vectors.len() as u64;
        Ok(())
    }

    pub fn finish(mut self) -> Result<StoreSummary> {
        let io = |e| Error::io(&self.path, e);
        let mut idx = Vec::new();
        for (id, off) in &self.index {
            idx.extend_from_slice(&(id.len() as u32).to_le_bytes());
            idx.extend_from_slice(id.as_bytes());
            idx.extend_from_slice(&off.to_le_bytes());
        }
        self.out.write_all(&idx).map_err(io)?;
        let doc_count = self.index.len() as u64;
        let mut tmp = self.out.into_inner().map_err(|e| io(e.into_error()))?;
        tmp.seek(SeekFrom::Start(DOC_COUNT_OFFSET)).map_err(io)?;
        tmp.write_all(&doc_count.to_le_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        tmp.persist(&self.path)
            .map_err(|e| Error::io(&self.path, e.error))?;
        Ok(StoreSummary {
            doc_count,
            block_count: self.block_count,
        })
    }
}

/// Write `documents` to a new store at `path`.
pub fn write_store<'a, I>(path: impl AsRef<Path>, documents: I, dim: usize) -> Result<StoreSummary>
where
    I: IntoIterator<Item = &'a StoredDocument>,
{
    let mut w = StoreWriter::create(path, dim)?;
    for d in documents {
        w.add(d)?;
    }
    w.finish()
}

/// Read-only, fully loaded store handle.
#[derive(Debug, Clone)]
pub struct Store {
    bytes: Vec<u8>,
    dim: usize,
    created_unix_seconds: u64,
    order: Vec<(String, usize)>,
    index: HashMap<String, usize>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::TruncatedFile(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn id(&mut self) -> Result<String> {
        let len = self.u32("id length")? as usize;
        let raw = self.take(len, "id bytes")?;
        String::from_utf8(raw.to_vec())
            .map_err(|_| Error::Corrupt(format!("non-UTF-8 doc id at byte {}", self.pos)))
    }
}

pub fn read_store(path: impl AsRef<Path>) -> Result<Store> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Store::from_bytes(bytes)
}

impl Store {
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::TruncatedFile("header".into()));
        }
        let magic: [u8; 8] = bytes[..8].try_into().unwrap();
        if &magic != STORE_MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let mut c = Cursor {
            bytes: &bytes,
            pos: 8,
        };
        let dim = c.u32("dim")? as usize;
        let doc_count = c.u64("doc count")?;
        let created = c.u64("timestamp")?;
        if dim == 0 {
            return Err(Error::Corrupt("zero dimension".into()));
        }

        let mut order = Vec::new();
        for _ in 0..doc_count {
            let off = c.pos;
            let id = c.id()?;
            let n_blocks = c.u32("block count")? as usize;
            let payload = n_blocks
                .checked_mul(dim * 4)
                .ok_or_else(|| Error::Corrupt("block count overflow".into()))?;
            c.take(payload, "block vectors")?;
            order.push((id, off));
        }
        let mut index = HashMap::with_capacity(order.len());
        for (id, off) in &order {
            let iid = c.id()?;
            let ioff = c.u64("index offset")? as usize;
            if &iid != id || ioff != *off {
                return Err(Error::Corrupt(format!(
                    "index entry for {iid:?} disagrees with data"
                )));
            }
            if index.insert(iid.clone(), ioff).is_some() {
                return Err(Error::DuplicateDocId(iid));
            }
        }
        if c.pos != bytes.len() {
            return Err(Error::Corrupt(format!(
                "{} trailing bytes after index",
                bytes.len() - c.pos
            )));
        }
        Ok(Self {
            bytes,
            dim,
            created_unix_seconds: created,
            order,
            index,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn created_unix_seconds(&self) -> u64 {
        self.created_unix_seconds
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.index.contains_key(doc_id)
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(|(id, _)| id.as_str())
    }

    fn decode(&self, doc_id: &str, off: usize) -> StoredDocument {
        // Offsets were validated at open.
        let mut c = Cursor {
            bytes: &self.bytes,
            pos: off,
        };
        let _ = c.id().expect("validated id");
        let n = c.u32("block count").expect("validated count") as usize;
        let raw = c
            .take(n * self.dim * 4, "vectors")
            .expect("validated payload");
        let block_vectors = raw
            .chunks_exact(self.dim * 4)
            .map(|row| {
                Representation(
                    row.chunks_exact(4)
                        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                        .collect(),
                )
            })
            .collect();
        StoredDocument {
            doc_id: doc_id.to_string(),
            block_vectors,
        }
    }

    /// `None` when the id is not in the store.
    pub fn get(&self, doc_id: &str) -> Option<StoredDocument> {
        self.index.get(doc_id).map(|&off| self.decode(doc_id, off))
    }

    pub fn block_count(&self, doc_id: &str) -> Option<usize> {
        self.index.get(doc_id).map(|&off| {
            let id_len = u32::from_le_bytes(self.bytes[off..off + 4].try_into().unwrap()) as usize;
            let p = off + 4 + id_len;
            u32::from_le_bytes(self.bytes[p..p + 4].try_into().unwrap()) as usize
        })
    }

    /// Documents in file order.
    pub fn iter(&self) -> impl Iterator<Item = StoredDocument> + '_ {
        self.order.iter().map(|(id, off)| self.decode(id, *off))
    }

    pub fn summary(&self) -> StoreSummary {
        StoreSummary {
            doc_count: self.order.len() as u64,
            block_count: self
                .doc_ids()
                .map(|id| self.block_count(id).unwrap_or(0) as u64)
                .sum(),
        }
    }

    /// Raw file bytes with the creation timestamp zeroed.
    pub fn payload(&self) -> Vec<u8> {
        let mut b = self.bytes.clone();
        b[CREATED_RANGE].fill(0);
        b
    }
}
