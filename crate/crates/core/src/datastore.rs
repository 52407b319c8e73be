//! The key-value datastore: one (embedding, gold label) pair per training token.
//!
//! KNNS layout (little-endian):
//!
//! ```text
//! magic "KNNS" | version u32 | n u64 | dim u32 | vocab_size u32
//! vocab   vocab_size x (len u32 | UTF-8)
//! values  n x u32
//! keys    n x dim x f32 (row-major)
//! meta    source hash [u8; 32] | build timestamp u64
//! ```

use std::io::{Read, Write};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::binio::{read_preamble, ByteReader, ByteWriter};
use crate::dump::EmbeddingDump;
use crate::error::{Error, Result};
use crate::labels::LabelVocab;

pub const STORE_MAGIC: [u8; 4] = *b"KNNS";
pub const STORE_VERSION: u32 = 1;
/// Bytes outside the vocab, values and keys blocks.
pub const STORE_FIXED_LEN: usize = 4 + 4 + 8 + 4 + 4 + 32 + 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatastoreMeta {
    /// SHA-256 of the serialized source dump; all zeros when built from raw parts.
    pub source_hash: [u8; 32],
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    dim: usize,
    keys: Vec<f32>,
    values: Vec<u32>,
    vocab: LabelVocab,
    meta: DatastoreMeta,
}

impl Datastore {
    /// Builds a store from row-major `keys` and their label `values`.
    pub fn from_parts(
        vocab: LabelVocab,
        dim: usize,
        keys: Vec<f32>,
        values: Vec<u32>,
        meta: DatastoreMeta,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("embedding dimension must be positive"));
        }
        if values.is_empty() {
            return Err(Error::EmptyDatastore);
        }
        if keys.len() != values.len() * dim {
            return Err(Error::invalid(format!(
                "{} key floats do not form {} rows of dimension {dim}",
                keys.len(),
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| **v as usize >= vocab.len())
        {
            return Err(Error::invalid(format!(
                "value {v} at entry {i} outside vocabulary of {}",
                vocab.len()
            )));
        }
        if keys.iter().any(|k| !k.is_finite()) {
            return Err(Error::invalid("datastore keys must be finite"));
        }
        Ok(Self {
            dim,
            keys,
            values,
            vocab,
            meta,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn vocab(&self) -> &LabelVocab {
        &self.vocab
    }

    pub fn meta(&self) -> &DatastoreMeta {
        &self.meta
    }

    pub fn keys(&self) -> &[f32] {
        &self.keys
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.dim..(i + 1) * self.dim]
    }

    pub fn value(&self, i: usize) -> u32 {
        self.values[i]
    }

    /// SHA-256 over the keys and values blocks, used to bind an index to its store.
    pub fn entries_hash(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for v in &self.values {
            h.update(v.to_le_bytes());
        }
        for k in &self.keys {
            h.update(k.to_le_bytes());
        }
        h.finalize().into()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        save_datastore(self, &mut out)?;
        Ok(out)
    }
}

/// Seconds since the epoch, honoring `SOURCE_DATE_EPOCH` for reproducible builds.
pub fn build_timestamp() -> u64 {
    if let Some(epoch) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return epoch;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// One entry per dump token, in dump order, stamped with [`build_timestamp`].
pub fn build_datastore(dump: &EmbeddingDump) -> Result<Datastore> {
    build_datastore_at(dump, build_timestamp())
}

pub fn build_datastore_at(dump: &EmbeddingDump, timestamp: u64) -> Result<Datastore> {
    dump.validate()?;
    let n = dump.token_count();
    if n == 0 {
        return Err(Error::EmptyDatastore);
    }
    let mut keys = Vec::with_capacity(n * dump.dim);
    let mut values = Vec::with_capacity(n);
    for (si, sentence) in dump.sentences.iter().enumerate() {
        for (ti, token) in sentence.tokens.iter().enumerate() {
            let gold = token.gold.ok_or(Error::UnlabeledToken {
                sentence: si,
                token: ti,
            })?;
            keys.extend_from_slice(&token.embedding);
            values.push(gold);
        }
    }
    let meta = DatastoreMeta {
        source_hash: dump.content_hash()?,
        timestamp,
    };
    Datastore::from_parts(dump.vocab.clone(), dump.dim, keys, values, meta)
}

pub fn save_datastore<W: Write>(store: &Datastore, sink: W) -> Result<u64> {
    let mut w = ByteWriter::new(sink);
    w.bytes(&STORE_MAGIC)?;
    w.u32(STORE_VERSION)?;
    w.u64(store.len() as u64)?;
    w.u32(store.dim as u32)?;
    w.u32(store.vocab.len() as u32)?;
    for label in store.vocab.labels() {
        w.string(label)?;
    }
    w.u32s(&store.values)?;
    w.f32s(&store.keys)?;
    w.bytes(&store.meta.source_hash)?;
    w.u64(store.meta.timestamp)?;
    w.flush()?;
    Ok(w.offset())
}

pub fn load_datastore<R: Read>(source: R) -> Result<Datastore> {
    let mut r = ByteReader::new(source);
    read_preamble(&mut r, STORE_MAGIC, STORE_VERSION)?;
    let n = r.u64()?;
    if n == 0 {
        return Err(Error::EmptyDatastore);
    }
    let n = usize::try_from(n).map_err(|_| r.corrupt("entry count overflows"))?;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(r.corrupt("embedding dimension is zero"));
    }
    let vocab_size = r.u32()? as usize;
    if vocab_size < 2 {
        return Err(r.corrupt(format!("vocabulary size {vocab_size} is below 2")));
    }
    let vocab_at = r.offset();
    let mut labels = Vec::with_capacity(vocab_size.min(1 << 16));
    for _ in 0..vocab_size {
        labels.push(r.string()?);
    }
    let vocab = LabelVocab::new(labels).map_err(|e| Error::Corrupt {
        offset: vocab_at,
        reason: e.to_string(),
    })?;
    let values_at = r.offset();
    let values = r.u32s(n)?;
    if let Some(i) = values.iter().position(|v| *v as usize >= vocab_size) {
        return Err(Error::Corrupt {
            offset: values_at + 4 * i as u64,
            reason: format!("value {} outside vocabulary of {vocab_size}", values[i]),
        });
    }
    let keys_at = r.offset();
    let count = n
        .checked_mul(dim)
        .ok_or_else(|| r.corrupt("key block size overflows"))?;
    let keys = r.f32s(count)?;
    if let Some(i) = keys.iter().position(|k| !k.is_finite()) {
        return Err(Error::Corrupt {
            offset: keys_at + 4 * i as u64,
            reason: "non-finite key".into(),
        });
    }
    let source_hash = r.array::<32>()?;
    let timestamp = r.u64()?;
    r.expect_eof()?;
    Datastore::from_parts(
        vocab,
        dim,
        keys,
        values,
        DatastoreMeta {
            source_hash,
            timestamp,
        },
    )
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabelCount {
    pub label: String,
    pub count: usize,
    pub frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatastoreStats {
    pub n: usize,
    pub dim: usize,
    /// Every vocabulary label in id order, including labels with zero count.
    pub histogram: Vec<LabelCount>,
}

impl DatastoreStats {
    pub fn count(&self, label: &str) -> usize {
        self.histogram
            .iter()
            .find(|c| c.label == label)
            .map_or(0, |c| c.count)
    }
}

pub fn datastore_stats(store: &Datastore) -> DatastoreStats {
    let mut counts = vec![0usize; store.vocab.len()];
    for &v in &store.values {
        counts[v as usize] += 1;
    }
    let n = store.len();
    let histogram = store
        .vocab
        .labels()
        .iter()
        .zip(counts)
        .map(|(label, count)| LabelCount {
            label: label.clone(),
            count,
            frequency: count as f64 / n as f64,
        })
        .collect();
    DatastoreStats {
        n,
        dim: store.dim,
        histogram,
    }
}
