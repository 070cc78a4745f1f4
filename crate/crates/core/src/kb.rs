//! Exact-search vector knowledge base of known bad-practice slices.
//!
//! # File format
//!
//! ```text
//! {"format":"solaudit-kb","version":1,"dim":1536,"count":N,"checksum":"<sha256 hex>"}
//! {"entry_id":...,"vector":[...],"slice_text":...,"metadata":{...},"inserted_at":0}
//! ...
//! ```
//!
//! The first line is the header; the checksum covers every byte after the
//! header's newline. Entries follow as JSON Lines in insertion order. Floats
//! are written in shortest round-trip decimal form, so a load reproduces
//! every vector bit-exactly.

use std::cmp::Ordering;
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::{RwLock, RwLockReadGuard};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::embedding::EmbeddingVector;
use crate::error::StoreError;
use crate::slicer::{ContextSlice, SliceMetadata};

pub const DEFAULT_THETA: f64 = 0.9;
pub const DEFAULT_TOP_K: usize = 10;
const FORMAT: &str = "solaudit-kb";
const VERSION: u32 = 1;

/// Cosine similarity, clamped to `[-1, 1]`.
pub fn cosine_similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, StoreError> {
    if a.dim() != b.dim() {
        return Err(StoreError::DimMismatch {
            expected: a.dim(),
            got: b.dim(),
        });
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(StoreError::ZeroVector);
    }
    let dot: f64 = a.values().iter().zip(b.values()).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Similarity cut-off; a probe is flagged when some entry scores strictly
/// above it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Threshold(f64);

impl Threshold {
    pub fn new(theta: f64) -> Option<Self> {
        (theta > 0.0 && theta <= 1.0).then_some(Self(theta))
    }

    pub fn theta(self) -> f64 {
        self.0
    }
}

impl Default for Threshold {
    fn default() -> Self {
        Self(DEFAULT_THETA)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub vector: EmbeddingVector,
    pub slice_text: String,
    pub metadata: SliceMetadata,
    /// Logical insertion clock, assigned by the store.
    pub inserted_at: u64,
}

impl KnowledgeEntry {
    pub fn new(entry_id: impl Into<String>, vector: EmbeddingVector, slice_text: impl Into<String>, metadata: SliceMetadata) -> Self {
        Self {
            entry_id: entry_id.into(),
            vector,
            slice_text: slice_text.into(),
            metadata,
            inserted_at: 0,
        }
    }

    pub fn from_slice(slice: &ContextSlice, vector: EmbeddingVector) -> Self {
        Self::new(slice.slice_id(), vector, slice.assembled_text.clone(), slice.metadata.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalHit<'a> {
    pub entry: &'a KnowledgeEntry,
    pub similarity: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    /// An existing entry already scores above the threshold.
    Matched { entry_id: String, similarity: f64 },
    Inserted { entry_id: String },
    Clean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorStore {
    dim: usize,
    entries: Vec<KnowledgeEntry>,
    ids: HashSet<String>,
    clock: u64,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    dim: usize,
    count: usize,
    checksum: String,
}

impl VectorStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            entries: Vec::new(),
            ids: HashSet::new(),
            clock: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn get(&self, entry_id: &str) -> Option<&KnowledgeEntry> {
        self.entries.iter().find(|e| e.entry_id == entry_id)
    }

    pub fn contains(&self, entry_id: &str) -> bool {
        self.ids.contains(entry_id)
    }

    /// Insert `entry`, stamping `inserted_at` from the store clock.
    pub fn insert(&mut self, mut entry: KnowledgeEntry) -> Result<(), StoreError> {
        if entry.vector.dim() != self.dim {
            return Err(StoreError::DimMismatch {
                expected: self.dim,
                got: entry.vector.dim(),
            });
        }
        if self.ids.contains(&entry.entry_id) {
            return Err(StoreError::DuplicateId(entry.entry_id));
        }
        entry.inserted_at = self.clock;
        self.clock += 1;
        self.ids.insert(entry.entry_id.clone());
        self.entries.push(entry);
        Ok(())
    }

    /// Every entry scored against `probe`, best first. Ties go to the earlier
    /// insertion, then the smaller id.
    pub fn ranked(&self, probe: &EmbeddingVector) -> Result<Vec<RetrievalHit<'_>>, StoreError> {
        let mut hits = self
            .entries
            .iter()
            .map(|entry| {
                Ok(RetrievalHit {
                    entry,
                    similarity: cosine_similarity(probe, &entry.vector)?,
                    rank: 0,
                })
            })
            .collect::<Result<Vec<_>, StoreError>>()?;
        hits.sort_by(|a, b| {
            b.similarity
                .partial_cmp(&a.similarity)
                .unwrap_or(Ordering::Equal)
                .then(a.entry.inserted_at.cmp(&b.entry.inserted_at))
                .then_with(|| a.entry.entry_id.cmp(&b.entry.entry_id))
        });
        for (i, h) in hits.iter_mut().enumerate() {
            h.rank = i + 1;
        }
        Ok(hits)
    }

    /// The `k` most similar entries. An empty store yields no hits.
    pub fn query_top_k(&self, probe: &EmbeddingVector, k: usize) -> Result<Vec<RetrievalHit<'_>>, StoreError> {
        let mut hits = self.ranked(probe)?;
        hits.truncate(k);
        Ok(hits)
    }

    /// Entries scoring strictly above `threshold`.
    pub fn query_threshold(&self, probe: &EmbeddingVector, threshold: Threshold) -> Result<Vec<RetrievalHit<'_>>, StoreError> {
        let mut hits = self.ranked(probe)?;
        hits.retain(|h| h.similarity > threshold.theta());
        Ok(hits)
    }

    pub fn is_flagged(&self, probe: &EmbeddingVector, threshold: Threshold) -> Result<bool, StoreError> {
        Ok(!self.query_threshold(probe, threshold)?.is_empty())
    }

    /// Learn a new pattern when nothing known matches `probe`.
    ///
    /// With a match above `threshold` the store is left alone. Otherwise
    /// `verify` runs; if it confirms any SWC ids, the slice is inserted with
    /// those ids as its `swc_types`. A verifier error leaves the store
    /// untouched.
    pub fn dynamic_update<E: std::fmt::Display>(
        &mut self,
        slice: &ContextSlice,
        probe: &EmbeddingVector,
        threshold: Threshold,
        verify: impl FnOnce(&ContextSlice) -> Result<Vec<String>, E>,
    ) -> Result<UpdateOutcome, StoreError> {
        if let Some(best) = self.query_threshold(probe, threshold)?.first() {
            return Ok(UpdateOutcome::Matched {
                entry_id: best.entry.entry_id.clone(),
                similarity: best.similarity,
            });
        }
        let confirmed = verify(slice).map_err(|e| StoreError::VerificationFailed(e.to_string()))?;
        if confirmed.is_empty() {
            return Ok(UpdateOutcome::Clean);
        }
        let mut metadata = slice.metadata.clone();
        metadata.swc_types = confirmed.into_iter().collect();
        let base = slice.slice_id();
        let mut entry_id = base.clone();
        let mut n = 1;
        while self.contains(&entry_id) {
            n += 1;
            entry_id = format!("{base}#{n}");
        }
        self.insert(KnowledgeEntry::new(
            entry_id.clone(),
            probe.clone(),
            slice.assembled_text.clone(),
            metadata,
        ))?;
        Ok(UpdateOutcome::Inserted { entry_id })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut body = Vec::new();
        for e in &self.entries {
            serde_json::to_writer(&mut body, e).expect("entry serializes");
            body.push(b'\n');
        }
        let header = Header {
            format: FORMAT.into(),
            version: VERSION,
            dim: self.dim,
            count: self.entries.len(),
            checksum: hex_digest(&body),
        };
        let mut out = serde_json::to_vec(&header).expect("header serializes");
        out.push(b'\n');
        out.extend(body);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let corrupt = |msg: &str| StoreError::CorruptStore(msg.to_string());
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("missing header"))?;
        let header: Header =
            serde_json::from_slice(&bytes[..split]).map_err(|e| corrupt(&format!("bad header: {e}")))?;
        if header.format != FORMAT || header.version != VERSION {
            return Err(corrupt("unknown format or version"));
        }
        let body = &bytes[split + 1..];
        if hex_digest(body) != header.checksum {
            return Err(corrupt("checksum mismatch"));
        }
        let text = std::str::from_utf8(body).map_err(|_| corrupt("body is not UTF-8"))?;
        let mut store = Self::new(header.dim);
        for line in text.lines().filter(|l| !l.is_empty()) {
            let entry: KnowledgeEntry =
                serde_json::from_str(line).map_err(|e| corrupt(&format!("bad entry: {e}")))?;
            if entry.vector.dim() != header.dim {
                return Err(corrupt("entry dimension differs from header"));
            }
            if !store.ids.insert(entry.entry_id.clone()) {
                return Err(corrupt("duplicate entry id"));
            }
            store.clock = store.clock.max(entry.inserted_at + 1);
            store.entries.push(entry);
        }
        if store.entries.len() != header.count {
            return Err(corrupt("entry count differs from header"));
        }
        Ok(store)
    }

    /// Write atomically: a temp file next to `path`, then rename.
    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let tmp = path.with_extension("kb.tmp");
        {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&self.to_bytes())?;
            f.sync_all()?;
        }
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Reader-writer wrapper: any number of concurrent queries, or one writer.
/// [`SharedStore::dynamic_update`] holds the write lock across its query and
/// insert so two racing updates cannot both insert the same pattern.
#[derive(Debug)]
pub struct SharedStore {
    inner: RwLock<VectorStore>,
}

impl SharedStore {
    pub fn new(store: VectorStore) -> Self {
        Self { inner: RwLock::new(store) }
    }

    pub fn read(&self) -> RwLockReadGuard<'_, VectorStore> {
        self.inner.read().expect("store lock poisoned")
    }

    pub fn insert(&self, entry: KnowledgeEntry) -> Result<(), StoreError> {
        self.inner.write().expect("store lock poisoned").insert(entry)
    }

    pub fn dynamic_update<E: std::fmt::Display>(
        &self,
        slice: &ContextSlice,
        probe: &EmbeddingVector,
        threshold: Threshold,
        verify: impl FnOnce(&ContextSlice) -> Result<Vec<String>, E>,
    ) -> Result<UpdateOutcome, StoreError> {
        self.inner
            .write()
            .expect("store lock poisoned")
            .dynamic_update(slice, probe, threshold, verify)
    }

    pub fn into_inner(self) -> VectorStore {
        self.inner.into_inner().expect("store lock poisoned")
    }
}
