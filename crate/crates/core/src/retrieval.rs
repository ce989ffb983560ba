//! Task-sharded vector store over demonstration steps.
//!
//! Each record carries a unit embedding, a self-contained payload (identity,
//! current action, 3-step lookahead, instruction) and optionally the
//! verifier feature vector captured when the step was recorded. Exact
//! brute-force search is the default; an HNSW index can be attached per
//! collection.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::actions::DOF;
use crate::hnsw::{Hnsw, HnswParams};
use crate::linalg::{dot, norm};
use crate::{Error, Result};

/// Number of lookahead action slices stored per record.
pub const LOOKAHEAD: usize = 3;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Payload {
    pub dataset_name: String,
    pub episode_idx: u64,
    pub step_idx: u64,
    pub current_action: [f64; DOF],
    pub next_actions: [[f64; DOF]; LOOKAHEAD],
    pub language_instruction: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub embedding: Vec<f64>,
    pub payload: Payload,
    pub feature: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchHit<'a> {
    pub score: f64,
    pub record_id: usize,
    pub payload: &'a Payload,
}

/// Scale `v` to unit length.
pub fn l2_normalize(v: &[f64]) -> Result<Vec<f64>> {
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::invalid("non-finite embedding component"));
    }
    let n = norm(v);
    if n == 0.0 {
        return Err(Error::invalid("cannot normalize a zero vector"));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Descending score, ascending record id.
fn rank_order(a: &(f64, usize), b: &(f64, usize)) -> core::cmp::Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// One task shard.
#[derive(Debug, Clone)]
pub struct Collection {
    name: String,
    dim: usize,
    records: Vec<Record>,
    index: Option<Hnsw>,
}

impl PartialEq for Collection {
    /// Records and identity; an attached index is derived state and ignored.
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.dim == other.dim && self.records == other.records
    }
}

impl Collection {
    pub fn new(name: impl Into<String>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("collection dimension must be positive".into()));
        }
        Ok(Self { name: name.into(), dim, records: Vec::new(), index: None })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn record(&self, id: usize) -> Option<&Record> {
        self.records.get(id)
    }

    pub fn has_index(&self) -> bool {
        self.index.is_some()
    }

    /// Append a record and return its id. The embedding must already be unit
    /// length. An attached index is extended in place.
    pub fn insert(&mut self, embedding: Vec<f64>, payload: Payload, feature: Option<Vec<f64>>) -> Result<usize> {
        if embedding.len() != self.dim {
            return Err(Error::Schema(alloc::format!(
                "embedding has dim {} but collection '{}' expects {}",
                embedding.len(),
                self.name,
                self.dim
            )));
        }
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("non-finite embedding component"));
        }
        if (norm(&embedding) - 1.0).abs() > UNIT_TOL {
            return Err(Error::invalid("embedding is not unit length"));
        }
        if let Some(f) = &feature {
            if f.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid("non-finite feature component"));
            }
        }
        let id = self.records.len();
        self.records.push(Record { embedding, payload, feature });
        if let Some(index) = self.index.as_mut() {
            let vectors: Vec<&[f64]> = self.records.iter().map(|r| r.embedding.as_slice()).collect();
            index.insert(id, &vectors);
        }
        Ok(id)
    }

    fn check_query(&self, q: &[f64], k: usize) -> Result<()> {
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if q.len() != self.dim {
            return Err(Error::Schema(alloc::format!("query has dim {} but collection expects {}", q.len(), self.dim)));
        }
        Ok(())
    }

    fn hits(&self, mut scored: Vec<(f64, usize)>, k: usize) -> Vec<SearchHit<'_>> {
        scored.sort_by(rank_order);
        scored.truncate(k);
        scored
            .into_iter()
            .map(|(score, id)| SearchHit { score, record_id: id, payload: &self.records[id].payload })
            .collect()
    }

    /// Full scan: the `k` largest dot products. Empty collections give an
    /// empty result.
    pub fn search_exact(&self, q: &[f64], k: usize) -> Result<Vec<SearchHit<'_>>> {
        self.check_query(q, k)?;
        let scored = self.records.iter().enumerate().map(|(i, r)| (dot(q, &r.embedding), i)).collect();
        Ok(self.hits(scored, k))
    }

    /// Build (or rebuild) an HNSW index over the current records.
    pub fn build_hnsw(&mut self, params: HnswParams) -> Result<()> {
        params.validate()?;
        let vectors: Vec<&[f64]> = self.records.iter().map(|r| r.embedding.as_slice()).collect();
        let mut index = Hnsw::new(params);
        for id in 0..vectors.len() {
            index.insert(id, &vectors);
        }
        self.index = Some(index);
        Ok(())
    }

    pub fn drop_index(&mut self) {
        self.index = None;
    }

    /// Search through the index when one is attached, else exactly.
    pub fn search(&self, q: &[f64], k: usize) -> Result<Vec<SearchHit<'_>>> {
        let Some(index) = &self.index else {
            return self.search_exact(q, k);
        };
        self.check_query(q, k)?;
        let vectors: Vec<&[f64]> = self.records.iter().map(|r| r.embedding.as_slice()).collect();
        let ids = index.search(q, k, &vectors);
        let scored = ids.into_iter().map(|id| (dot(q, &self.records[id].embedding), id)).collect();
        Ok(self.hits(scored, k))
    }

    /// Per-episode feature trajectories in step order; `None` if any record
    /// lacks a stored feature.
    pub fn feature_trajectories(&self) -> Option<Vec<Vec<Vec<f64>>>> {
        let mut by_episode: BTreeMap<u64, Vec<(u64, &Vec<f64>)>> = BTreeMap::new();
        for r in &self.records {
            let f = r.feature.as_ref()?;
            by_episode.entry(r.payload.episode_idx).or_default().push((r.payload.step_idx, f));
        }
        Some(
            by_episode
                .into_values()
                .map(|mut steps| {
                    steps.sort_by_key(|s| s.0);
                    steps.into_iter().map(|(_, f)| f.clone()).collect()
                })
                .collect(),
        )
    }
}

/// Collections keyed by task name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RetrievalStore {
    shards: BTreeMap<String, Collection>,
}

impl RetrievalStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Add or replace a shard.
    pub fn add(&mut self, c: Collection) {
        self.shards.insert(c.name.clone(), c);
    }

    pub fn get(&self, name: &str) -> Option<&Collection> {
        self.shards.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Collection> {
        self.shards.get_mut(name)
    }

    pub fn shards(&self) -> impl Iterator<Item = &Collection> {
        self.shards.values()
    }

    pub fn shards_mut(&mut self) -> impl Iterator<Item = &mut Collection> {
        self.shards.values_mut()
    }

    pub fn len(&self) -> usize {
        self.shards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shards.is_empty()
    }

    pub fn total_records(&self) -> usize {
        self.shards.values().map(Collection::len).sum()
    }

    pub fn build_hnsw(&mut self, params: HnswParams) -> Result<()> {
        self.shards.values_mut().try_for_each(|c| c.build_hnsw(params))
    }
}
