//! Area-weighted semantic cache.
//!
//! Every observation of an instance is weighted by the physical area its mask
//! covers. Each instance keeps the largest-area observations in a bounded
//! min-heap and fuses them into one global embedding by area weighting. The
//! same logic serves the object channel and the environment channel.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::frame::CameraIntrinsics;
use crate::raster::{Mask, Raster};
use crate::InstanceId;

/// Stabilizer in the fusion denominator.
pub const FUSION_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AreaMode {
    /// Metric footprint: Σ D(p)² / (fx·fy).
    #[default]
    Footprint,
    /// Σ fx·fy / D(p)², favours close views more strongly.
    InverseDepth,
}

impl std::str::FromStr for AreaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "footprint" => Ok(Self::Footprint),
            "inverse_depth" | "inverse-depth" => Ok(Self::InverseDepth),
            other => Err(Error::Config(format!("unknown area mode {other:?}"))),
        }
    }
}

/// Physical coverage of a mask. Pixels without depth are skipped.
pub fn physical_area(mask: &Mask, depth: &Raster<f32>, intrinsics: &CameraIntrinsics, mode: AreaMode) -> Result<f64> {
    if mask.dims() != depth.dims() {
        return Err(Error::InvalidArgument(format!(
            "mask {:?} and depth {:?} differ in size",
            mask.dims(),
            depth.dims()
        )));
    }
    let focal = intrinsics.fx * intrinsics.fy;
    let area = mask
        .iter_set()
        .map(|(u, v)| *depth.get(u, v) as f64)
        .filter(|&d| d > 0.0)
        .map(|d| match mode {
            AreaMode::Footprint => d * d / focal,
            AreaMode::InverseDepth => focal / (d * d),
        })
        .sum();
    Ok(area)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheEntry {
    pub area: f64,
    pub embedding: Vec<f32>,
    pub frame: u64,
    /// Insertion order within the cache; older entries lose area ties.
    pub seq: u64,
}

impl CacheEntry {
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.area.total_cmp(&other.area).then(self.seq.cmp(&other.seq))
    }
}

// Heap order only looks at (area, seq); seq is unique within a cache.
#[derive(Debug, Clone)]
struct HeapItem(CacheEntry);

impl PartialEq for HeapItem {
    fn eq(&self, other: &Self) -> bool {
        self.0.key_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for HeapItem {}

impl PartialOrd for HeapItem {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for HeapItem {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.key_cmp(&other.0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum InsertOutcome {
    Inserted,
    EvictedMin(CacheEntry),
    Rejected,
}

impl InsertOutcome {
    pub fn mutated(&self) -> bool {
        !matches!(self, InsertOutcome::Rejected)
    }
}

#[derive(Debug, Clone)]
pub struct SemanticCache {
    capacity: usize,
    heap: BinaryHeap<Reverse<HeapItem>>,
    next_seq: u64,
    fused: Option<Vec<f32>>,
    dirty: bool,
}

impl SemanticCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "cache capacity must be positive");
        Self {
            capacity,
            heap: BinaryHeap::with_capacity(capacity + 1),
            next_seq: 0,
            fused: None,
            dirty: false,
        }
    }

    /// Rebuilds a cache from stored entries (map files), re-fusing if non-empty.
    pub fn from_entries(capacity: usize, entries: Vec<CacheEntry>, next_seq: u64) -> Result<Self> {
        if entries.len() > capacity {
            return Err(Error::Format(format!("{} cache entries exceed capacity {capacity}", entries.len())));
        }
        let mut cache = Self::new(capacity);
        cache.next_seq = next_seq;
        for e in entries {
            cache.heap.push(Reverse(HeapItem(e)));
        }
        if !cache.is_empty() {
            cache.dirty = true;
            cache.fuse()?;
        }
        Ok(cache)
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    pub fn min_area(&self) -> Option<f64> {
        self.heap.peek().map(|Reverse(HeapItem(e))| e.area)
    }

    pub fn dim(&self) -> Option<usize> {
        self.heap.peek().map(|Reverse(HeapItem(e))| e.embedding.len())
    }

    /// Entries in ascending (area, insertion) order.
    pub fn entries(&self) -> Vec<&CacheEntry> {
        let mut out: Vec<&CacheEntry> = self.heap.iter().map(|Reverse(HeapItem(e))| e).collect();
        out.sort_by(|a, b| a.key_cmp(b));
        out
    }

    pub fn fused(&self) -> Option<&[f32]> {
        self.fused.as_deref()
    }

    pub fn insert(&mut self, area: f64, embedding: Vec<f32>, frame: u64) -> Result<InsertOutcome> {
        if !(area > 0.0) || !area.is_finite() {
            return Err(Error::InvalidArgument(format!("cache area must be positive, got {area}")));
        }
        if embedding.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidArgument("embedding has non-finite values".into()));
        }
        if let Some(d) = self.dim() {
            if d != embedding.len() {
                return Err(Error::InvalidArgument(format!(
                    "embedding dimension {} differs from cached dimension {d}",
                    embedding.len()
                )));
            }
        }
        let entry = CacheEntry {
            area,
            embedding,
            frame,
            seq: self.next_seq,
        };
        let outcome = if self.heap.len() < self.capacity {
            self.heap.push(Reverse(HeapItem(entry)));
            InsertOutcome::Inserted
        } else if area >= self.min_area().expect("full cache has a root") {
            // A fresh view that ties the root displaces the older entry.
            let Reverse(HeapItem(old)) = self.heap.pop().expect("full cache has a root");
            self.heap.push(Reverse(HeapItem(entry)));
            InsertOutcome::EvictedMin(old)
        } else {
            return Ok(InsertOutcome::Rejected);
        };
        self.next_seq += 1;
        self.dirty = true;
        Ok(outcome)
    }

    /// Area-weighted fusion `Σ Aᵢ·eᵢ / (Σ Aᵢ + ε)`, without renormalization.
    pub fn fuse(&mut self) -> Result<&[f32]> {
        if self.is_empty() {
            return Err(Error::NoObservations);
        }
        if self.dirty || self.fused.is_none() {
            self.fused = Some(fuse_embeddings(self.entries())?);
            self.dirty = false;
        }
        Ok(self.fused.as_deref().expect("just fused"))
    }
}

pub fn fuse_embeddings<'a>(entries: impl IntoIterator<Item = &'a CacheEntry>) -> Result<Vec<f32>> {
    let mut acc: Vec<f64> = Vec::new();
    let mut total_area = 0.0f64;
    let mut any = false;
    for e in entries {
        if !any {
            acc = vec![0.0; e.embedding.len()];
            any = true;
        }
        for (a, &x) in acc.iter_mut().zip(&e.embedding) {
            *a += e.area * x as f64;
        }
        total_area += e.area;
    }
    if !any {
        return Err(Error::NoObservations);
    }
    let denom = total_area + FUSION_EPSILON;
    Ok(acc.into_iter().map(|a| (a / denom) as f32).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Channel {
    Object,
    Environment,
}

/// Fused per-instance embeddings that queries read.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalEmbedding {
    pub object: Option<Vec<f32>>,
    pub environment: Option<Vec<f32>>,
}

/// Id-keyed collection of fused embeddings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GlobalSemantics {
    entries: BTreeMap<InstanceId, GlobalEmbedding>,
}

impl GlobalSemantics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, id: InstanceId) {
        self.entries.entry(id).or_default();
    }

    pub fn insert(&mut self, id: InstanceId, embedding: GlobalEmbedding) {
        self.entries.insert(id, embedding);
    }

    pub fn get(&self, id: InstanceId) -> Option<&GlobalEmbedding> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (InstanceId, &GlobalEmbedding)> {
        self.entries.iter().map(|(&id, e)| (id, e))
    }

    pub fn object_embeddings(&self) -> impl Iterator<Item = (InstanceId, &[f32])> {
        self.entries
            .iter()
            .filter_map(|(&id, e)| e.object.as_deref().map(|v| (id, v)))
    }

    /// Refreshes one channel of `id` from its cache.
    pub fn update_global(&mut self, id: InstanceId, channel: Channel, cache: &mut SemanticCache) -> Result<()> {
        let entry = self.entries.get_mut(&id).ok_or(Error::UnknownInstance(id))?;
        let fused = cache.fuse()?.to_vec();
        match channel {
            Channel::Object => entry.object = Some(fused),
            Channel::Environment => entry.environment = Some(fused),
        }
        Ok(())
    }
}
