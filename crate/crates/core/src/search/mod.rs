//! k-nearest-neighbor retrieval under L2 distance.
//!
//! [`search_exact`] is the default path. [`ApproxIndex`] is an opt-in
//! graph index whose construction is gated on measured recall, and
//! [`brute_force_oracle`] is an unoptimized scan kept for verification.

mod exact;
mod hnsw;

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::Serialize;

use crate::datastore::Datastore;
use crate::error::{Error, Result};
use crate::labels::LabelVocab;

pub use exact::{brute_force_oracle, search_exact, search_exact_batch};
pub use hnsw::{
    load_index, save_index, ApproxIndex, ApproxIndexParams, INDEX_MAGIC, INDEX_VERSION,
};

/// One retrieved datastore entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Neighbor {
    /// Row of the entry in the datastore.
    pub index: usize,
    /// Unsquared L2 distance to the query.
    pub distance: f64,
    pub value: u32,
}

/// Retrieved entries sorted by ascending distance, ties by ascending index.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct NeighborSet {
    entries: Vec<Neighbor>,
}

impl NeighborSet {
    /// Sorts `entries` into canonical order.
    pub fn from_unsorted(mut entries: Vec<Neighbor>) -> Self {
        entries.sort_by(neighbor_order);
        Self { entries }
    }

    /// Wraps entries that the caller guarantees to be in canonical order.
    pub fn from_sorted(entries: Vec<Neighbor>) -> Result<Self> {
        if entries
            .windows(2)
            .any(|w| neighbor_order(&w[0], &w[1]) != Ordering::Less)
        {
            return Err(Error::invalid(
                "neighbor entries are not in canonical order",
            ));
        }
        if entries
            .iter()
            .any(|e| e.distance.is_nan() || e.distance < 0.0)
        {
            return Err(Error::invalid("neighbor distances must be non-negative"));
        }
        Ok(Self { entries })
    }

    pub fn entries(&self) -> &[Neighbor] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// The first `k` entries.
    pub fn truncated(&self, k: usize) -> NeighborSet {
        Self {
            entries: self.entries[..k.min(self.entries.len())].to_vec(),
        }
    }

    pub fn distances(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.distance).collect()
    }

    pub fn values(&self) -> Vec<u32> {
        self.entries.iter().map(|e| e.value).collect()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.index).collect()
    }
}

pub(crate) fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then(a.index.cmp(&b.index))
}

/// A read-only k-NN backend over a datastore.
pub trait NeighborSearch: Sync {
    fn store(&self) -> &Datastore;

    /// Returns the `min(k, n)` nearest entries to `query`.
    fn search(&self, query: &[f32], k: usize) -> Result<NeighborSet>;

    fn dim(&self) -> usize {
        self.store().dim()
    }

    fn len(&self) -> usize {
        self.store().len()
    }

    fn is_empty(&self) -> bool {
        self.store().is_empty()
    }

    fn vocab(&self) -> &LabelVocab {
        self.store().vocab()
    }

    /// Searches every query in parallel; results are in query order.
    fn search_batch(&self, queries: &[&[f32]], k: usize) -> Result<Vec<NeighborSet>> {
        queries.par_iter().map(|q| self.search(q, k)).collect()
    }
}

impl NeighborSearch for Datastore {
    fn store(&self) -> &Datastore {
        self
    }

    fn search(&self, query: &[f32], k: usize) -> Result<NeighborSet> {
        search_exact(self, query, k)
    }
}

/// `sqrt(sum((a_j - b_j)^2))`, accumulated in `f64`.
pub fn l2_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "dimension mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        sum += d * d;
    }
    Ok(sum.sqrt())
}

/// Squared L2 distance with four interleaved accumulators.
///
/// Both the exact scan and the graph index rank by this value, so the
/// distances they report for the same entry are bit-identical.
#[inline]
pub(crate) fn squared_l2(a: &[f32], b: &[f32]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let d = f64::from(x[j]) - f64::from(y[j]);
            acc[j] += d * d;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = f64::from(*x) - f64::from(*y);
        tail += d * d;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Mean over queries of `|approx ∩ exact| / min(k, n)`, matching entries by row index.
pub fn measure_recall(
    index: &dyn NeighborSearch,
    store: &Datastore,
    queries: &[Vec<f32>],
    k: usize,
) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::invalid("recall needs at least one query"));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    let expected = k.min(store.len()) as f64;
    let hits: Vec<usize> = queries
        .par_iter()
        .map(|q| {
            let truth = search_exact(store, q, k)?;
            let got = index.search(q, k)?;
            let mut truth_ids = truth.indices();
            truth_ids.sort_unstable();
            Ok(got
                .entries()
                .iter()
                .filter(|e| truth_ids.binary_search(&e.index).is_ok())
                .count())
        })
        .collect::<Result<_>>()?;
    Ok(hits.iter().map(|&h| h as f64 / expected).sum::<f64>() / queries.len() as f64)
}
