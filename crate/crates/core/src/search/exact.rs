use std::cmp::Ordering;
use std::collections::BinaryHeap;

use rayon::prelude::*;

use super::{l2_distance, neighbor_order, Neighbor, NeighborSet};
use crate::datastore::Datastore;
use crate::error::{Error, Result};

/// Candidate ordered by (squared distance, row); the heap top is the worst kept.
#[derive(Clone, Copy)]
pub(super) struct Cand {
    pub d2: f64,
    pub id: usize,
}

impl PartialEq for Cand {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Cand {}

impl PartialOrd for Cand {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Cand {
    fn cmp(&self, other: &Self) -> Ordering {
        self.d2.total_cmp(&other.d2).then(self.id.cmp(&other.id))
    }
}

/// Same arithmetic as [`super::squared_l2`], abandoning once the partial sum
/// exceeds `bound`. A completed result is bit-identical to `squared_l2`.
#[inline]
fn squared_l2_bounded(a: &[f32], b: &[f32], bound: f64) -> Option<f64> {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    let mut blocks = 0usize;
    for (x, y) in (&mut ca).zip(&mut cb) {
        for j in 0..4 {
            let d = f64::from(x[j]) - f64::from(y[j]);
            acc[j] += d * d;
        }
        blocks += 1;
        if blocks.is_multiple_of(16) && (acc[0] + acc[1]) + (acc[2] + acc[3]) > bound {
            return None;
        }
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = f64::from(*x) - f64::from(*y);
        tail += d * d;
    }
    Some((acc[0] + acc[1]) + (acc[2] + acc[3]) + tail)
}

fn check_query(store: &Datastore, query: &[f32], k: usize) -> Result<()> {
    if query.len() != store.dim() {
        return Err(Error::invalid(format!(
            "query has dimension {}, datastore has {}",
            query.len(),
            store.dim()
        )));
    }
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    Ok(())
}

/// Exact k-NN scan with a bounded max-heap and early abandonment of rows
/// whose partial distance already exceeds the current k-th best.
pub fn search_exact(store: &Datastore, query: &[f32], k: usize) -> Result<NeighborSet> {
    check_query(store, query, k)?;
    let k = k.min(store.len());
    let mut heap: BinaryHeap<Cand> = BinaryHeap::with_capacity(k + 1);
    for id in 0..store.len() {
        let key = store.key(id);
        if heap.len() < k {
            heap.push(Cand {
                d2: super::squared_l2(query, key),
                id,
            });
            continue;
        }
        let worst = heap.peek().expect("heap holds k >= 1 entries").d2;
        // Rows are visited in ascending order, so an exact tie with the
        // current worst loses on the index tie-break.
        if let Some(d2) = squared_l2_bounded(query, key, worst) {
            if d2 < worst {
                heap.pop();
                heap.push(Cand { d2, id });
            }
        }
    }
    Ok(into_neighbor_set(store, heap.into_vec()))
}

pub(super) fn into_neighbor_set(store: &Datastore, cands: Vec<Cand>) -> NeighborSet {
    let mut entries: Vec<Neighbor> = cands
        .into_iter()
        .map(|c| Neighbor {
            index: c.id,
            distance: c.d2.sqrt(),
            value: store.value(c.id),
        })
        .collect();
    entries.sort_by(neighbor_order);
    NeighborSet::from_sorted(entries).expect("canonically sorted")
}

/// [`search_exact`] over many queries in parallel, results in query order.
pub fn search_exact_batch(
    store: &Datastore,
    queries: &[&[f32]],
    k: usize,
) -> Result<Vec<NeighborSet>> {
    queries
        .par_iter()
        .map(|q| search_exact(store, q, k))
        .collect()
}

/// Reference k-NN: distance to every row, full sort, truncate.
pub fn brute_force_oracle(store: &Datastore, query: &[f32], k: usize) -> Result<NeighborSet> {
    check_query(store, query, k)?;
    let mut all = Vec::with_capacity(store.len());
    for index in 0..store.len() {
        all.push(Neighbor {
            index,
            distance: l2_distance(query, store.key(index))?,
            value: store.value(index),
        });
    }
    all.sort_by(neighbor_order);
    all.truncate(k);
    Ok(NeighborSet::from_unsorted(all))
}
