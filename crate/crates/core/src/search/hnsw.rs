//! Hierarchical navigable small-world graph over datastore keys.
//!
//! Construction is single-threaded and fully determined by the datastore and
//! [`ApproxIndexParams::seed`]. After the graph is built the search beam is
//! doubled until recall@`calibration_k` against the exact scan reaches
//! `target_recall` on a seeded calibration sample; if the beam reaches `n`
//! without meeting the target, construction fails with
//! [`Error::RecallFailure`].
//!
//! KNNI layout (little-endian):
//!
//! ```text
//! magic "KNNI" | version u32 | n u64 | dim u32
//! degree u32 | construction_beam u32 | search_beam u32 | target_recall f64
//! calibration_queries u32 | calibration_k u32 | seed u64 | calibrated_recall f64
//! entries hash [u8; 32] | entry point u32 | max level u32
//! per node: level count u32, then per level: link count u32 | links u32...
//! ```

use std::cmp::Reverse;
use std::collections::BinaryHeap;
use std::io::{Read, Write};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::exact::{into_neighbor_set, search_exact, Cand};
use super::{measure_recall, squared_l2, NeighborSearch, NeighborSet};
use crate::binio::{read_preamble, ByteReader, ByteWriter};
use crate::datastore::Datastore;
use crate::error::{Error, Result};

pub const INDEX_MAGIC: [u8; 4] = *b"KNNI";
pub const INDEX_VERSION: u32 = 1;
const MAX_LEVEL: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxIndexParams {
    /// Links per node on upper layers; layer 0 allows twice as many.
    pub degree: usize,
    pub construction_beam: usize,
    /// Initial search beam; raised during calibration and never below `k` at query time.
    pub search_beam: usize,
    pub target_recall: f64,
    pub calibration_queries: usize,
    pub calibration_k: usize,
    pub seed: u64,
}

impl Default for ApproxIndexParams {
    fn default() -> Self {
        Self {
            degree: 16,
            construction_beam: 128,
            search_beam: 64,
            target_recall: 0.99,
            calibration_queries: 200,
            calibration_k: 32,
            seed: 0x6b6e_6e69,
        }
    }
}

impl ApproxIndexParams {
    pub fn validate(&self) -> Result<()> {
        if self.degree < 2 {
            return Err(Error::invalid("graph degree must be at least 2"));
        }
        if self.construction_beam == 0 || self.search_beam == 0 {
            return Err(Error::invalid("beam widths must be positive"));
        }
        if !(self.target_recall > 0.0 && self.target_recall <= 1.0) {
            return Err(Error::invalid(format!(
                "target recall must lie in (0, 1], got {}",
                self.target_recall
            )));
        }
        if self.calibration_queries == 0 || self.calibration_k == 0 {
            return Err(Error::invalid(
                "calibration needs at least one query and k >= 1",
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ApproxIndex {
    store: Arc<Datastore>,
    params: ApproxIndexParams,
    /// `links[node][level]`
    links: Vec<Vec<Vec<u32>>>,
    entry: u32,
    max_level: usize,
    calibrated_recall: f64,
}

struct Visited {
    bits: Vec<u64>,
}

impl Visited {
    fn new(n: usize) -> Self {
        Self {
            bits: vec![0; n.div_ceil(64)],
        }
    }

    /// Marks `id`, returning whether it was unmarked.
    fn insert(&mut self, id: u32) -> bool {
        let (w, b) = (id as usize / 64, id % 64);
        let fresh = self.bits[w] & (1 << b) == 0;
        self.bits[w] |= 1 << b;
        fresh
    }
}

impl ApproxIndex {
    pub fn build(store: Arc<Datastore>, params: ApproxIndexParams) -> Result<Self> {
        params.validate()?;
        if store.is_empty() {
            return Err(Error::EmptyDatastore);
        }
        let n = store.len();
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
        let level_mult = 1.0 / (params.degree as f64).ln();
        let levels: Vec<usize> = (0..n)
            .map(|_| {
                let u = 1.0 - rng.random::<f64>();
                ((-u.ln() * level_mult).floor() as usize).min(MAX_LEVEL)
            })
            .collect();
        let mut index = Self {
            links: levels.iter().map(|&l| vec![Vec::new(); l + 1]).collect(),
            store,
            params,
            entry: 0,
            max_level: levels[0],
            calibrated_recall: 1.0,
        };
        for (id, &level) in levels.iter().enumerate().skip(1) {
            index.insert(id as u32, level);
        }
        index.calibrate(&mut rng)?;
        Ok(index)
    }

    pub fn params(&self) -> &ApproxIndexParams {
        &self.params
    }

    /// Recall measured on the calibration sample with the final search beam.
    pub fn calibrated_recall(&self) -> f64 {
        self.calibrated_recall
    }

    /// Overrides the search beam without re-calibrating.
    pub fn set_search_beam(&mut self, beam: usize) {
        self.params.search_beam = beam.max(1);
    }

    pub fn store_arc(&self) -> &Arc<Datastore> {
        &self.store
    }

    fn key(&self, id: u32) -> &[f32] {
        self.store.key(id as usize)
    }

    fn dist(&self, query: &[f32], id: u32) -> f64 {
        squared_l2(query, self.key(id))
    }

    fn insert(&mut self, id: u32, level: usize) {
        let query = self.key(id).to_vec();
        let mut ep = Cand {
            d2: self.dist(&query, self.entry),
            id: self.entry as usize,
        };
        for l in ((level + 1)..=self.max_level).rev() {
            ep = self.greedy(&query, ep, l);
        }
        for l in (0..=level.min(self.max_level)).rev() {
            let found = self.search_layer(&query, ep, self.params.construction_beam, l);
            let selected = self.select(&found, self.params.degree);
            let cap = if l == 0 {
                2 * self.params.degree
            } else {
                self.params.degree
            };
            for c in &selected {
                let nb = c.id as u32;
                self.links[nb as usize][l].push(id);
                if self.links[nb as usize][l].len() > cap {
                    self.shrink(nb, l, cap);
                }
            }
            self.links[id as usize][l] = selected.iter().map(|c| c.id as u32).collect();
            ep = found[0];
        }
        if level > self.max_level {
            self.max_level = level;
            self.entry = id;
        }
    }

    fn shrink(&mut self, node: u32, level: usize, cap: usize) {
        let base = self.key(node).to_vec();
        let mut cands: Vec<Cand> = self.links[node as usize][level]
            .iter()
            .map(|&nb| Cand {
                d2: self.dist(&base, nb),
                id: nb as usize,
            })
            .collect();
        cands.sort();
        let kept = self.select(&cands, cap);
        self.links[node as usize][level] = kept.iter().map(|c| c.id as u32).collect();
    }

    /// Diversity heuristic: keep a candidate only if it is closer to the base
    /// than to every already-kept neighbor, then top up with the rejected ones.
    fn select(&self, sorted: &[Cand], m: usize) -> Vec<Cand> {
        let mut kept: Vec<Cand> = Vec::with_capacity(m);
        let mut rejected = Vec::new();
        for &c in sorted {
            if kept.len() >= m {
                break;
            }
            let key = self.key(c.id as u32);
            if kept
                .iter()
                .all(|s| squared_l2(key, self.key(s.id as u32)) > c.d2)
            {
                kept.push(c);
            } else {
                rejected.push(c);
            }
        }
        for c in rejected {
            if kept.len() >= m {
                break;
            }
            kept.push(c);
        }
        kept
    }

    fn greedy(&self, query: &[f32], mut ep: Cand, level: usize) -> Cand {
        loop {
            let mut improved = false;
            for &nb in &self.links[ep.id][level] {
                let c = Cand {
                    d2: self.dist(query, nb),
                    id: nb as usize,
                };
                if c < ep {
                    ep = c;
                    improved = true;
                }
            }
            if !improved {
                return ep;
            }
        }
    }

    /// Beam search on one layer; returns up to `beam` candidates, ascending.
    fn search_layer(&self, query: &[f32], ep: Cand, beam: usize, level: usize) -> Vec<Cand> {
        let mut visited = Visited::new(self.store.len());
        visited.insert(ep.id as u32);
        let mut frontier = BinaryHeap::new();
        let mut best = BinaryHeap::new();
        frontier.push(Reverse(ep));
        best.push(ep);
        while let Some(Reverse(c)) = frontier.pop() {
            if best.len() >= beam && c > *best.peek().expect("non-empty") {
                break;
            }
            for &nb in &self.links[c.id][level] {
                if !visited.insert(nb) {
                    continue;
                }
                let cand = Cand {
                    d2: self.dist(query, nb),
                    id: nb as usize,
                };
                if best.len() < beam || cand < *best.peek().expect("non-empty") {
                    frontier.push(Reverse(cand));
                    best.push(cand);
                    if best.len() > beam {
                        best.pop();
                    }
                }
            }
        }
        best.into_sorted_vec()
    }

    fn calibration_queries(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
        let store = &*self.store;
        let (n, dim) = (store.len(), store.dim());
        let mut mean = vec![0.0f64; dim];
        let mut sq = vec![0.0f64; dim];
        for i in 0..n {
            for (j, &v) in store.key(i).iter().enumerate() {
                mean[j] += f64::from(v);
                sq[j] += f64::from(v) * f64::from(v);
            }
        }
        let std: Vec<f64> = (0..dim)
            .map(|j| {
                mean[j] /= n as f64;
                (sq[j] / n as f64 - mean[j] * mean[j]).max(0.0).sqrt()
            })
            .collect();
        let unit = Normal::new(0.0, 1.0).expect("valid normal");
        // Half perturbed stored keys, half draws from the per-dimension marginals.
        (0..self.params.calibration_queries)
            .map(|q| {
                if q % 2 == 0 {
                    let base = store.key(rng.random_range(0..n));
                    base.iter()
                        .zip(&std)
                        .map(|(&v, s)| (f64::from(v) + 0.5 * s * unit.sample(rng)) as f32)
                        .collect()
                } else {
                    mean.iter()
                        .zip(&std)
                        .map(|(m, s)| (m + s * unit.sample(rng)) as f32)
                        .collect()
                }
            })
            .collect()
    }

    fn calibrate(&mut self, rng: &mut ChaCha8Rng) -> Result<()> {
        let queries = self.calibration_queries(rng);
        let n = self.store.len();
        let k = self.params.calibration_k;
        loop {
            let recall = measure_recall(&*self, &self.store.clone(), &queries, k)?;
            self.calibrated_recall = recall;
            if recall >= self.params.target_recall {
                return Ok(());
            }
            if self.params.search_beam >= n {
                return Err(Error::RecallFailure {
                    measured: recall,
                    target: self.params.target_recall,
                });
            }
            self.params.search_beam = (self.params.search_beam * 2).min(n);
            log::debug!(
                "recall {recall:.4} below {}, search beam raised to {}",
                self.params.target_recall,
                self.params.search_beam
            );
        }
    }
}

impl NeighborSearch for ApproxIndex {
    fn store(&self) -> &Datastore {
        &self.store
    }

    fn search(&self, query: &[f32], k: usize) -> Result<NeighborSet> {
        if query.len() != self.store.dim() {
            return Err(Error::invalid(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.store.dim()
            )));
        }
        if k == 0 {
            return Err(Error::invalid("k must be at least 1"));
        }
        if k >= self.store.len() {
            // Every entry is requested; the graph cannot do better than a scan.
            return search_exact(&self.store, query, k);
        }
        let beam = self.params.search_beam.max(k);
        let mut ep = Cand {
            d2: self.dist(query, self.entry),
            id: self.entry as usize,
        };
        for l in (1..=self.max_level).rev() {
            ep = self.greedy(query, ep, l);
        }
        let mut found = self.search_layer(query, ep, beam, 0);
        found.truncate(k);
        Ok(into_neighbor_set(&self.store, found))
    }
}

pub fn save_index<W: Write>(index: &ApproxIndex, sink: W) -> Result<u64> {
    let p = &index.params;
    let mut w = ByteWriter::new(sink);
    w.bytes(&INDEX_MAGIC)?;
    w.u32(INDEX_VERSION)?;
    w.u64(index.store.len() as u64)?;
    w.u32(index.store.dim() as u32)?;
    w.u32(p.degree as u32)?;
    w.u32(p.construction_beam as u32)?;
    w.u32(p.search_beam as u32)?;
    w.f64(p.target_recall)?;
    w.u32(p.calibration_queries as u32)?;
    w.u32(p.calibration_k as u32)?;
    w.u64(p.seed)?;
    w.f64(index.calibrated_recall)?;
    w.bytes(&index.store.entries_hash())?;
    w.u32(index.entry)?;
    w.u32(index.max_level as u32)?;
    for node in &index.links {
        w.u32(node.len() as u32)?;
        for level in node {
            w.u32(level.len() as u32)?;
            w.u32s(level)?;
        }
    }
    w.flush()?;
    Ok(w.offset())
}

/// Loads an index and binds it to `store`, which must be the datastore it was built on.
pub fn load_index<R: Read>(source: R, store: Arc<Datastore>) -> Result<ApproxIndex> {
    let mut r = ByteReader::new(source);
    read_preamble(&mut r, INDEX_MAGIC, INDEX_VERSION)?;
    let n = r.u64()? as usize;
    let dim = r.u32()? as usize;
    if n != store.len() || dim != store.dim() {
        return Err(Error::mismatch(format!(
            "index covers {n} entries of dimension {dim}, datastore has {} of dimension {}",
            store.len(),
            store.dim()
        )));
    }
    let params = ApproxIndexParams {
        degree: r.u32()? as usize,
        construction_beam: r.u32()? as usize,
        search_beam: r.u32()? as usize,
        target_recall: r.f64()?,
        calibration_queries: r.u32()? as usize,
        calibration_k: r.u32()? as usize,
        seed: r.u64()?,
    };
    params.validate().map_err(|e| r.corrupt(e.to_string()))?;
    let calibrated_recall = r.f64()?;
    let hash = r.array::<32>()?;
    if hash != store.entries_hash() {
        return Err(Error::mismatch("index was built on a different datastore"));
    }
    let entry = r.u32()?;
    let max_level = r.u32()? as usize;
    if entry as usize >= n || max_level > MAX_LEVEL {
        return Err(r.corrupt("entry point or level out of range"));
    }
    let mut links = Vec::with_capacity(n);
    for _ in 0..n {
        let levels = r.u32()? as usize;
        if levels == 0 || levels > max_level + 1 {
            return Err(r.corrupt(format!("node level count {levels} out of range")));
        }
        let mut node = Vec::with_capacity(levels);
        for _ in 0..levels {
            let count = r.u32()? as usize;
            if count > 2 * params.degree {
                return Err(r.corrupt(format!("link count {count} exceeds the degree bound")));
            }
            let at = r.offset();
            let ids = r.u32s(count)?;
            if ids.iter().any(|&id| id as usize >= n) {
                return Err(Error::Corrupt {
                    offset: at,
                    reason: "link target out of range".into(),
                });
            }
            node.push(ids);
        }
        links.push(node);
    }
    if links[entry as usize].len() != max_level + 1 {
        return Err(r.corrupt("entry point does not reach the top level"));
    }
    r.expect_eof()?;
    Ok(ApproxIndex {
        store,
        params,
        links,
        entry,
        max_level,
        calibrated_recall,
    })
}
