//! Straightforward re-implementations used as references. Nothing here calls
//! into the library's numeric code: distances, kernels, span decoding and
//! scoring are all recomputed from their definitions.

use std::collections::BTreeSet;

use knn_ner::Datastore;

/// Unsquared L2 distance, accumulated left to right in `f64`.
pub fn distance(a: &[f32], b: &[f32]) -> f64 {
    let mut sum = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let d = f64::from(*x) - f64::from(*y);
        sum += d * d;
    }
    sum.sqrt()
}

/// The `k` nearest entries as (index, distance, label), ties by index.
pub fn nearest(store: &Datastore, query: &[f32], k: usize) -> Vec<(usize, f64, u32)> {
    let mut all: Vec<(usize, f64, u32)> = (0..store.len())
        .map(|i| (i, distance(query, store.key(i)), store.value(i)))
        .collect();
    all.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Kernel distribution without any shift: `exp(-d / T)` per neighbor, normalized.
pub fn kernel(neighbors: &[(usize, f64, u32)], temperature: f64, labels: usize) -> Vec<f64> {
    let mut w = vec![0.0; labels];
    for &(_, d, v) in neighbors {
        w[v as usize] += (-d / temperature).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter().map(|x| x / total).collect()
}

pub fn softmax_of_log_probs(log_probs: &[f32]) -> Vec<f64> {
    let e: Vec<f64> = log_probs.iter().map(|&l| f64::from(l).exp()).collect();
    let total: f64 = e.iter().sum();
    e.iter().map(|x| x / total).collect()
}

pub fn first_argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// CoNLL-style chunking of BIO tags: a chunk starts at `B-X`, or at `I-X`
/// when the previous tag is not of type X.
pub fn bio_chunks(tags: &[&str]) -> BTreeSet<(String, usize, usize)> {
    let mut out = BTreeSet::new();
    let mut current: Option<(String, usize)> = None;
    for (i, tag) in tags.iter().enumerate() {
        let (prefix, ty) = match tag.split_once('-') {
            Some((p, t)) => (p, t),
            None => ("O", ""),
        };
        let continues = prefix == "I" && matches!(&current, Some((t, _)) if t == ty);
        if !continues {
            if let Some((t, s)) = current.take() {
                out.insert((t, s, i - 1));
            }
            if prefix != "O" {
                current = Some((ty.to_string(), i));
            }
        }
    }
    if let Some((t, s)) = current {
        out.insert((t, s, tags.len() - 1));
    }
    out
}

/// Micro-averaged (precision, recall, f1) over per-sentence chunk sets.
pub fn micro_prf(
    gold: &[BTreeSet<(String, usize, usize)>],
    pred: &[BTreeSet<(String, usize, usize)>],
) -> (f64, f64, f64) {
    let mut g = 0usize;
    let mut p = 0usize;
    let mut m = 0usize;
    for (gs, ps) in gold.iter().zip(pred) {
        g += gs.len();
        p += ps.len();
        m += gs.intersection(ps).count();
    }
    let precision = if p == 0 { 0.0 } else { m as f64 / p as f64 };
    let recall = if g == 0 { 0.0 } else { m as f64 / g as f64 };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    (precision, recall, f1)
}
