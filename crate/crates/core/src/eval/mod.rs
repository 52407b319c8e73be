//! Span-level scoring and the experiment harnesses built on it.

mod lowres;
mod metrics;
mod sweep;

use rayon::prelude::*;
use serde::Serialize;

pub use lowres::{low_resource_curve, CurvePoint, LowResourceConfig};
pub use metrics::{f1_score, span_prf, MetricsReport, TypeMetrics};
pub use sweep::{sweep, sweep_cached, SweepCell, SweepGrid, SweepResult};

use crate::dump::EmbeddingDump;
use crate::error::{Error, Result};
use crate::interpolate::{
    base_predictions, check_compatible, interpolate, knn_from_entries, predict_tokens,
};
use crate::labels::{extract_spans_ids, EntitySpan, LabelVocab, TaggingScheme};
use crate::params::Hyperparams;
use crate::prob::LabelDistribution;
use crate::search::{NeighborSearch, NeighborSet};

/// Scores of the interpolated model next to the base model alone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub hyper: Hyperparams,
    pub knn: MetricsReport,
    pub baseline: MetricsReport,
}

impl EvalReport {
    /// F1 gain of the interpolated model over the base model.
    pub fn delta_f1(&self) -> f64 {
        self.knn.f1 - self.baseline.f1
    }
}

/// Gold spans of every sentence; fails on unlabeled tokens.
pub fn gold_spans(dump: &EmbeddingDump, scheme: TaggingScheme) -> Result<Vec<Vec<EntitySpan>>> {
    dump.sentences
        .iter()
        .enumerate()
        .map(|(si, s)| {
            let gold = s.gold().ok_or_else(|| {
                let ti = s.tokens.iter().position(|t| t.gold.is_none()).unwrap_or(0);
                Error::invalid(format!("sentence {si}, token {ti} has no gold label"))
            })?;
            extract_spans_ids(&gold, &dump.vocab, scheme)
        })
        .collect()
}

/// Spans decoded from predicted label ids.
pub fn label_spans(
    labels: &[Vec<u32>],
    vocab: &LabelVocab,
    scheme: TaggingScheme,
) -> Result<Vec<Vec<EntitySpan>>> {
    labels
        .iter()
        .map(|ids| extract_spans_ids(ids, vocab, scheme))
        .collect()
}

/// Neighbors of every dump token retrieved once at the largest `k` needed.
///
/// Smaller `k` values reuse the prefix, which equals a direct search at that
/// `k` for the exact backend.
#[derive(Debug, Clone)]
pub struct RetrievalCache {
    k: usize,
    neighbors: Vec<NeighborSet>,
}

impl RetrievalCache {
    pub fn build(index: &dyn NeighborSearch, dump: &EmbeddingDump, k: usize) -> Result<Self> {
        check_compatible(index, dump)?;
        let queries: Vec<&[f32]> = dump.tokens().map(|t| t.embedding.as_slice()).collect();
        Ok(Self {
            k,
            neighbors: index.search_batch(&queries, k)?,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn neighbors(&self) -> &[NeighborSet] {
        &self.neighbors
    }
}

pub(crate) fn base_distributions(dump: &EmbeddingDump) -> Result<Vec<LabelDistribution>> {
    dump.tokens().map(|t| t.base_distribution()).collect()
}

/// Per-token argmax of the interpolated distribution using cached neighbors.
pub(crate) fn decode_cached(
    cache: &RetrievalCache,
    p_ner: &[LabelDistribution],
    dump: &EmbeddingDump,
    hyper: &Hyperparams,
) -> Result<Vec<Vec<u32>>> {
    if hyper.k() > cache.k {
        return Err(Error::invalid(format!(
            "k = {} exceeds the cached retrieval depth {}",
            hyper.k(),
            cache.k
        )));
    }
    if cache.neighbors.len() != p_ner.len() {
        return Err(Error::invalid("retrieval cache does not match the dump"));
    }
    let num_labels = dump.vocab.len();
    let flat: Vec<u32> = cache
        .neighbors
        .par_iter()
        .zip(p_ner)
        .map(|(nb, p)| {
            let entries = &nb.entries()[..hyper.k().min(nb.len())];
            let p_knn = knn_from_entries(entries, hyper.temperature(), num_labels)?;
            Ok(interpolate(p, &p_knn, hyper.lambda())?.argmax() as u32)
        })
        .collect::<Result<_>>()?;
    Ok(split_like(dump, flat))
}

fn split_like(dump: &EmbeddingDump, flat: Vec<u32>) -> Vec<Vec<u32>> {
    let mut it = flat.into_iter();
    dump.sentences
        .iter()
        .map(|s| it.by_ref().take(s.len()).collect())
        .collect()
}

/// Predicts, decodes spans and scores against gold, alongside the base model.
pub fn evaluate_dump(
    index: &dyn NeighborSearch,
    dump: &EmbeddingDump,
    hyper: &Hyperparams,
    scheme: TaggingScheme,
) -> Result<EvalReport> {
    let gold = gold_spans(dump, scheme)?;
    let predicted = predict_tokens(index, dump, hyper, false)?;
    let knn = span_prf(&gold, &label_spans(&predicted.labels, &dump.vocab, scheme)?)?;
    let baseline = baseline_report(dump, &gold, scheme)?;
    Ok(EvalReport {
        hyper: *hyper,
        knn,
        baseline,
    })
}

pub(crate) fn baseline_report(
    dump: &EmbeddingDump,
    gold: &[Vec<EntitySpan>],
    scheme: TaggingScheme,
) -> Result<MetricsReport> {
    let base = base_predictions(dump)?;
    span_prf(gold, &label_spans(&base, &dump.vocab, scheme)?)
}
