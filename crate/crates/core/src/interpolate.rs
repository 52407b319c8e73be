//! Turning retrieved neighbors into a label distribution and mixing it with
//! the base model's distribution.

use rayon::prelude::*;
use serde::Serialize;

use crate::dump::{EmbeddingDump, Token};
use crate::error::{Error, Result};
use crate::params::Hyperparams;
use crate::prob::LabelDistribution;
use crate::search::{Neighbor, NeighborSearch, NeighborSet};

/// Kernel-weighted label distribution of a neighbor set.
///
/// Each neighbor contributes `exp(-(d - d_min) / T)` to its label; labels
/// absent from the set get exactly zero mass.
pub fn knn_distribution(
    neighbors: &NeighborSet,
    temperature: f64,
    num_labels: usize,
) -> Result<LabelDistribution> {
    knn_from_entries(neighbors.entries(), temperature, num_labels)
}

pub(crate) fn knn_from_entries(
    entries: &[Neighbor],
    temperature: f64,
    num_labels: usize,
) -> Result<LabelDistribution> {
    if entries.is_empty() {
        return Err(Error::EmptyNeighbors);
    }
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::invalid(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let d_min = entries
        .iter()
        .map(|e| e.distance)
        .fold(f64::INFINITY, f64::min);
    let mut weights = vec![0.0f64; num_labels];
    for e in entries {
        let slot = weights.get_mut(e.value as usize).ok_or_else(|| {
            Error::invalid(format!(
                "neighbor label {} outside {num_labels} labels",
                e.value
            ))
        })?;
        *slot += (-(e.distance - d_min) / temperature).exp();
    }
    // The nearest neighbor contributes exp(0) = 1, so the total is at least 1.
    LabelDistribution::from_weights(weights)
}

/// `lambda * p_ner + (1 - lambda) * p_knn`, componentwise.
pub fn interpolate(
    p_ner: &LabelDistribution,
    p_knn: &LabelDistribution,
    lambda: f64,
) -> Result<LabelDistribution> {
    if p_ner.len() != p_knn.len() {
        return Err(Error::invalid(format!(
            "distributions over {} and {} labels",
            p_ner.len(),
            p_knn.len()
        )));
    }
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::invalid(format!(
            "lambda must lie in [0, 1], got {lambda}"
        )));
    }
    let mixed = p_ner
        .probs()
        .iter()
        .zip(p_knn.probs())
        .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
        .collect();
    Ok(LabelDistribution::from_normalized_unchecked(mixed))
}

/// Everything computed for one token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TokenTrace {
    pub neighbors: NeighborSet,
    pub p_ner: Vec<f64>,
    pub p_knn: Vec<f64>,
    pub p_final: Vec<f64>,
    pub label: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    /// Predicted label ids per sentence.
    pub labels: Vec<Vec<u32>>,
    /// Per-token traces, present when requested.
    pub traces: Option<Vec<Vec<TokenTrace>>>,
}

/// Checks that a query dump can be scored against `index`.
pub fn check_compatible(index: &dyn NeighborSearch, dump: &EmbeddingDump) -> Result<()> {
    if index.is_empty() {
        return Err(Error::EmptyDatastore);
    }
    if dump.dim != index.dim() {
        return Err(Error::mismatch(format!(
            "dump embeddings have dimension {}, datastore has {}",
            dump.dim,
            index.dim()
        )));
    }
    if &dump.vocab != index.vocab() {
        return Err(Error::mismatch(format!(
            "dump vocabulary {:?} differs from datastore vocabulary {:?}",
            dump.vocab.labels(),
            index.vocab().labels()
        )));
    }
    Ok(())
}

pub(crate) fn score_token(
    token: &Token,
    neighbors: &NeighborSet,
    hyper: &Hyperparams,
    num_labels: usize,
) -> Result<TokenTrace> {
    let p_ner = token.base_distribution()?;
    let p_knn = knn_distribution(neighbors, hyper.temperature(), num_labels)?;
    let p_final = interpolate(&p_ner, &p_knn, hyper.lambda())?;
    Ok(TokenTrace {
        label: p_final.argmax() as u32,
        neighbors: neighbors.clone(),
        p_ner: p_ner.into_probs(),
        p_knn: p_knn.into_probs(),
        p_final: p_final.into_probs(),
    })
}

/// Predicts a label for every token of `dump`, one independent decision per token.
///
/// Tokens are scored in parallel; output order follows the dump.
pub fn predict_tokens(
    index: &dyn NeighborSearch,
    dump: &EmbeddingDump,
    hyper: &Hyperparams,
    keep_trace: bool,
) -> Result<Prediction> {
    check_compatible(index, dump)?;
    let num_labels = dump.vocab.len();
    let tokens: Vec<&Token> = dump.tokens().collect();
    let traces: Vec<TokenTrace> = tokens
        .par_iter()
        .map(|token| {
            let neighbors = index.search(&token.embedding, hyper.k())?;
            score_token(token, &neighbors, hyper, num_labels)
        })
        .collect::<Result<_>>()?;

    let mut labels = Vec::with_capacity(dump.sentences.len());
    let mut kept = keep_trace.then(|| Vec::with_capacity(dump.sentences.len()));
    let mut it = traces.into_iter();
    for sentence in &dump.sentences {
        let chunk: Vec<TokenTrace> = it.by_ref().take(sentence.len()).collect();
        labels.push(chunk.iter().map(|t| t.label).collect());
        if let Some(kept) = kept.as_mut() {
            kept.push(chunk);
        }
    }
    Ok(Prediction {
        labels,
        traces: kept,
    })
}

/// Argmax of each token's stored base distribution.
pub fn base_predictions(dump: &EmbeddingDump) -> Result<Vec<Vec<u32>>> {
    dump.sentences
        .iter()
        .map(|s| {
            s.tokens
                .iter()
                .map(|t| Ok(t.base_distribution()?.argmax() as u32))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(pairs: &[(f64, u32)]) -> NeighborSet {
        NeighborSet::from_unsorted(
            pairs
                .iter()
                .enumerate()
                .map(|(index, &(distance, value))| Neighbor {
                    index,
                    distance,
                    value,
                })
                .collect(),
        )
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn knn_examples() {
        for t in [0.1, 1.0, 10.0] {
            let p = knn_distribution(&set(&[(0.0, 0), (0.0, 1)]), t, 4).unwrap();
            assert_eq!(p.probs(), [0.5, 0.5, 0.0, 0.0]);
            let p = knn_distribution(&set(&[(0.0, 0), (0.0, 0), (0.0, 1)]), t, 3).unwrap();
            assert!(close(p.probs(), &[2.0 / 3.0, 1.0 / 3.0, 0.0], 1e-15));
        }
        // e^-0.5 / (e^-0.5 + e^-1.5) = 1 / (1 + e^-1)
        let p = knn_distribution(&set(&[(1.0, 0), (3.0, 1)]), 2.0, 2).unwrap();
        let a = (-0.5f64).exp() / ((-0.5f64).exp() + (-1.5f64).exp());
        assert!(close(p.probs(), &[a, 1.0 - a], 1e-15));
        assert!((p.probs()[0] - 0.73106).abs() < 1e-5);
    }

    #[test]
    fn knn_errors() {
        assert!(matches!(
            knn_distribution(&NeighborSet::default(), 1.0, 2),
            Err(Error::EmptyNeighbors)
        ));
        assert!(knn_distribution(&set(&[(0.0, 5)]), 1.0, 2).is_err());
        assert!(knn_distribution(&set(&[(0.0, 0)]), 0.0, 2).is_err());
    }

    #[test]
    fn interpolation_boundaries() {
        let a = LabelDistribution::new(vec![0.8, 0.2]).unwrap();
        let b = LabelDistribution::new(vec![0.2, 0.8]).unwrap();
        assert_eq!(interpolate(&a, &b, 1.0).unwrap(), a);
        assert_eq!(interpolate(&a, &b, 0.0).unwrap(), b);
        assert!(close(
            interpolate(&a, &b, 0.5).unwrap().probs(),
            &[0.5, 0.5],
            1e-15
        ));
        let c = LabelDistribution::new(vec![1.0, 0.0, 0.0]).unwrap();
        assert!(interpolate(&a, &c, 0.5).is_err());
        assert!(interpolate(&a, &b, 1.5).is_err());
    }

    fn neighbor_sets() -> impl Strategy<Value = Vec<(f64, u32)>> {
        prop::collection::vec((0.0f64..20.0, 0u32..6), 1..40)
    }

    proptest! {
        #[test]
        fn knn_support_and_normalization(pairs in neighbor_sets(), t in 0.01f64..100.0) {
            let p = knn_distribution(&set(&pairs), t, 6).unwrap();
            prop_assert!((p.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            for (label, prob) in p.probs().iter().enumerate() {
                if !pairs.iter().any(|(_, v)| *v as usize == label) {
                    prop_assert_eq!(*prob, 0.0);
                }
            }
        }

        #[test]
        fn knn_shift_invariant(pairs in neighbor_sets(), t in 0.01f64..100.0, c in 0.0f64..50.0) {
            let shifted: Vec<(f64, u32)> = pairs.iter().map(|(d, v)| (d + c, *v)).collect();
            let a = knn_distribution(&set(&pairs), t, 6).unwrap();
            let b = knn_distribution(&set(&shifted), t, 6).unwrap();
            prop_assert!(close(a.probs(), b.probs(), 1e-12));
        }

        #[test]
        fn closer_label_wins(d1 in 0.0f64..10.0, gap in 1e-3f64..10.0, t in 0.01f64..100.0) {
            let p = knn_distribution(&set(&[(d1, 0), (d1 + gap, 1)]), t, 2).unwrap();
            prop_assert!(p.probs()[0] > p.probs()[1]);
        }

        #[test]
        fn interpolation_is_affine(a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let p = LabelDistribution::new(vec![a, 1.0 - a]).unwrap();
            let q = LabelDistribution::new(vec![b, 1.0 - b]).unwrap();
            for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
                let m = interpolate(&p, &q, lambda).unwrap();
                for j in 0..2 {
                    prop_assert_eq!(m.probs()[j], lambda * p.probs()[j] + (1.0 - lambda) * q.probs()[j]);
                }
            }
        }
    }
}
