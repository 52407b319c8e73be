//! Probability vectors over a label vocabulary.

use crate::error::{Error, Result};

/// Tolerance on `sum(probs) - 1` accepted by [`LabelDistribution::new`].
pub const NORMALIZATION_TOLERANCE: f64 = 1e-9;

/// A normalized probability vector, carried in linear space as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelDistribution {
    probs: Vec<f64>,
}

impl LabelDistribution {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("distribution over zero labels"));
        }
        if let Some((i, p)) = probs
            .iter()
            .enumerate()
            .find(|(_, p)| !p.is_finite() || **p < 0.0)
        {
            return Err(Error::invalid(format!("probability {i} is {p}")));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > NORMALIZATION_TOLERANCE {
            return Err(Error::invalid(format!(
                "probabilities sum to {total}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Normalizes a non-negative weight vector with positive total mass.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !(total.is_finite() && total > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::invalid(format!(
                "weights must be non-negative with finite positive total, got total {total}"
            )));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    /// Exponentiates log-probabilities and renormalizes in `f64`.
    pub fn from_log_probs(log_probs: &[f64]) -> Result<Self> {
        let lse = log_sum_exp(log_probs)?;
        Ok(Self {
            probs: log_probs.iter().map(|l| (l - lse).exp()).collect(),
        })
    }

    /// Point mass on `label`.
    pub fn one_hot(label: usize, len: usize) -> Result<Self> {
        if label >= len {
            return Err(Error::invalid(format!(
                "label {label} outside {len} labels"
            )));
        }
        let mut probs = vec![0.0; len];
        probs[label] = 1.0;
        Ok(Self { probs })
    }

    pub(crate) fn from_normalized_unchecked(probs: Vec<f64>) -> Self {
        Self { probs }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn into_probs(self) -> Vec<f64> {
        self.probs
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

/// First index holding the maximum value.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `ln Σ exp(x)` with max subtraction. `-inf` entries are allowed as long as
/// one entry is finite.
pub fn log_sum_exp(values: &[f64]) -> Result<f64> {
    if values.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::invalid("log-probabilities contain NaN or +inf"));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::invalid("log-probabilities have no finite entry"));
    }
    Ok(max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln())
}

/// Softmax with the maximum logit subtracted before exponentiation.
pub fn stable_softmax(logits: &[f64]) -> Result<LabelDistribution> {
    if logits.is_empty() {
        return Err(Error::invalid("softmax over an empty vector"));
    }
    if let Some(bad) = logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("non-finite logit {bad}")));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(LabelDistribution::from_normalized_unchecked(
        exps.into_iter().map(|e| e / total).collect(),
    ))
}

/// Log-softmax with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(
            "log-softmax needs a non-empty vector of finite logits",
        ));
    }
    let lse = log_sum_exp(logits)?;
    Ok(logits.iter().map(|l| l - lse).collect())
}
