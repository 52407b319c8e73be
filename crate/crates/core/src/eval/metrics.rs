use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::labels::EntitySpan;

/// Harmonic mean of precision and recall; zero when both are zero.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypeMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold spans of this type.
    pub support: usize,
    pub predicted: usize,
    pub matched: usize,
}

impl TypeMetrics {
    fn from_counts(gold: usize, predicted: usize, matched: usize) -> Self {
        let precision = ratio(matched, predicted);
        let recall = ratio(matched, gold);
        Self {
            precision,
            recall,
            f1: f1_score(precision, recall),
            support: gold,
            predicted,
            matched,
        }
    }
}

/// Micro-averaged span-level scores with a per-type breakdown.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub gold: usize,
    pub predicted: usize,
    pub matched: usize,
    pub per_type: BTreeMap<String, TypeMetrics>,
}

/// Exact (type, start, end) span matching within each sentence.
pub fn span_prf(gold: &[Vec<EntitySpan>], predicted: &[Vec<EntitySpan>]) -> Result<MetricsReport> {
    if gold.len() != predicted.len() {
        return Err(Error::invalid(format!(
            "{} gold sentences but {} predicted",
            gold.len(),
            predicted.len()
        )));
    }
    // type -> (gold, predicted, matched)
    let mut counts: BTreeMap<String, (usize, usize, usize)> = BTreeMap::new();
    for (g, p) in gold.iter().zip(predicted) {
        let g: BTreeSet<&EntitySpan> = g.iter().collect();
        let p: BTreeSet<&EntitySpan> = p.iter().collect();
        for span in &g {
            counts.entry(span.entity_type.clone()).or_default().0 += 1;
        }
        for span in &p {
            let c = counts.entry(span.entity_type.clone()).or_default();
            c.1 += 1;
            if g.contains(span) {
                c.2 += 1;
            }
        }
    }
    let (mut tg, mut tp, mut tm) = (0, 0, 0);
    let per_type = counts
        .into_iter()
        .map(|(ty, (g, p, m))| {
            tg += g;
            tp += p;
            tm += m;
            (ty, TypeMetrics::from_counts(g, p, m))
        })
        .collect();
    let overall = TypeMetrics::from_counts(tg, tp, tm);
    Ok(MetricsReport {
        precision: overall.precision,
        recall: overall.recall,
        f1: overall.f1,
        gold: tg,
        predicted: tp,
        matched: tm,
        per_type,
    })
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>9} {:>9} {:>9} {:>8}",
            "type", "precision", "recall", "f1", "support"
        )?;
        for (ty, m) in &self.per_type {
            writeln!(
                f,
                "{:<12} {:>9.2} {:>9.2} {:>9.2} {:>8}",
                ty,
                100.0 * m.precision,
                100.0 * m.recall,
                100.0 * m.f1,
                m.support
            )?;
        }
        write!(
            f,
            "{:<12} {:>9.2} {:>9.2} {:>9.2} {:>8}",
            "overall",
            100.0 * self.precision,
            100.0 * self.recall,
            100.0 * self.f1,
            self.gold
        )
    }
}
