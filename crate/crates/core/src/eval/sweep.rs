use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::{
    base_distributions, baseline_report, decode_cached, gold_spans, label_spans, span_prf,
    MetricsReport, RetrievalCache,
};
use crate::dump::EmbeddingDump;
use crate::error::{Error, Result};
use crate::labels::TaggingScheme;
use crate::params::Hyperparams;
use crate::search::NeighborSearch;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepGrid {
    pub ks: Vec<usize>,
    pub lambdas: Vec<f64>,
    pub temperatures: Vec<f64>,
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.ks.is_empty() || self.lambdas.is_empty() || self.temperatures.is_empty() {
            return Err(Error::invalid(
                "every sweep grid axis needs at least one value",
            ));
        }
        for &k in &self.ks {
            for &lambda in &self.lambdas {
                for &t in &self.temperatures {
                    Hyperparams::new(k, t, lambda)?;
                }
            }
        }
        Ok(())
    }

    /// Cells in grid order: k outermost, then lambda, then temperature.
    pub fn cells(&self) -> Vec<Hyperparams> {
        let mut out = Vec::with_capacity(self.len());
        for &k in &self.ks {
            for &lambda in &self.lambdas {
                for &t in &self.temperatures {
                    out.push(Hyperparams::new(k, t, lambda).expect("validated grid"));
                }
            }
        }
        out
    }

    pub fn len(&self) -> usize {
        self.ks.len() * self.lambdas.len() * self.temperatures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn max_k(&self) -> usize {
        self.ks.iter().copied().max().unwrap_or(1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub k: usize,
    pub lambda: f64,
    pub temperature: f64,
    pub report: MetricsReport,
}

impl SweepCell {
    pub fn hyper(&self) -> Hyperparams {
        Hyperparams::new(self.k, self.temperature, self.lambda).expect("validated grid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    /// Position of the selected cell in `cells`.
    pub best: usize,
    /// The base model alone on the same dump.
    pub baseline: MetricsReport,
}

impl SweepResult {
    pub fn best_cell(&self) -> &SweepCell {
        &self.cells[self.best]
    }

    /// Writes `k,lambda,T,precision,recall,f1` rows in grid order.
    pub fn write_csv<W: Write>(&self, sink: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(sink);
        let io = |e: csv::Error| Error::Io {
            offset: 0,
            source: e.into(),
        };
        w.write_record(["k", "lambda", "T", "precision", "recall", "f1"])
            .map_err(io)?;
        for c in &self.cells {
            w.write_record([
                c.k.to_string(),
                c.lambda.to_string(),
                c.temperature.to_string(),
                c.report.precision.to_string(),
                c.report.recall.to_string(),
                c.report.f1.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush().map_err(|source| Error::Io { offset: 0, source })
    }
}

/// Selection order: higher F1, then larger lambda, smaller k, smaller T.
fn prefer(a: &SweepCell, b: &SweepCell) -> Ordering {
    a.report
        .f1
        .total_cmp(&b.report.f1)
        .then(a.lambda.total_cmp(&b.lambda))
        .then(b.k.cmp(&a.k))
        .then(b.temperature.total_cmp(&a.temperature))
}

/// Evaluates every (k, lambda, T) cell on a labeled dev dump.
pub fn sweep(
    index: &dyn NeighborSearch,
    dev: &EmbeddingDump,
    grid: &SweepGrid,
    scheme: TaggingScheme,
) -> Result<SweepResult> {
    grid.validate()?;
    let cache = RetrievalCache::build(index, dev, grid.max_k())?;
    sweep_cached(&cache, dev, grid, scheme)
}

/// [`sweep`] over neighbors retrieved ahead of time for `dev`.
pub fn sweep_cached(
    cache: &RetrievalCache,
    dev: &EmbeddingDump,
    grid: &SweepGrid,
    scheme: TaggingScheme,
) -> Result<SweepResult> {
    grid.validate()?;
    let gold = gold_spans(dev, scheme)?;
    let p_ner = base_distributions(dev)?;
    let cells: Vec<SweepCell> = grid
        .cells()
        .into_par_iter()
        .map(|hyper| {
            let labels = decode_cached(cache, &p_ner, dev, &hyper)?;
            let report = span_prf(&gold, &label_spans(&labels, &dev.vocab, scheme)?)?;
            Ok(SweepCell {
                k: hyper.k(),
                lambda: hyper.lambda(),
                temperature: hyper.temperature(),
                report,
            })
        })
        .collect::<Result<_>>()?;
    let best = (0..cells.len())
        .max_by(|&a, &b| prefer(&cells[a], &cells[b]))
        .expect("non-empty grid");
    Ok(SweepResult {
        cells,
        best,
        baseline: baseline_report(dev, &gold, scheme)?,
    })
}
