use serde::Serialize;

use super::{
    base_distributions, baseline_report, decode_cached, gold_spans, label_spans, span_prf,
    sweep_cached, RetrievalCache, SweepGrid,
};
use crate::datastore::build_datastore_at;
use crate::dump::{subsample_dump, subsample_size, EmbeddingDump};
use crate::error::{Error, Result};
use crate::labels::TaggingScheme;
use crate::params::Hyperparams;
use crate::synth::fit_centroid_baseline;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowResourceConfig {
    /// Shares of training sentences used to fit the base model.
    pub fractions: Vec<f64>,
    pub seed: u64,
    pub k: usize,
    /// Candidates for tuning the interpolation weight.
    pub lambdas: Vec<f64>,
    pub temperatures: Vec<f64>,
    pub scheme: TaggingScheme,
}

impl Default for LowResourceConfig {
    fn default() -> Self {
        Self {
            fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            seed: 17,
            k: 32,
            lambdas: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
            temperatures: vec![0.1, 0.3, 1.0, 3.0],
            scheme: TaggingScheme::Bio,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub fraction: f64,
    /// Training sentences the base model saw.
    pub sentences: usize,
    pub baseline_f1: f64,
    pub knn_f1: f64,
    /// Tuned interpolation weight and temperature.
    pub lambda: f64,
    pub temperature: f64,
}

/// Base model fit on a growing share of `train`, retrieval always over all of it.
///
/// The base model is a nearest-centroid classifier. For each fraction the
/// interpolation weight and temperature are tuned on `dev`, or on `test`
/// when no dev split is given, then scored on `test`.
pub fn low_resource_curve(
    train: &EmbeddingDump,
    test: &EmbeddingDump,
    dev: Option<&EmbeddingDump>,
    config: &LowResourceConfig,
) -> Result<Vec<CurvePoint>> {
    if config.fractions.is_empty() {
        return Err(Error::invalid("no fractions requested"));
    }
    for &f in &config.fractions {
        subsample_size(f, train.sentences.len())?;
    }
    let grid = SweepGrid {
        ks: vec![config.k],
        lambdas: config.lambdas.clone(),
        temperatures: config.temperatures.clone(),
    };
    grid.validate()?;

    // Timestamp 0 keeps the in-memory store independent of the wall clock.
    let store = build_datastore_at(train, 0)?;
    let test_cache = RetrievalCache::build(&store, test, config.k)?;
    let dev_cache = dev
        .map(|d| RetrievalCache::build(&store, d, config.k))
        .transpose()?;
    let test_gold = gold_spans(test, config.scheme)?;

    let mut curve = Vec::with_capacity(config.fractions.len());
    for &fraction in &config.fractions {
        let subset = subsample_dump(train, fraction, config.seed)?;
        let model = fit_centroid_baseline(&subset)?;
        let test_here = model.relabel(test)?;
        let tuned = match (dev, &dev_cache) {
            (Some(d), Some(cache)) => {
                sweep_cached(cache, &model.relabel(d)?, &grid, config.scheme)?
            }
            _ => sweep_cached(&test_cache, &test_here, &grid, config.scheme)?,
        };
        let best = tuned.best_cell();
        let hyper = Hyperparams::new(config.k, best.temperature, best.lambda)?;
        let labels = decode_cached(
            &test_cache,
            &base_distributions(&test_here)?,
            &test_here,
            &hyper,
        )?;
        let knn = span_prf(
            &test_gold,
            &label_spans(&labels, &test.vocab, config.scheme)?,
        )?;
        let baseline = baseline_report(&test_here, &test_gold, config.scheme)?;
        log::info!(
            "fraction {fraction}: {} sentences, baseline F1 {:.4}, kNN F1 {:.4}",
            subset.sentences.len(),
            baseline.f1,
            knn.f1
        );
        curve.push(CurvePoint {
            fraction,
            sentences: subset.sentences.len(),
            baseline_f1: baseline.f1,
            knn_f1: knn.f1,
            lambda: hyper.lambda(),
            temperature: hyper.temperature(),
        });
    }
    Ok(curve)
}
