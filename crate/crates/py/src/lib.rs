//! Python bindings for the `knn_ner` crate.
//!
//! Built as the `knn_ner` extension module. Label ids cross the boundary as
//! label strings; spans as `(type, start, end)` tuples with inclusive ends.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::sync::Arc;

use knn_ner::eval::{gold_spans, MetricsReport};
use knn_ner::interpolate::predict_tokens;
use knn_ner::search::{ApproxIndexParams, Neighbor, NeighborSearch};
use knn_ner::{
    build_datastore, load_datastore, read_dump, save_datastore, write_dump, ApproxIndex,
    DumpSentence, EmbeddingDump, EntitySpan, Error, LabelDistribution, LabelVocab, SyntheticConfig,
    TaggingScheme, Token,
};
use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

create_exception!(
    knn_ner,
    KnnNerError,
    PyException,
    "A malformed or incompatible input file."
);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::InvalidInput(_) | Error::Mismatch(_) | Error::UnlabeledToken { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => KnnNerError::new_err(other.to_string()),
    }
}

fn parse_scheme(scheme: &str) -> PyResult<TaggingScheme> {
    scheme.parse().map_err(to_py)
}

fn open(path: &PathBuf) -> PyResult<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

type SpanTuple = (String, usize, usize);

fn span_tuple(s: EntitySpan) -> SpanTuple {
    (s.entity_type, s.start, s.end)
}

fn report_dict<'py>(py: Python<'py>, m: &MetricsReport) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("precision", m.precision)?;
    d.set_item("recall", m.recall)?;
    d.set_item("f1", m.f1)?;
    d.set_item("gold", m.gold)?;
    d.set_item("predicted", m.predicted)?;
    d.set_item("matched", m.matched)?;
    Ok(d)
}

/// Softmax of `logits`, shifted by the maximum for stability.
#[pyfunction]
fn stable_softmax(logits: Vec<f64>) -> PyResult<Vec<f64>> {
    Ok(knn_ner::stable_softmax(&logits)
        .map_err(to_py)?
        .into_probs())
}

/// Entity spans of a tag sequence; malformed sequences are repaired leniently.
#[pyfunction]
#[pyo3(signature = (tags, scheme = "bio"))]
fn extract_spans(tags: Vec<String>, scheme: &str) -> PyResult<Vec<SpanTuple>> {
    let spans = knn_ner::extract_spans(&tags, parse_scheme(scheme)?).map_err(to_py)?;
    Ok(spans.into_iter().map(span_tuple).collect())
}

/// Micro-averaged span precision, recall and F1 over sentences of spans.
#[pyfunction]
fn span_prf<'py>(
    py: Python<'py>,
    gold: Vec<Vec<SpanTuple>>,
    predicted: Vec<Vec<SpanTuple>>,
) -> PyResult<Bound<'py, PyDict>> {
    let convert = |sentences: Vec<Vec<SpanTuple>>| -> Vec<Vec<EntitySpan>> {
        sentences
            .into_iter()
            .map(|s| {
                s.into_iter()
                    .map(|(t, a, b)| EntitySpan::new(t, a, b))
                    .collect()
            })
            .collect()
    };
    let report = knn_ner::span_prf(&convert(gold), &convert(predicted)).map_err(to_py)?;
    report_dict(py, &report)
}

/// Label distribution of `(distance, label_id)` neighbors under the distance kernel.
#[pyfunction]
fn knn_distribution(
    neighbors: Vec<(f64, u32)>,
    temperature: f64,
    num_labels: usize,
) -> PyResult<Vec<f64>> {
    let entries = neighbors
        .into_iter()
        .enumerate()
        .map(|(index, (distance, value))| Neighbor {
            index,
            distance,
            value,
        })
        .collect();
    let set = knn_ner::NeighborSet::from_unsorted(entries);
    Ok(knn_ner::knn_distribution(&set, temperature, num_labels)
        .map_err(to_py)?
        .into_probs())
}

/// `lam * p_ner + (1 - lam) * p_knn`.
#[pyfunction]
fn interpolate(p_ner: Vec<f64>, p_knn: Vec<f64>, lam: f64) -> PyResult<Vec<f64>> {
    let a = LabelDistribution::new(p_ner).map_err(to_py)?;
    let b = LabelDistribution::new(p_knn).map_err(to_py)?;
    Ok(knn_ner::interpolate(&a, &b, lam)
        .map_err(to_py)?
        .into_probs())
}

/// One token as handed over by an embedding exporter.
type TokenTuple = (String, Option<String>, Vec<f32>, Vec<f32>);

/// Token embeddings and base log-probabilities of a labeled or unlabeled corpus.
#[pyclass(name = "Dump", module = "knn_ner")]
struct PyDump {
    inner: EmbeddingDump,
}

#[pymethods]
impl PyDump {
    /// Builds a dump from sentences of `(word, gold_label_or_None, embedding, log_probs)`.
    #[new]
    fn new(labels: Vec<String>, dim: usize, sentences: Vec<Vec<TokenTuple>>) -> PyResult<Self> {
        let vocab = LabelVocab::new(labels).map_err(to_py)?;
        let mut out = Vec::with_capacity(sentences.len());
        for sentence in sentences {
            let mut tokens = Vec::with_capacity(sentence.len());
            for (word, gold, embedding, base_log_probs) in sentence {
                let gold = gold
                    .map(|g| {
                        vocab
                            .id(&g)
                            .ok_or_else(|| PyValueError::new_err(format!("unknown label {g:?}")))
                    })
                    .transpose()?;
                tokens.push(Token {
                    word,
                    gold,
                    embedding,
                    base_log_probs,
                });
            }
            out.push(DumpSentence::new(tokens));
        }
        let inner = EmbeddingDump::new(dim, vocab, out).map_err(to_py)?;
        inner.validate().map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: read_dump(open(&path)?).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        write_dump(&self.inner, &mut w).map_err(to_py)?;
        w.flush()?;
        Ok(())
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.vocab.labels().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.sentences.len()
    }

    fn token_count(&self) -> usize {
        self.inner.token_count()
    }

    fn words(&self) -> Vec<Vec<String>> {
        self.inner.sentences.iter().map(|s| s.words()).collect()
    }

    /// Gold labels per sentence; `None` for tokens without one.
    fn gold(&self) -> Vec<Vec<Option<String>>> {
        let vocab = &self.inner.vocab;
        self.inner
            .sentences
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| t.gold.and_then(|g| vocab.label(g)).map(str::to_string))
                    .collect()
            })
            .collect()
    }

    /// Gold entity spans per sentence; fails on unlabeled tokens.
    #[pyo3(signature = (scheme = "bio"))]
    fn gold_spans(&self, scheme: &str) -> PyResult<Vec<Vec<SpanTuple>>> {
        let spans = gold_spans(&self.inner, parse_scheme(scheme)?).map_err(to_py)?;
        Ok(spans
            .into_iter()
            .map(|s| s.into_iter().map(span_tuple).collect())
            .collect())
    }

    fn content_hash(&self) -> PyResult<String> {
        let hash = self.inner.content_hash().map_err(to_py)?;
        Ok(hash.iter().map(|b| format!("{b:02x}")).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Dump(sentences={}, tokens={}, dim={}, labels={})",
            self.inner.sentences.len(),
            self.inner.token_count(),
            self.inner.dim,
            self.inner.vocab.len()
        )
    }
}

/// Retrieval backend shared by the datastore and the approximate index.
fn predict_with(
    index: &dyn NeighborSearch,
    dump: &PyDump,
    k: usize,
    lam: f64,
    temperature: f64,
) -> PyResult<Vec<Vec<String>>> {
    let hyper = knn_ner::Hyperparams::new(k, temperature, lam).map_err(to_py)?;
    let prediction = predict_tokens(index, &dump.inner, &hyper, false).map_err(to_py)?;
    let vocab = index.vocab();
    Ok(prediction
        .labels
        .into_iter()
        .map(|s| {
            s.into_iter()
                .map(|id| vocab.label(id).unwrap_or("?").to_string())
                .collect()
        })
        .collect())
}

fn evaluate_with<'py>(
    py: Python<'py>,
    index: &dyn NeighborSearch,
    dump: &PyDump,
    k: usize,
    lam: f64,
    temperature: f64,
    scheme: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let hyper = knn_ner::Hyperparams::new(k, temperature, lam).map_err(to_py)?;
    let report =
        knn_ner::evaluate_dump(index, &dump.inner, &hyper, parse_scheme(scheme)?).map_err(to_py)?;
    let d = PyDict::new(py);
    d.set_item("knn", report_dict(py, &report.knn)?)?;
    d.set_item("baseline", report_dict(py, &report.baseline)?)?;
    Ok(d)
}

fn neighbors_with(
    index: &dyn NeighborSearch,
    query: Vec<f32>,
    k: usize,
) -> PyResult<Vec<(usize, f64, String)>> {
    let set = index.search(&query, k).map_err(to_py)?;
    let vocab = index.vocab();
    Ok(set
        .entries()
        .iter()
        .map(|n| {
            (
                n.index,
                n.distance,
                vocab.label(n.value).unwrap_or("?").to_string(),
            )
        })
        .collect())
}

/// Token embeddings keyed to their gold labels.
#[pyclass(name = "Datastore", module = "knn_ner")]
struct PyDatastore {
    inner: Arc<knn_ner::Datastore>,
}

#[pymethods]
impl PyDatastore {
    /// One entry per token of a fully labeled dump.
    #[staticmethod]
    fn build(dump: &PyDump) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(build_datastore(&dump.inner).map_err(to_py)?),
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: Arc::new(load_datastore(open(&path)?).map_err(to_py)?),
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let mut w = BufWriter::new(File::create(&path)?);
        save_datastore(&self.inner, &mut w).map_err(to_py)?;
        w.flush()?;
        Ok(())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn labels(&self) -> Vec<String> {
        self.inner.vocab().labels().to_vec()
    }

    /// Entry count per label.
    fn stats(&self) -> Vec<(String, usize)> {
        knn_ner::datastore_stats(&self.inner)
            .histogram
            .into_iter()
            .map(|c| (c.label, c.count))
            .collect()
    }

    /// Exact nearest entries as `(index, distance, label)`, nearest first.
    fn search(&self, query: Vec<f32>, k: usize) -> PyResult<Vec<(usize, f64, String)>> {
        neighbors_with(self.inner.as_ref(), query, k)
    }

    /// Predicted labels per sentence.
    #[pyo3(signature = (dump, k = 256, lam = 0.5, temperature = 1.0))]
    fn predict(
        &self,
        dump: &PyDump,
        k: usize,
        lam: f64,
        temperature: f64,
    ) -> PyResult<Vec<Vec<String>>> {
        predict_with(self.inner.as_ref(), dump, k, lam, temperature)
    }

    /// Span scores of the interpolated and the base model.
    #[pyo3(signature = (dump, k = 256, lam = 0.5, temperature = 1.0, scheme = "bio"))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        dump: &PyDump,
        k: usize,
        lam: f64,
        temperature: f64,
        scheme: &str,
    ) -> PyResult<Bound<'py, PyDict>> {
        evaluate_with(py, self.inner.as_ref(), dump, k, lam, temperature, scheme)
    }

    fn __repr__(&self) -> String {
        format!(
            "Datastore(entries={}, dim={})",
            self.inner.len(),
            self.inner.dim()
        )
    }
}

/// Graph index over a datastore, calibrated to a target recall.
#[pyclass(name = "ApproxIndex", module = "knn_ner")]
struct PyApproxIndex {
    inner: ApproxIndex,
}

#[pymethods]
impl PyApproxIndex {
    #[new]
    #[pyo3(signature = (store, degree = 16, search_beam = 64, target_recall = 0.99))]
    fn new(
        store: &PyDatastore,
        degree: usize,
        search_beam: usize,
        target_recall: f64,
    ) -> PyResult<Self> {
        let params = ApproxIndexParams {
            degree,
            search_beam,
            target_recall,
            ..Default::default()
        };
        Ok(Self {
            inner: ApproxIndex::build(store.inner.clone(), params).map_err(to_py)?,
        })
    }

    #[getter]
    fn calibrated_recall(&self) -> f64 {
        self.inner.calibrated_recall()
    }

    fn search(&self, query: Vec<f32>, k: usize) -> PyResult<Vec<(usize, f64, String)>> {
        neighbors_with(&self.inner, query, k)
    }

    #[pyo3(signature = (dump, k = 256, lam = 0.5, temperature = 1.0))]
    fn predict(
        &self,
        dump: &PyDump,
        k: usize,
        lam: f64,
        temperature: f64,
    ) -> PyResult<Vec<Vec<String>>> {
        predict_with(&self.inner, dump, k, lam, temperature)
    }
}

/// Seeded synthetic `(train, test)` dumps.
#[pyfunction]
#[pyo3(signature = (seed = 2022, train_sentences = 600, test_sentences = 200, dim = 16, corruption_rate = 0.3, scheme = "bio"))]
fn gen_synthetic(
    seed: u64,
    train_sentences: usize,
    test_sentences: usize,
    dim: usize,
    corruption_rate: f64,
    scheme: &str,
) -> PyResult<(PyDump, PyDump)> {
    let config = SyntheticConfig {
        seed,
        train_sentences,
        test_sentences,
        dim,
        corruption_rate,
        scheme: parse_scheme(scheme)?,
        ..Default::default()
    };
    let (train, test) = knn_ner::gen_synthetic(&config).map_err(to_py)?;
    Ok((PyDump { inner: train }, PyDump { inner: test }))
}

#[pymodule]
#[pyo3(name = "knn_ner")]
fn knn_ner_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("KnnNerError", m.py().get_type::<KnnNerError>())?;
    m.add_class::<PyDump>()?;
    m.add_class::<PyDatastore>()?;
    m.add_class::<PyApproxIndex>()?;
    m.add_function(wrap_pyfunction!(stable_softmax, m)?)?;
    m.add_function(wrap_pyfunction!(extract_spans, m)?)?;
    m.add_function(wrap_pyfunction!(span_prf, m)?)?;
    m.add_function(wrap_pyfunction!(knn_distribution, m)?)?;
    m.add_function(wrap_pyfunction!(interpolate, m)?)?;
    m.add_function(wrap_pyfunction!(gen_synthetic, m)?)?;
    Ok(())
}
