use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use knn_ner::eval::{sweep, CurvePoint, LowResourceConfig};
use knn_ner::interpolate::{predict_tokens, TokenTrace};
use knn_ner::search::{save_index, ApproxIndex, NeighborSearch};
use knn_ner::synth::gen_synthetic_dev;
use knn_ner::{
    build_datastore, datastore_stats, evaluate_dump, gen_synthetic, low_resource_curve,
    save_datastore, write_dump, Datastore, DatastoreStats, EmbeddingDump, LabelVocab,
    MetricsReport, SweepGrid, TaggingScheme,
};
use serde::Serialize;

use crate::args::{
    BuildArgs, EvalArgs, IndexArgs, IndexKind, LowresArgs, PredictArgs, StatsArgs, SweepArgs,
    SynthArgs,
};
use crate::failure::{CmdResult, Failure};
use crate::files::{
    io_failure, read_dump_file, read_index_file, read_store_file, require_inputs, write_atomic,
    write_failure,
};

fn print_stats(stats: &DatastoreStats) {
    println!("entries: {}", stats.n);
    println!("dimension: {}", stats.dim);
    for c in &stats.histogram {
        println!("  {:<12} {:>9} {:>8.4}", c.label, c.count, c.frequency);
    }
}

pub fn build(args: &BuildArgs) -> CmdResult {
    require_inputs([args.dump.as_path()])?;
    let params = args
        .index_out
        .as_ref()
        .map(|_| args.index.params())
        .transpose()?;
    let dump = read_dump_file(&args.dump)?;
    let store = build_datastore(&dump)?;
    write_atomic(&args.out, |w| {
        save_datastore(&store, w)
            .map(drop)
            .map_err(write_failure(&args.out))
    })?;
    println!("wrote {}", args.out.display());
    if let (Some(path), Some(params)) = (&args.index_out, params) {
        let index = ApproxIndex::build(Arc::new(store.clone()), params)?;
        write_atomic(path, |w| {
            save_index(&index, w).map(drop).map_err(write_failure(path))
        })?;
        println!(
            "wrote {} (calibrated recall {:.4})",
            path.display(),
            index.calibrated_recall()
        );
    }
    print_stats(&datastore_stats(&store));
    Ok(())
}

pub fn stats(args: &StatsArgs) -> CmdResult {
    require_inputs([args.store.as_path()])?;
    print_stats(&datastore_stats(&read_store_file(&args.store)?));
    Ok(())
}

/// Checks index flags and input paths before any file is read.
fn check_index_args(index: &IndexArgs) -> CmdResult {
    if index.index == IndexKind::Approx || index.index_file.is_some() {
        index.params()?;
    }
    if let Some(path) = &index.index_file {
        require_inputs([path.as_path()])?;
    }
    Ok(())
}

fn open_index(store: Datastore, index: &IndexArgs) -> CmdResult<Box<dyn NeighborSearch>> {
    if let Some(path) = &index.index_file {
        return Ok(Box::new(read_index_file(path, Arc::new(store))?));
    }
    match index.index {
        IndexKind::Exact => Ok(Box::new(store)),
        IndexKind::Approx => {
            let started = Instant::now();
            let built = ApproxIndex::build(Arc::new(store), index.params()?)?;
            log::info!(
                "approximate index built in {:.1?}, calibrated recall {:.4}",
                started.elapsed(),
                built.calibrated_recall()
            );
            Ok(Box::new(built))
        }
    }
}

/// Picks the narrowest scheme whose prefixes cover every label.
fn infer_scheme(vocab: &LabelVocab) -> CmdResult<TaggingScheme> {
    [TaggingScheme::Io, TaggingScheme::Bio, TaggingScheme::Bmes]
        .into_iter()
        .find(|&s| vocab.check_scheme(s).is_ok())
        .ok_or_else(|| Failure::Usage("label vocabulary matches no tagging scheme".into()))
}

#[derive(Serialize)]
struct TokenRecord<'a> {
    neighbor_distances: Vec<f64>,
    neighbor_labels: Vec<&'a str>,
    p_knn: &'a [f64],
    p_final: &'a [f64],
}

#[derive(Serialize)]
struct SentenceRecord<'a> {
    sentence_index: usize,
    words: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gold: Option<Vec<&'a str>>,
    predicted: Vec<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    trace: Option<Vec<TokenRecord<'a>>>,
}

fn label_of(vocab: &LabelVocab, id: u32) -> &str {
    vocab.label(id).unwrap_or("?")
}

fn token_record<'a>(vocab: &'a LabelVocab, t: &'a TokenTrace) -> TokenRecord<'a> {
    TokenRecord {
        neighbor_distances: t.neighbors.distances(),
        neighbor_labels: t
            .neighbors
            .values()
            .into_iter()
            .map(|v| label_of(vocab, v))
            .collect(),
        p_knn: &t.p_knn,
        p_final: &t.p_final,
    }
}

pub fn predict(args: &PredictArgs) -> CmdResult {
    let hyper = args.hyper.hyper()?;
    check_index_args(&args.index)?;
    require_inputs([args.store.as_path(), args.dump.as_path()])?;
    let store = read_store_file(&args.store)?;
    let dump = read_dump_file(&args.dump)?;
    let index = open_index(store, &args.index)?;

    let started = Instant::now();
    let prediction = predict_tokens(index.as_ref(), &dump, &hyper, args.trace)?;
    log::info!(
        "predicted {} tokens in {:.1?}",
        dump.token_count(),
        started.elapsed()
    );

    let vocab = &dump.vocab;
    write_atomic(&args.out, |w| {
        for (i, (sentence, labels)) in dump.sentences.iter().zip(&prediction.labels).enumerate() {
            let record = SentenceRecord {
                sentence_index: i,
                words: sentence.tokens.iter().map(|t| t.word.as_str()).collect(),
                gold: sentence
                    .gold()
                    .map(|g| g.into_iter().map(|id| label_of(vocab, id)).collect()),
                predicted: labels.iter().map(|&id| label_of(vocab, id)).collect(),
                trace: prediction
                    .traces
                    .as_ref()
                    .map(|all| all[i].iter().map(|t| token_record(vocab, t)).collect()),
            };
            serde_json::to_writer(&mut *w, &record).map_err(|e| io_failure(&args.out)(e.into()))?;
            w.write_all(b"\n").map_err(io_failure(&args.out))?;
        }
        Ok(())
    })?;
    println!(
        "wrote {} records for {} tokens to {}",
        dump.sentences.len(),
        dump.token_count(),
        args.out.display()
    );
    Ok(())
}

fn metrics_line(name: &str, m: &MetricsReport) -> String {
    format!(
        "{name:<9} P {:>6.2}  R {:>6.2}  F1 {:>6.2}",
        100.0 * m.precision,
        100.0 * m.recall,
        100.0 * m.f1
    )
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let hyper = args.hyper.hyper()?;
    check_index_args(&args.index)?;
    require_inputs([args.store.as_path(), args.dump.as_path()])?;
    let store = read_store_file(&args.store)?;
    let dump = read_dump_file(&args.dump)?;
    let scheme = match args.scheme {
        Some(s) => s,
        None => infer_scheme(&dump.vocab)?,
    };
    let index = open_index(store, &args.index)?;
    let report = evaluate_dump(index.as_ref(), &dump, &hyper, scheme)?;

    if hyper.lambda() == 1.0 {
        println!("note: lambda = 1 disables retrieval; scores are the base model alone");
    }
    println!(
        "k = {}, lambda = {}, T = {}, scheme = {scheme}",
        hyper.k(),
        hyper.lambda(),
        hyper.temperature()
    );
    println!("{}", metrics_line("baseline", &report.baseline));
    println!("{}", metrics_line("knn", &report.knn));
    println!("delta F1 {:+.2}", 100.0 * report.delta_f1());
    if let Some(out) = &args.out {
        write_atomic(out, |w| {
            serde_json::to_writer_pretty(&mut *w, &report)
                .map_err(|e| io_failure(out)(e.into()))?;
            w.write_all(b"\n").map_err(io_failure(out))
        })?;
    }
    Ok(())
}

pub fn sweep_cmd(args: &SweepArgs) -> CmdResult {
    let grid = SweepGrid {
        ks: args.ks.clone(),
        lambdas: args.lambdas.clone(),
        temperatures: args.temperatures.clone(),
    };
    grid.validate()?;
    check_index_args(&args.index)?;
    require_inputs([args.store.as_path(), args.dump.as_path()])?;
    let store = read_store_file(&args.store)?;
    let dump = read_dump_file(&args.dump)?;
    let scheme = match args.scheme {
        Some(s) => s,
        None => infer_scheme(&dump.vocab)?,
    };
    let index = open_index(store, &args.index)?;
    let result = sweep(index.as_ref(), &dump, &grid, scheme)?;
    write_atomic(&args.out, |w| {
        result.write_csv(w).map_err(write_failure(&args.out))
    })?;

    let best = result.best_cell();
    println!(
        "wrote {} cells to {}",
        result.cells.len(),
        args.out.display()
    );
    println!("{}", metrics_line("baseline", &result.baseline));
    println!(
        "{}  (k = {}, lambda = {}, T = {})",
        metrics_line("best", &best.report),
        best.k,
        best.lambda,
        best.temperature
    );
    Ok(())
}

fn write_dump_file(path: &Path, dump: &EmbeddingDump) -> CmdResult {
    write_atomic(path, |w| {
        write_dump(dump, w).map(drop).map_err(write_failure(path))
    })
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let config = args.config()?;
    if !args.out_dir.is_dir() {
        return Err(Failure::NoSuchFile(args.out_dir.clone()));
    }
    let (train, test) = gen_synthetic(&config)?;
    let dev = gen_synthetic_dev(&config)?;
    for (name, dump) in [("train", &train), ("dev", &dev), ("test", &test)] {
        let path = args.out_dir.join(format!("{name}.knnd"));
        write_dump_file(&path, dump)?;
        println!(
            "wrote {} ({} sentences, {} tokens)",
            path.display(),
            dump.sentences.len(),
            dump.token_count()
        );
    }
    Ok(())
}

pub fn lowres(args: &LowresArgs) -> CmdResult {
    let mut inputs = vec![args.train.as_path(), args.test.as_path()];
    inputs.extend(args.dev.as_deref());
    require_inputs(inputs)?;
    let train = read_dump_file(&args.train)?;
    let test = read_dump_file(&args.test)?;
    let dev = args.dev.as_deref().map(read_dump_file).transpose()?;
    let scheme = match args.scheme {
        Some(s) => s,
        None => infer_scheme(&train.vocab)?,
    };
    let config = LowResourceConfig {
        fractions: args.fractions.clone(),
        seed: args.seed,
        k: args.k,
        scheme,
        ..Default::default()
    };
    let curve = low_resource_curve(&train, &test, dev.as_ref(), &config)?;

    write_atomic(&args.out, |w| {
        let mut csv = csv::Writer::from_writer(w);
        let fail = |e: csv::Error| io_failure(&args.out)(e.into());
        for point in &curve {
            csv.serialize(point).map_err(fail)?;
        }
        csv.flush().map_err(io_failure(&args.out))
    })?;
    println!(
        "{:>8} {:>9} {:>9} {:>9} {:>6} {:>5}",
        "fraction", "sentences", "baseline", "knn", "lambda", "T"
    );
    for CurvePoint {
        fraction,
        sentences,
        baseline_f1,
        knn_f1,
        lambda,
        temperature,
    } in &curve
    {
        println!(
            "{fraction:>8} {sentences:>9} {:>9.2} {:>9.2} {lambda:>6} {temperature:>5}",
            100.0 * baseline_f1,
            100.0 * knn_f1
        );
    }
    Ok(())
}
