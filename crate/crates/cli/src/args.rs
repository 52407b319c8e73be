use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use knn_ner::search::ApproxIndexParams;
use knn_ner::{Hyperparams, SyntheticConfig, TaggingScheme};

use crate::failure::CmdResult;

fn at_least_one(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(0) => Err("must be at least 1".into()),
        Ok(k) => Ok(k),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "knn-ner",
    version,
    about = "kNN-augmented NER inference and evaluation"
)]
pub struct Cli {
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true, env = "KNN_NER_THREADS", value_parser = clap::value_parser!(u32).range(1..))]
    pub threads: Option<u32>,

    /// Run on one thread, for timing comparisons.
    #[arg(long, global = true, conflicts_with = "threads")]
    pub single_thread: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a datastore from a labeled training dump.
    Build(BuildArgs),
    /// Print the label histogram of a datastore.
    Stats(StatsArgs),
    /// Predict labels for every token of a dump.
    Predict(PredictArgs),
    /// Score the interpolated model and the base model on a labeled dump.
    Eval(EvalArgs),
    /// Evaluate a grid of (k, lambda, T) on a labeled dev dump.
    Sweep(SweepArgs),
    /// Generate a seeded synthetic benchmark.
    Synth(SynthArgs),
    /// Trace F1 against the share of training data the base model sees.
    Lowres(LowresArgs),
}

#[derive(Debug, Args)]
pub struct HyperArgs {
    /// Neighbors retrieved per token.
    #[arg(long, default_value_t = 256, value_parser = at_least_one)]
    pub k: usize,

    /// Weight of the base model in the interpolation.
    #[arg(long, default_value_t = 0.5)]
    pub lambda: f64,

    /// Temperature of the distance kernel.
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
}

impl HyperArgs {
    pub fn hyper(&self) -> CmdResult<Hyperparams> {
        Ok(Hyperparams::new(self.k, self.temperature, self.lambda)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum IndexKind {
    Exact,
    Approx,
}

#[derive(Debug, Args)]
pub struct IndexArgs {
    /// Retrieval backend.
    #[arg(long, value_enum, default_value_t = IndexKind::Exact)]
    pub index: IndexKind,

    /// Saved approximate index to load instead of building one; implies `--index approx`.
    #[arg(long)]
    pub index_file: Option<PathBuf>,

    /// Graph degree of the approximate index.
    #[arg(long, default_value_t = ApproxIndexParams::default().degree)]
    pub degree: usize,

    /// Initial search beam of the approximate index.
    #[arg(long, default_value_t = ApproxIndexParams::default().search_beam)]
    pub search_beam: usize,

    /// Recall the approximate index must reach during calibration.
    #[arg(long, default_value_t = ApproxIndexParams::default().target_recall)]
    pub target_recall: f64,
}

impl IndexArgs {
    pub fn params(&self) -> CmdResult<ApproxIndexParams> {
        let params = ApproxIndexParams {
            degree: self.degree,
            search_beam: self.search_beam,
            target_recall: self.target_recall,
            ..Default::default()
        };
        params.validate()?;
        Ok(params)
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Labeled training dump.
    #[arg(long)]
    pub dump: PathBuf,

    /// Datastore file to write.
    #[arg(long)]
    pub out: PathBuf,

    /// Also build an approximate index and save it here.
    #[arg(long)]
    pub index_out: Option<PathBuf>,

    #[command(flatten)]
    pub index: IndexArgs,
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    #[arg(long)]
    pub store: PathBuf,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    #[arg(long)]
    pub store: PathBuf,

    /// Query dump; gold labels are optional.
    #[arg(long)]
    pub dump: PathBuf,

    /// Prediction records, one JSON object per line.
    #[arg(long)]
    pub out: PathBuf,

    /// Include neighbors and distributions for every token.
    #[arg(long)]
    pub trace: bool,

    #[command(flatten)]
    pub hyper: HyperArgs,

    #[command(flatten)]
    pub index: IndexArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub store: PathBuf,

    /// Labeled dump to score.
    #[arg(long)]
    pub dump: PathBuf,

    /// Tagging scheme; inferred from the label vocabulary when omitted.
    #[arg(long)]
    pub scheme: Option<TaggingScheme>,

    /// Full report as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[command(flatten)]
    pub hyper: HyperArgs,

    #[command(flatten)]
    pub index: IndexArgs,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub store: PathBuf,

    /// Labeled dev dump.
    #[arg(long)]
    pub dump: PathBuf,

    /// Result table as CSV.
    #[arg(long)]
    pub out: PathBuf,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "1,2,4,8,16,32,64,128,256"
    )]
    pub ks: Vec<usize>,

    #[arg(
        long,
        value_delimiter = ',',
        default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9"
    )]
    pub lambdas: Vec<f64>,

    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,1,3")]
    pub temperatures: Vec<f64>,

    #[arg(long)]
    pub scheme: Option<TaggingScheme>,

    #[command(flatten)]
    pub index: IndexArgs,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Directory that receives train.knnd, dev.knnd and test.knnd.
    #[arg(long)]
    pub out_dir: PathBuf,

    #[arg(long, default_value_t = SyntheticConfig::default().seed)]
    pub seed: u64,

    #[arg(long, default_value_t = SyntheticConfig::default().train_sentences)]
    pub train_sentences: usize,

    /// Sentences in each of the dev and test splits.
    #[arg(long, default_value_t = SyntheticConfig::default().test_sentences)]
    pub test_sentences: usize,

    #[arg(long, default_value_t = SyntheticConfig::default().entity_types)]
    pub entity_types: usize,

    #[arg(long, default_value_t = SyntheticConfig::default().dim)]
    pub dim: usize,

    #[arg(long, default_value_t = SyntheticConfig::default().noise)]
    pub noise: f64,

    /// Share of tokens whose base distribution is pushed toward a wrong label.
    #[arg(long, default_value_t = SyntheticConfig::default().corruption_rate)]
    pub corruption_rate: f64,

    #[arg(long, default_value_t = SyntheticConfig::default().scheme)]
    pub scheme: TaggingScheme,
}

impl SynthArgs {
    pub fn config(&self) -> CmdResult<SyntheticConfig> {
        let config = SyntheticConfig {
            seed: self.seed,
            train_sentences: self.train_sentences,
            test_sentences: self.test_sentences,
            entity_types: self.entity_types,
            dim: self.dim,
            noise: self.noise,
            corruption_rate: self.corruption_rate,
            scheme: self.scheme,
            ..Default::default()
        };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Args)]
pub struct LowresArgs {
    /// Labeled training dump; also the retrieval datastore.
    #[arg(long)]
    pub train: PathBuf,

    #[arg(long)]
    pub test: PathBuf,

    /// Dev dump for tuning lambda and T; the test dump is used when omitted.
    #[arg(long)]
    pub dev: Option<PathBuf>,

    #[arg(long, value_delimiter = ',', default_value = "0.2,0.4,0.6,0.8,1")]
    pub fractions: Vec<f64>,

    #[arg(long, default_value_t = 17)]
    pub seed: u64,

    #[arg(long, default_value_t = 32, value_parser = at_least_one)]
    pub k: usize,

    #[arg(long)]
    pub scheme: Option<TaggingScheme>,

    /// Curve as CSV.
    #[arg(long)]
    pub out: PathBuf,
}
