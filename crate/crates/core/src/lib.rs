//! k-nearest-neighbor augmentation for token-level named entity recognition.
//!
//! A datastore maps contextual token embeddings from a training set to their
//! gold labels. At inference time each token's nearest stored embeddings vote
//! for a label distribution, which is mixed with the base tagger's own
//! distribution before taking the argmax.

mod binio;
pub mod datastore;
pub mod dump;
pub mod error;
pub mod eval;
pub mod interpolate;
pub mod labels;
pub mod params;
pub mod prob;
pub mod search;
pub mod synth;

pub use datastore::{
    build_datastore, build_datastore_at, datastore_stats, load_datastore, save_datastore,
    Datastore, DatastoreMeta, DatastoreStats,
};
pub use dump::{read_dump, subsample_dump, write_dump, DumpSentence, EmbeddingDump, Token};
pub use error::{Error, Result};
pub use eval::{
    evaluate_dump, low_resource_curve, span_prf, sweep, EvalReport, MetricsReport, SweepGrid,
    SweepResult,
};
pub use interpolate::{interpolate, knn_distribution, predict_tokens, Prediction, TokenTrace};
pub use labels::{extract_spans, EntitySpan, LabelVocab, Sentence, TaggingScheme};
pub use params::Hyperparams;
pub use prob::{stable_softmax, LabelDistribution};
pub use search::{
    brute_force_oracle, measure_recall, search_exact, ApproxIndex, ApproxIndexParams, Neighbor,
    NeighborSearch, NeighborSet,
};
pub use synth::{fit_centroid_baseline, gen_synthetic, CentroidModel, SyntheticConfig};
