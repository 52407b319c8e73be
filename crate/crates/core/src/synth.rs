//! Seeded synthetic benchmark and a nearest-centroid stand-in base model.
//!
//! Every label owns several cluster centers ("modes") drawn with Zipf-like
//! frequencies, so some contexts of a label are rare. A token embedding is
//! its mode's center plus isotropic noise plus a small pull towards the
//! primary centers of the neighboring tokens' labels. The synthetic base
//! model scores each label by the negative distance to that label's nearest
//! center; a configurable share of tokens instead receives a distribution
//! that moves most of its mass to a wrong label.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dump::{DumpSentence, EmbeddingDump, Token};
use crate::error::{Error, Result};
use crate::labels::{render_spans, EntitySpan, LabelVocab, TaggingScheme};
use crate::prob::log_softmax;

const TYPE_NAMES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];
/// Share of a corrupted token's mass moved onto the wrong label.
const CORRUPTION_MASS: f64 = 0.6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub entity_types: usize,
    pub scheme: TaggingScheme,
    pub train_sentences: usize,
    pub test_sentences: usize,
    pub mean_sentence_length: usize,
    pub dim: usize,
    pub modes_per_label: usize,
    /// Standard deviation of cluster center coordinates.
    pub center_spread: f64,
    /// Standard deviation of per-token embedding noise.
    pub noise: f64,
    /// Weight of the neighboring-token context term.
    pub context_weight: f64,
    /// Probability that an entity starts at a position outside any entity.
    pub entity_rate: f64,
    pub corruption_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            entity_types: 4,
            scheme: TaggingScheme::Bio,
            train_sentences: 600,
            test_sentences: 200,
            mean_sentence_length: 12,
            dim: 16,
            modes_per_label: 3,
            center_spread: 1.0,
            noise: 0.55,
            context_weight: 0.15,
            entity_rate: 0.15,
            corruption_rate: 0.3,
            seed: 2022,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("entity_types", self.entity_types),
            ("train_sentences", self.train_sentences),
            ("test_sentences", self.test_sentences),
            ("mean_sentence_length", self.mean_sentence_length),
            ("dim", self.dim),
            ("modes_per_label", self.modes_per_label),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("{name} must be positive")));
        }
        for (name, v) in [
            ("center_spread", self.center_spread),
            ("noise", self.noise),
            ("context_weight", self.context_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be a non-negative real"
                )));
            }
        }
        for (name, v) in [
            ("entity_rate", self.entity_rate),
            ("corruption_rate", self.corruption_rate),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::invalid(format!(
                    "{name} must lie in [0, 1], got {v}"
                )));
            }
        }
        Ok(())
    }

    pub fn type_names(&self) -> Vec<String> {
        (0..self.entity_types)
            .map(|i| match TYPE_NAMES.get(i) {
                Some(name) => name.to_string(),
                None => format!("T{i}"),
            })
            .collect()
    }
}

/// Fixed cluster geometry shared by every split of one configuration.
struct World {
    config: SyntheticConfig,
    vocab: LabelVocab,
    types: Vec<String>,
    /// `centers[label][mode]`
    centers: Vec<Vec<Vec<f64>>>,
    mode_weights: Vec<f64>,
}

impl World {
    fn new(config: &SyntheticConfig) -> Result<Self> {
        config.validate()?;
        let types = config.type_names();
        let vocab = LabelVocab::for_scheme(config.scheme, &types)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let spread =
            Normal::new(0.0, config.center_spread).map_err(|e| Error::invalid(e.to_string()))?;
        let centers = (0..vocab.len())
            .map(|_| {
                (0..config.modes_per_label)
                    .map(|_| (0..config.dim).map(|_| spread.sample(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let raw: Vec<f64> = (0..config.modes_per_label)
            .map(|j| 1.0 / (j + 1) as f64)
            .collect();
        let total: f64 = raw.iter().sum();
        Ok(Self {
            config: config.clone(),
            vocab,
            types,
            centers,
            mode_weights: raw.into_iter().map(|w| w / total).collect(),
        })
    }

    fn sample_mode(&self, rng: &mut ChaCha8Rng) -> usize {
        let mut u: f64 = rng.random();
        for (j, w) in self.mode_weights.iter().enumerate() {
            if u < *w {
                return j;
            }
            u -= w;
        }
        self.mode_weights.len() - 1
    }

    fn sample_spans(&self, len: usize, rng: &mut ChaCha8Rng) -> Vec<EntitySpan> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < len {
            if rng.random::<f64>() < self.config.entity_rate {
                let ty = &self.types[rng.random_range(0..self.types.len())];
                let mut span_len = 1;
                while span_len < 4 && rng.random::<f64>() < 0.4 {
                    span_len += 1;
                }
                let end = (i + span_len).min(len) - 1;
                spans.push(EntitySpan::new(ty.clone(), i, end));
                // one outside token after every entity keeps adjacent spans apart
                i = end + 2;
            } else {
                i += 1;
            }
        }
        spans
    }

    fn base_log_probs(
        &self,
        embedding: &[f32],
        gold: u32,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<f32>> {
        let scores: Vec<f64> = self
            .centers
            .iter()
            .map(|modes| {
                -modes
                    .iter()
                    .map(|c| distance(embedding, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let mut log_probs = log_softmax(&scores)?;
        if rng.random::<f64>() < self.config.corruption_rate {
            let labels = self.vocab.len();
            let offset = rng.random_range(1..labels);
            let wrong = (gold as usize + offset) % labels;
            let mut probs: Vec<f64> = log_probs
                .iter()
                .map(|l| (1.0 - CORRUPTION_MASS) * l.exp())
                .collect();
            probs[wrong] += CORRUPTION_MASS;
            log_probs = probs.iter().map(|p| p.ln()).collect();
        }
        Ok(log_probs.into_iter().map(|l| l as f32).collect())
    }

    fn sample_dump(&self, sentences: usize, stream: u64) -> Result<EmbeddingDump> {
        let cfg = &self.config;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream);
        let noise = Normal::new(0.0, cfg.noise).map_err(|e| Error::invalid(e.to_string()))?;
        let lo = (cfg.mean_sentence_length / 2).max(1);
        let hi = (cfg.mean_sentence_length * 3 / 2).max(lo);
        let mut out = Vec::with_capacity(sentences);
        for _ in 0..sentences {
            let len = rng.random_range(lo..=hi);
            let spans = self.sample_spans(len, &mut rng);
            let tags = render_spans(&spans, len, cfg.scheme)?;
            let labels: Vec<u32> = tags
                .iter()
                .map(|t| {
                    self.vocab
                        .id(t)
                        .expect("scheme vocabulary covers rendered tags")
                })
                .collect();
            let modes: Vec<usize> = (0..len).map(|_| self.sample_mode(&mut rng)).collect();
            let mut tokens = Vec::with_capacity(len);
            for i in 0..len {
                let label = labels[i] as usize;
                let center = &self.centers[label][modes[i]];
                let context: Vec<usize> = [i.checked_sub(1), (i + 1 < len).then_some(i + 1)]
                    .into_iter()
                    .flatten()
                    .map(|j| labels[j] as usize)
                    .collect();
                let embedding: Vec<f32> = (0..cfg.dim)
                    .map(|d| {
                        let ctx = if context.is_empty() {
                            0.0
                        } else {
                            context.iter().map(|&l| self.centers[l][0][d]).sum::<f64>()
                                / context.len() as f64
                        };
                        (center[d] + noise.sample(&mut rng) + cfg.context_weight * ctx) as f32
                    })
                    .collect();
                let base_log_probs = self.base_log_probs(&embedding, labels[i], &mut rng)?;
                let word = match tags[i].split_once('-') {
                    Some((_, ty)) => format!("{}{}", ty.to_lowercase(), modes[i]),
                    None => format!("w{}", modes[i]),
                };
                tokens.push(Token {
                    word,
                    gold: Some(labels[i]),
                    embedding,
                    base_log_probs,
                });
            }
            out.push(DumpSentence::new(tokens));
        }
        EmbeddingDump::new(cfg.dim, self.vocab.clone(), out)
    }
}

fn distance(a: &[f32], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (f64::from(*x) - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Generates the (train, test) splits of a configuration.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<(EmbeddingDump, EmbeddingDump)> {
    let world = World::new(config)?;
    Ok((
        world.sample_dump(config.train_sentences, 1)?,
        world.sample_dump(config.test_sentences, 2)?,
    ))
}

/// A third split with `test_sentences` sentences, drawn from the same clusters,
/// for tuning hyperparameters without touching the test split.
pub fn gen_synthetic_dev(config: &SyntheticConfig) -> Result<EmbeddingDump> {
    World::new(config)?.sample_dump(config.test_sentences, 3)
}

/// Minimum probability given to labels without training examples.
pub const CENTROID_FLOOR: f64 = 1e-6;

/// Nearest-centroid classifier: softmax over negative distances to per-label means.
#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    vocab: LabelVocab,
    centroids: Vec<Option<Vec<f64>>>,
}

impl CentroidModel {
    pub fn centroid(&self, label: u32) -> Option<&[f64]> {
        self.centroids.get(label as usize)?.as_deref()
    }

    /// Labels that had no training examples.
    pub fn missing_labels(&self) -> Vec<u32> {
        (0..self.centroids.len() as u32)
            .filter(|&l| self.centroids[l as usize].is_none())
            .collect()
    }

    pub fn log_probs(&self, embedding: &[f32]) -> Result<Vec<f64>> {
        let present: Vec<(usize, f64)> = self
            .centroids
            .iter()
            .enumerate()
            .filter_map(|(l, c)| c.as_ref().map(|c| (l, -distance(embedding, c))))
            .collect();
        let scores: Vec<f64> = present.iter().map(|(_, s)| *s).collect();
        let lp = log_softmax(&scores)?;
        let missing = self.centroids.len() - present.len();
        let scale = (1.0 - CENTROID_FLOOR * missing as f64).ln();
        let mut out = vec![CENTROID_FLOOR.ln(); self.centroids.len()];
        for ((label, _), l) in present.iter().zip(lp) {
            out[*label] = l + scale;
        }
        Ok(out)
    }

    pub fn predict(&self, embedding: &[f32]) -> Result<u32> {
        Ok(crate::prob::argmax(&self.log_probs(embedding)?) as u32)
    }

    /// Copy of `dump` whose base log-probabilities come from this model.
    pub fn relabel(&self, dump: &EmbeddingDump) -> Result<EmbeddingDump> {
        if dump.vocab != self.vocab {
            return Err(Error::mismatch("dump vocabulary differs from the model's"));
        }
        let mut out = dump.clone();
        for sentence in &mut out.sentences {
            for token in &mut sentence.tokens {
                token.base_log_probs = self
                    .log_probs(&token.embedding)?
                    .into_iter()
                    .map(|l| l as f32)
                    .collect();
            }
        }
        Ok(out)
    }
}

/// Fits one centroid per label from the gold-labeled tokens of `train`.
pub fn fit_centroid_baseline(train: &EmbeddingDump) -> Result<CentroidModel> {
    let labels = train.vocab.len();
    let mut sums = vec![vec![0.0f64; train.dim]; labels];
    let mut counts = vec![0usize; labels];
    for (si, sentence) in train.sentences.iter().enumerate() {
        for (ti, token) in sentence.tokens.iter().enumerate() {
            let gold = token.gold.ok_or(Error::UnlabeledToken {
                sentence: si,
                token: ti,
            })? as usize;
            counts[gold] += 1;
            for (s, v) in sums[gold].iter_mut().zip(&token.embedding) {
                *s += f64::from(*v);
            }
        }
    }
    if counts.iter().all(|&c| c == 0) {
        return Err(Error::invalid(
            "cannot fit a centroid model without labeled tokens",
        ));
    }
    let centroids = sums
        .into_iter()
        .zip(&counts)
        .enumerate()
        .map(|(label, (sum, &count))| {
            if count == 0 {
                log::warn!(
                    "label {:?} has no training examples; it receives floor mass only",
                    train.vocab.label(label as u32).unwrap_or("?")
                );
                None
            } else {
                Some(sum.into_iter().map(|s| s / count as f64).collect())
            }
        })
        .collect();
    Ok(CentroidModel {
        vocab: train.vocab.clone(),
        centroids,
    })
}
