//! The KNND embedding-dump format.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! header    magic "KNND" | version u32 | dim u32 | vocab_size u32 | sentence_count u64
//! vocab     vocab_size x (len u32 | UTF-8 bytes)
//! sentence  token_count u32, then per token:
//!             word (len u32 | UTF-8) | gold u32 | dim x f32 | vocab_size x f32
//! ```
//!
//! `gold == 0xFFFFFFFF` marks an unlabeled token. The trailing float block
//! holds the base model's log-probabilities, which must log-sum-exp to zero
//! within [`LOG_NORM_TOLERANCE`].

use std::io::{Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::binio::{read_preamble, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::labels::{LabelVocab, Sentence};
use crate::prob::{log_sum_exp, LabelDistribution};

pub const DUMP_MAGIC: [u8; 4] = *b"KNND";
pub const DUMP_VERSION: u32 = 1;
pub const UNLABELED: u32 = u32::MAX;
/// Tolerance on the log-sum-exp of stored 32-bit log-probabilities.
pub const LOG_NORM_TOLERANCE: f64 = 1e-4;
/// Header size in bytes.
pub const DUMP_HEADER_LEN: usize = 4 + 4 + 4 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpHeader {
    pub version: u32,
    pub dim: u32,
    pub vocab_size: u32,
    pub sentence_count: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub word: String,
    /// `None` for unlabeled query tokens.
    pub gold: Option<u32>,
    pub embedding: Vec<f32>,
    pub base_log_probs: Vec<f32>,
}

impl Token {
    /// The base model distribution, exponentiated and renormalized in `f64`.
    pub fn base_distribution(&self) -> Result<LabelDistribution> {
        let lp: Vec<f64> = self.base_log_probs.iter().map(|&v| f64::from(v)).collect();
        LabelDistribution::from_log_probs(&lp)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DumpSentence {
    pub tokens: Vec<Token>,
}

impl DumpSentence {
    pub fn new(tokens: Vec<Token>) -> Self {
        Self { tokens }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn words(&self) -> Vec<String> {
        self.tokens.iter().map(|t| t.word.clone()).collect()
    }

    /// Gold labels, or `None` if any token is unlabeled.
    pub fn gold(&self) -> Option<Vec<u32>> {
        self.tokens.iter().map(|t| t.gold).collect()
    }

    pub fn to_sentence(&self) -> Result<Sentence> {
        Sentence::new(self.words(), self.gold())
    }
}

/// Sentences of tokens with embeddings and base log-distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingDump {
    pub dim: usize,
    pub vocab: LabelVocab,
    pub sentences: Vec<DumpSentence>,
}

impl EmbeddingDump {
    pub fn new(dim: usize, vocab: LabelVocab, sentences: Vec<DumpSentence>) -> Result<Self> {
        let dump = Self {
            dim,
            vocab,
            sentences,
        };
        dump.validate()?;
        Ok(dump)
    }

    pub fn header(&self) -> DumpHeader {
        DumpHeader {
            version: DUMP_VERSION,
            dim: self.dim as u32,
            vocab_size: self.vocab.len() as u32,
            sentence_count: self.sentences.len() as u64,
        }
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(DumpSentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    pub fn is_fully_labeled(&self) -> bool {
        self.tokens().all(|t| t.gold.is_some())
    }

    /// Checks every structural and numerical invariant of the format.
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.dim > u32::MAX as usize {
            return Err(Error::invalid(format!(
                "embedding dimension {} out of range",
                self.dim
            )));
        }
        if self.vocab.len() < 2 {
            return Err(Error::invalid("vocabulary must hold at least two labels"));
        }
        let labels = self.vocab.len();
        for (si, sentence) in self.sentences.iter().enumerate() {
            if sentence.tokens.is_empty() {
                return Err(Error::invalid(format!("sentence {si} has no tokens")));
            }
            for (ti, token) in sentence.tokens.iter().enumerate() {
                let at = || format!("sentence {si}, token {ti}");
                if token.embedding.len() != self.dim {
                    return Err(Error::invalid(format!(
                        "{}: embedding has {} components, expected {}",
                        at(),
                        token.embedding.len(),
                        self.dim
                    )));
                }
                if token.embedding.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid(format!("{}: non-finite embedding", at())));
                }
                if token.base_log_probs.len() != labels {
                    return Err(Error::invalid(format!(
                        "{}: {} base log-probabilities, expected {labels}",
                        at(),
                        token.base_log_probs.len()
                    )));
                }
                if let Some(g) = token.gold {
                    if g as usize >= labels {
                        return Err(Error::invalid(format!(
                            "{}: gold label {g} out of range",
                            at()
                        )));
                    }
                }
                let lse = token_log_sum_exp(&token.base_log_probs)
                    .map_err(|e| Error::invalid(format!("{}: {e}", at())))?;
                if lse.abs() > LOG_NORM_TOLERANCE {
                    return Err(Error::invalid(format!(
                        "{}: base log-probabilities have log-sum-exp {lse}",
                        at()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Serialized bytes of the dump.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        write_dump(self, &mut out)?;
        Ok(out)
    }

    /// SHA-256 of the serialized dump.
    pub fn content_hash(&self) -> Result<[u8; 32]> {
        let mut sink = HashSink(Sha256::new());
        write_dump(self, &mut sink)?;
        Ok(sink.0.finalize().into())
    }
}

struct HashSink(Sha256);

impl Write for HashSink {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.update(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn token_log_sum_exp(log_probs: &[f32]) -> Result<f64> {
    let wide: Vec<f64> = log_probs.iter().map(|&v| f64::from(v)).collect();
    log_sum_exp(&wide)
}

/// Writes `dump` and returns the number of bytes written.
pub fn write_dump<W: Write>(dump: &EmbeddingDump, sink: W) -> Result<u64> {
    dump.validate()?;
    let mut w = ByteWriter::new(sink);
    let header = dump.header();
    w.bytes(&DUMP_MAGIC)?;
    w.u32(header.version)?;
    w.u32(header.dim)?;
    w.u32(header.vocab_size)?;
    w.u64(header.sentence_count)?;
    for label in dump.vocab.labels() {
        w.string(label)?;
    }
    for sentence in &dump.sentences {
        w.u32(sentence.tokens.len() as u32)?;
        for token in &sentence.tokens {
            w.string(&token.word)?;
            w.u32(token.gold.unwrap_or(UNLABELED))?;
            w.f32s(&token.embedding)?;
            w.f32s(&token.base_log_probs)?;
        }
    }
    w.flush()?;
    Ok(w.offset())
}

/// Reads and validates a dump. Errors carry the byte offset of the problem.
pub fn read_dump<R: Read>(source: R) -> Result<EmbeddingDump> {
    let mut r = ByteReader::new(source);
    read_preamble(&mut r, DUMP_MAGIC, DUMP_VERSION)?;
    let dim = r.u32()? as usize;
    if dim == 0 {
        return Err(Error::Corrupt {
            offset: 8,
            reason: "embedding dimension is zero".into(),
        });
    }
    let vocab_size = r.u32()? as usize;
    if vocab_size < 2 {
        return Err(Error::Corrupt {
            offset: 12,
            reason: format!("vocabulary size {vocab_size} is below 2"),
        });
    }
    let sentence_count = r.u64()?;
    let vocab_at = r.offset();
    let mut labels = Vec::with_capacity(vocab_size.min(1 << 16));
    for _ in 0..vocab_size {
        labels.push(r.string()?);
    }
    let vocab = LabelVocab::new(labels).map_err(|e| Error::Corrupt {
        offset: vocab_at,
        reason: e.to_string(),
    })?;

    let mut sentences = Vec::with_capacity((sentence_count as usize).min(1 << 16));
    for si in 0..sentence_count as usize {
        let count_at = r.offset();
        let count = r.u32()? as usize;
        if count == 0 {
            return Err(Error::Corrupt {
                offset: count_at,
                reason: format!("sentence {si} has no tokens"),
            });
        }
        let mut tokens = Vec::with_capacity(count.min(1 << 12));
        for ti in 0..count {
            let word = r.string()?;
            let gold_at = r.offset();
            let gold = match r.u32()? {
                UNLABELED => None,
                g if (g as usize) < vocab_size => Some(g),
                g => {
                    return Err(Error::Corrupt {
                        offset: gold_at,
                        reason: format!("gold label {g} outside vocabulary of {vocab_size}"),
                    })
                }
            };
            let emb_at = r.offset();
            let embedding = r.f32s(dim)?;
            if embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::Corrupt {
                    offset: emb_at,
                    reason: format!("non-finite embedding at sentence {si}, token {ti}"),
                });
            }
            let probs_at = r.offset();
            let base_log_probs = r.f32s(vocab_size)?;
            let lse = token_log_sum_exp(&base_log_probs).map_err(|e| Error::Corrupt {
                offset: probs_at,
                reason: e.to_string(),
            })?;
            if lse.abs() > LOG_NORM_TOLERANCE {
                return Err(Error::Normalization {
                    offset: probs_at,
                    sentence: si,
                    token: ti,
                    log_sum_exp: lse,
                });
            }
            tokens.push(Token {
                word,
                gold,
                embedding,
                base_log_probs,
            });
        }
        sentences.push(DumpSentence { tokens });
    }
    r.expect_eof()?;
    Ok(EmbeddingDump {
        dim,
        vocab,
        sentences,
    })
}

/// Number of sentences kept by [`subsample_dump`] for `fraction` of `total`.
pub fn subsample_size(fraction: f64, total: usize) -> Result<usize> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::invalid(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    // Guard against products such as 0.7 * 10 = 7.000000000000001.
    let exact = fraction * total as f64;
    let keep = (exact - exact.abs() * 1e-12).ceil() as usize;
    if keep == 0 {
        return Err(Error::invalid(format!(
            "fraction {fraction} of {total} sentences keeps no sentence"
        )));
    }
    Ok(keep.min(total))
}

/// Keeps `ceil(fraction * sentences)` sentences chosen uniformly without
/// replacement, preserving their original order.
///
/// Uses sequential selection sampling: sentence `i` is kept with probability
/// `needed / remaining`, driven by a ChaCha8 stream seeded with `seed`.
pub fn subsample_dump(dump: &EmbeddingDump, fraction: f64, seed: u64) -> Result<EmbeddingDump> {
    let total = dump.sentences.len();
    if total == 0 {
        return Err(Error::invalid("cannot subsample a dump without sentences"));
    }
    let mut needed = subsample_size(fraction, total)?;
    if needed == total {
        return Ok(dump.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept = Vec::with_capacity(needed);
    for (i, sentence) in dump.sentences.iter().enumerate() {
        if needed == 0 {
            break;
        }
        let remaining = total - i;
        if rng.random::<f64>() * (remaining as f64) < needed as f64 {
            kept.push(sentence.clone());
            needed -= 1;
        }
    }
    Ok(EmbeddingDump {
        dim: dump.dim,
        vocab: dump.vocab.clone(),
        sentences: kept,
    })
}
