//! Label vocabularies, tagging schemes and entity-span extraction.
//!
//! Span extraction is lenient: a continuation tag that cannot continue the
//! open span (for example `I-PER` after `O` under BIO) opens a new span
//! instead of being rejected. Per-token argmax decoding produces such
//! sequences routinely, so they must decode to something well-defined.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const OUTSIDE: &str = "O";

/// Ordered, duplicate-free set of label strings containing exactly one `O`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVocab {
    labels: Vec<String>,
    index: HashMap<String, u32>,
    outside: u32,
}

impl LabelVocab {
    pub fn new<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::invalid("label vocabulary is empty"));
        }
        if labels.len() > u32::MAX as usize - 1 {
            return Err(Error::invalid("label vocabulary is too large"));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.is_empty() {
                return Err(Error::invalid(format!("label {i} is the empty string")));
            }
            if index.insert(label.clone(), i as u32).is_some() {
                return Err(Error::invalid(format!("duplicate label {label:?}")));
            }
        }
        let outside = *index
            .get(OUTSIDE)
            .ok_or_else(|| Error::invalid("label vocabulary has no outside label \"O\""))?;
        Ok(Self {
            labels,
            index,
            outside,
        })
    }

    /// Builds the full vocabulary for `scheme` over `types`: `O` first, then
    /// every prefix of each type in scheme order.
    pub fn for_scheme<S: AsRef<str>>(scheme: TaggingScheme, types: &[S]) -> Result<Self> {
        let mut labels = vec![OUTSIDE.to_string()];
        for ty in types {
            for prefix in scheme.prefixes() {
                labels.push(format!("{prefix}-{}", ty.as_ref()));
            }
        }
        Self::new(labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn outside(&self) -> u32 {
        self.outside
    }

    pub fn id(&self, label: &str) -> Option<u32> {
        self.index.get(label).copied()
    }

    pub fn label(&self, id: u32) -> Option<&str> {
        self.labels.get(id as usize).map(String::as_str)
    }

    /// Checks that every label is `O` or `<prefix>-<type>` with a prefix legal
    /// for `scheme`.
    pub fn check_scheme(&self, scheme: TaggingScheme) -> Result<()> {
        for label in &self.labels {
            parse_tag(label, scheme)?;
        }
        Ok(())
    }

    /// Sorted, de-duplicated entity types named by the vocabulary.
    pub fn entity_types(&self) -> Vec<String> {
        let mut types: Vec<String> = self
            .labels
            .iter()
            .filter_map(|l| l.split_once('-').map(|(_, ty)| ty.to_string()))
            .collect();
        types.sort();
        types.dedup();
        types
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum TaggingScheme {
    #[default]
    Bio,
    Bmes,
    Io,
}

impl TaggingScheme {
    pub fn prefixes(self) -> &'static [char] {
        match self {
            TaggingScheme::Bio => &['B', 'I'],
            TaggingScheme::Bmes => &['B', 'M', 'E', 'S'],
            TaggingScheme::Io => &['I'],
        }
    }
}

impl fmt::Display for TaggingScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaggingScheme::Bio => "bio",
            TaggingScheme::Bmes => "bmes",
            TaggingScheme::Io => "io",
        })
    }
}

impl FromStr for TaggingScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bio" | "iob2" => Ok(TaggingScheme::Bio),
            "bmes" | "bioes" | "iobes" => Ok(TaggingScheme::Bmes),
            "io" => Ok(TaggingScheme::Io),
            other => Err(Error::invalid(format!("unknown tagging scheme {other:?}"))),
        }
    }
}

/// Inclusive token range `[start, end]` carrying an entity type.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct EntitySpan {
    pub entity_type: String,
    pub start: usize,
    pub end: usize,
}

impl EntitySpan {
    pub fn new(entity_type: impl Into<String>, start: usize, end: usize) -> Self {
        Self {
            entity_type: entity_type.into(),
            start,
            end,
        }
    }

    pub fn len(&self) -> usize {
        self.end - self.start + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// A tokenized sentence with optional gold label ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sentence {
    words: Vec<String>,
    gold: Option<Vec<u32>>,
}

impl Sentence {
    pub fn new(words: Vec<String>, gold: Option<Vec<u32>>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::invalid("sentence has no words"));
        }
        if let Some(gold) = &gold {
            if gold.len() != words.len() {
                return Err(Error::invalid(format!(
                    "sentence has {} words but {} gold labels",
                    words.len(),
                    gold.len()
                )));
            }
        }
        Ok(Self { words, gold })
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn gold(&self) -> Option<&[u32]> {
        self.gold.as_deref()
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tag<'a> {
    Outside,
    Begin(&'a str),
    Inside(&'a str),
    Middle(&'a str),
    End(&'a str),
    Single(&'a str),
}

fn parse_tag(tag: &str, scheme: TaggingScheme) -> Result<Tag<'_>> {
    if tag == OUTSIDE {
        return Ok(Tag::Outside);
    }
    let (prefix, ty) = tag
        .split_once('-')
        .filter(|(p, ty)| p.len() == 1 && !ty.is_empty())
        .ok_or_else(|| {
            Error::invalid(format!(
                "label {tag:?} is neither \"O\" nor <prefix>-<type>"
            ))
        })?;
    let parsed = match (scheme, prefix) {
        (TaggingScheme::Bio | TaggingScheme::Bmes, "B") => Tag::Begin(ty),
        (TaggingScheme::Bio | TaggingScheme::Io, "I") => Tag::Inside(ty),
        (TaggingScheme::Bmes, "M") => Tag::Middle(ty),
        (TaggingScheme::Bmes, "E") => Tag::End(ty),
        (TaggingScheme::Bmes, "S") => Tag::Single(ty),
        _ => {
            return Err(Error::invalid(format!(
                "label {tag:?} is not legal under the {scheme} scheme"
            )))
        }
    };
    Ok(parsed)
}

/// Extracts maximal entity spans from a tag sequence, in order of start index.
pub fn extract_spans<S: AsRef<str>>(tags: &[S], scheme: TaggingScheme) -> Result<Vec<EntitySpan>> {
    let mut spans = Vec::new();
    // (type, start) of the span still accepting continuations
    let mut open: Option<(&str, usize)> = None;

    for (i, tag) in tags.iter().enumerate() {
        let tag = parse_tag(tag.as_ref(), scheme)?;
        match tag {
            Tag::Outside => close(&mut open, i, &mut spans),
            Tag::Begin(ty) => {
                close(&mut open, i, &mut spans);
                open = Some((ty, i));
            }
            Tag::Inside(ty) | Tag::Middle(ty) => match open {
                Some((cur, _)) if cur == ty => {}
                _ => {
                    close(&mut open, i, &mut spans);
                    open = Some((ty, i));
                }
            },
            Tag::End(ty) => {
                let start = match open {
                    Some((cur, start)) if cur == ty => start,
                    _ => {
                        close(&mut open, i, &mut spans);
                        i
                    }
                };
                spans.push(EntitySpan::new(ty, start, i));
                open = None;
            }
            Tag::Single(ty) => {
                close(&mut open, i, &mut spans);
                spans.push(EntitySpan::new(ty, i, i));
            }
        }
    }
    close(&mut open, tags.len(), &mut spans);
    Ok(spans)
}

fn close(open: &mut Option<(&str, usize)>, next: usize, spans: &mut Vec<EntitySpan>) {
    if let Some((ty, start)) = open.take() {
        spans.push(EntitySpan::new(ty, start, next - 1));
    }
}

/// Label-id variant of [`extract_spans`].
pub fn extract_spans_ids(
    ids: &[u32],
    vocab: &LabelVocab,
    scheme: TaggingScheme,
) -> Result<Vec<EntitySpan>> {
    let tags = ids
        .iter()
        .map(|&id| {
            vocab.label(id).ok_or_else(|| {
                Error::invalid(format!(
                    "label id {id} outside vocabulary of {}",
                    vocab.len()
                ))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    extract_spans(&tags, scheme)
}

/// Renders non-overlapping spans back into a canonical tag sequence of length `len`.
pub fn render_spans(
    spans: &[EntitySpan],
    len: usize,
    scheme: TaggingScheme,
) -> Result<Vec<String>> {
    let mut tags = vec![OUTSIDE.to_string(); len];
    let mut taken = vec![false; len];
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(Error::invalid(format!(
                "span {}..={} does not fit a sentence of length {len}",
                span.start, span.end
            )));
        }
        for i in span.start..=span.end {
            if std::mem::replace(&mut taken[i], true) {
                return Err(Error::invalid(format!("spans overlap at token {i}")));
            }
            let prefix = match scheme {
                TaggingScheme::Bio if i == span.start => 'B',
                TaggingScheme::Bio | TaggingScheme::Io => 'I',
                TaggingScheme::Bmes if span.start == span.end => 'S',
                TaggingScheme::Bmes if i == span.start => 'B',
                TaggingScheme::Bmes if i == span.end => 'E',
                TaggingScheme::Bmes => 'M',
            };
            tags[i] = format!("{prefix}-{}", span.entity_type);
        }
    }
    Ok(tags)
}
