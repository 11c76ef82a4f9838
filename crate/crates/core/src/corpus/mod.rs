//! BIO-tagged corpora: tag vocabulary, sentences with their label tracks,
//! span conversion, the CoNLL interchange format, distant annotation and
//! synthetic noise.

mod conll;
mod gazetteer;
mod noise;
pub mod synth;

use std::collections::HashMap;
use std::fmt;

pub use conll::{parse_conll, scan_entity_types, write_conll, ParseOptions};
pub use gazetteer::{distant_annotate, AmbiguityRule, Gazetteer};
pub use noise::{inject_noise, write_alteration_log, Alteration, NoiseOutcome};

use crate::error::{Error, Result};

/// A tag code. Codes follow a fixed layout: `0` is `O`, `2t + 1` is `B-t`
/// and `2t + 2` is `I-t` for entity type index `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Tag(pub u16);

impl Tag {
    pub const O: Tag = Tag(0);

    pub fn begin(entity_type: usize) -> Tag {
        Tag((2 * entity_type + 1) as u16)
    }

    pub fn inside(entity_type: usize) -> Tag {
        Tag((2 * entity_type + 2) as u16)
    }

    pub fn is_outside(self) -> bool {
        self.0 == 0
    }

    pub fn is_begin(self) -> bool {
        self.0 % 2 == 1
    }

    pub fn is_inside(self) -> bool {
        self.0 != 0 && self.0.is_multiple_of(2)
    }

    /// Entity type index, `None` for `O`.
    pub fn entity_type(self) -> Option<usize> {
        if self.0 == 0 {
            None
        } else {
            Some((self.0 as usize - 1) / 2)
        }
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

/// The closed BIO label set derived from an ordered list of entity types.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TagVocabulary {
    entity_types: Vec<String>,
    names: Vec<String>,
    codes: HashMap<String, Tag>,
}

impl TagVocabulary {
    pub fn new<S: AsRef<str>>(entity_types: &[S]) -> Result<Self> {
        let entity_types: Vec<String> = entity_types
            .iter()
            .map(|s| s.as_ref().trim().to_string())
            .collect();
        let mut names = vec!["O".to_string()];
        for ty in &entity_types {
            if ty.is_empty() || ty == "O" || ty.contains(char::is_whitespace) || ty.contains(',') {
                return Err(Error::Usage(format!("invalid entity type name {ty:?}")));
            }
            names.push(format!("B-{ty}"));
            names.push(format!("I-{ty}"));
        }
        let mut codes = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if codes.insert(name.clone(), Tag(i as u16)).is_some() {
                return Err(Error::Usage(format!("duplicate entity type in {name:?}")));
            }
        }
        Ok(TagVocabulary {
            entity_types,
            names,
            codes,
        })
    }

    /// Number of tags `C`.
    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn entity_types(&self) -> &[String] {
        &self.entity_types
    }

    pub fn num_entity_types(&self) -> usize {
        self.entity_types.len()
    }

    pub fn tags(&self) -> &[String] {
        &self.names
    }

    pub fn code(&self, name: &str) -> Option<Tag> {
        self.codes.get(name).copied()
    }

    pub fn name(&self, tag: Tag) -> &str {
        &self.names[tag.index()]
    }

    pub fn type_index(&self, type_name: &str) -> Option<usize> {
        self.entity_types.iter().position(|t| t == type_name)
    }

    pub fn type_name(&self, index: usize) -> &str {
        &self.entity_types[index]
    }

    pub fn contains(&self, tag: Tag) -> bool {
        tag.index() < self.names.len()
    }
}

/// Which label track of a sentence an operation reads or writes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Track {
    Gold,
    NoisyI,
    NoisyII,
}

impl Track {
    /// The noisy track owned by network `index` (0 or 1).
    pub fn noisy(index: usize) -> Track {
        if index == 0 {
            Track::NoisyI
        } else {
            Track::NoisyII
        }
    }
}

impl fmt::Display for Track {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Track::Gold => "gold",
            Track::NoisyI => "noisy_I",
            Track::NoisyII => "noisy_II",
        })
    }
}

impl std::str::FromStr for Track {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gold" => Ok(Track::Gold),
            "noisy_I" | "noisy_i" | "noisy1" => Ok(Track::NoisyI),
            "noisy_II" | "noisy_ii" | "noisy2" => Ok(Track::NoisyII),
            other => Err(Error::Usage(format!("unknown track {other:?}"))),
        }
    }
}

/// A token sequence with an optional gold track and two noisy tracks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AnnotatedSentence {
    pub tokens: Vec<String>,
    pub gold: Option<Vec<Tag>>,
    pub noisy_i: Vec<Tag>,
    pub noisy_ii: Vec<Tag>,
}

impl AnnotatedSentence {
    /// A sentence whose noisy tracks start as copies of `gold`.
    pub fn with_gold(tokens: Vec<String>, gold: Vec<Tag>) -> Self {
        AnnotatedSentence {
            noisy_i: gold.clone(),
            noisy_ii: gold.clone(),
            gold: Some(gold),
            tokens,
        }
    }

    /// A sentence with distant labels on both noisy tracks and no gold.
    pub fn with_noisy(tokens: Vec<String>, noisy: Vec<Tag>) -> Self {
        AnnotatedSentence {
            noisy_ii: noisy.clone(),
            noisy_i: noisy,
            gold: None,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn track(&self, track: Track) -> Option<&[Tag]> {
        match track {
            Track::Gold => self.gold.as_deref(),
            Track::NoisyI => Some(&self.noisy_i),
            Track::NoisyII => Some(&self.noisy_ii),
        }
    }

    pub fn track_mut(&mut self, track: Track) -> Option<&mut Vec<Tag>> {
        match track {
            Track::Gold => self.gold.as_mut(),
            Track::NoisyI => Some(&mut self.noisy_i),
            Track::NoisyII => Some(&mut self.noisy_ii),
        }
    }

    /// Overwrites both noisy tracks.
    pub fn set_noisy(&mut self, tags: Vec<Tag>) {
        self.noisy_ii = tags.clone();
        self.noisy_i = tags;
    }
}

/// Borrow one track from every sentence; error if any sentence lacks it.
pub fn collect_track(sentences: &[AnnotatedSentence], track: Track) -> Result<Vec<&[Tag]>> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            s.track(track)
                .ok_or_else(|| Error::Usage(format!("sentence {i} has no {track} track")))
        })
        .collect()
}

/// An entity mention covering tokens `start..=end`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub entity_type: usize,
}

impl Span {
    pub fn new(start: usize, end: usize, entity_type: usize) -> Self {
        Span {
            start,
            end,
            entity_type,
        }
    }

    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// First BIO violation in `tags`: the index of an `I-t` not preceded by
/// `B-t` or `I-t`.
pub fn first_bio_violation(tags: &[Tag]) -> Option<usize> {
    let mut prev = Tag::O;
    for (i, &tag) in tags.iter().enumerate() {
        if tag.is_inside() && prev.entity_type() != tag.entity_type() {
            return Some(i);
        }
        prev = tag;
    }
    None
}

pub fn validate_bio(tags: &[Tag]) -> Result<()> {
    match first_bio_violation(tags) {
        None => Ok(()),
        Some(position) => Err(Error::Validation {
            line: 0,
            position,
            message: format!("tag code {} does not continue an entity", tags[position].0),
        }),
    }
}

/// Rewrites every illegal `I-t` to `B-t`.
pub fn repair_bio(tags: &mut [Tag]) {
    let mut prev = Tag::O;
    for tag in tags.iter_mut() {
        if tag.is_inside() && prev.entity_type() != tag.entity_type() {
            *tag = Tag(tag.0 - 1);
        }
        prev = *tag;
    }
}

/// Maximal entity spans of a BIO-valid sequence, sorted by start.
pub fn spans_from_bio(tags: &[Tag]) -> Result<Vec<Span>> {
    validate_bio(tags)?;
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, &tag) in tags.iter().enumerate() {
        if tag.is_inside() {
            if let Some(span) = open.as_mut() {
                span.end = i;
            }
            continue;
        }
        if let Some(span) = open.take() {
            spans.push(span);
        }
        if let Some(ty) = tag.entity_type() {
            open = Some(Span::new(i, i, ty));
        }
    }
    spans.extend(open);
    Ok(spans)
}

/// Inverse of [`spans_from_bio`]. Spans must be disjoint and inside `len`.
pub fn bio_from_spans(spans: &[Span], len: usize) -> Result<Vec<Tag>> {
    let mut tags = vec![Tag::O; len];
    for span in spans {
        if span.start > span.end || span.end >= len {
            return Err(Error::Usage(format!(
                "span {}..={} out of bounds for length {len}",
                span.start, span.end
            )));
        }
        if tags[span.start..=span.end].iter().any(|t| !t.is_outside()) {
            return Err(Error::Usage(format!(
                "span {}..={} overlaps another span",
                span.start, span.end
            )));
        }
        tags[span.start] = Tag::begin(span.entity_type);
        for tag in &mut tags[span.start + 1..=span.end] {
            *tag = Tag::inside(span.entity_type);
        }
    }
    Ok(tags)
}
