use std::collections::HashMap;

use rand::Rng;

use super::{spans_from_bio, AnnotatedSentence, Tag, TagVocabulary};
use crate::error::{Error, Result};

/// Surface forms (token sequences) mapped to an ordered, non-empty list of
/// entity type indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Gazetteer {
    entries: HashMap<Vec<String>, Vec<usize>>,
    max_len: usize,
}

/// How to choose a type for a surface form listed under several types.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum AmbiguityRule {
    #[default]
    First,
    Last,
    Random,
}

impl std::str::FromStr for AmbiguityRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "first" => Ok(AmbiguityRule::First),
            "last" => Ok(AmbiguityRule::Last),
            "random" => Ok(AmbiguityRule::Random),
            other => Err(Error::Usage(format!("unknown ambiguity rule {other:?}"))),
        }
    }
}

impl Gazetteer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds `entity_type` to the type list of `surface`, keeping first-seen order.
    pub fn insert<S: AsRef<str>>(&mut self, surface: &[S], entity_type: usize) {
        assert!(
            !surface.is_empty(),
            "gazetteer surface forms must be non-empty"
        );
        let key: Vec<String> = surface.iter().map(|s| s.as_ref().to_string()).collect();
        self.max_len = self.max_len.max(key.len());
        let types = self.entries.entry(key).or_default();
        if !types.contains(&entity_type) {
            types.push(entity_type);
        }
    }

    pub fn get<S: AsRef<str>>(&self, surface: &[S]) -> Option<&[usize]> {
        let key: Vec<String> = surface.iter().map(|s| s.as_ref().to_string()).collect();
        self.entries.get(&key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    /// Every gold mention of the corpus, typed as annotated.
    pub fn from_gold(sentences: &[AnnotatedSentence]) -> Result<Self> {
        let mut gaz = Gazetteer::new();
        for sentence in sentences {
            let Some(gold) = sentence.gold.as_deref() else {
                continue;
            };
            for span in spans_from_bio(gold)? {
                gaz.insert(&sentence.tokens[span.start..=span.end], span.entity_type);
            }
        }
        Ok(gaz)
    }

    /// Parses `surface form<TAB>TYPE1,TYPE2` lines. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn parse(text: &str, vocab: &TagVocabulary) -> Result<Self> {
        let mut gaz = Gazetteer::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let format_err = |message: String| Error::Format {
                line: idx + 1,
                message,
            };
            let (surface, types) = line
                .split_once('\t')
                .ok_or_else(|| format_err("expected surface<TAB>types".into()))?;
            let tokens: Vec<&str> = surface.split_whitespace().collect();
            if tokens.is_empty() {
                return Err(format_err("empty surface form".into()));
            }
            let mut any = false;
            for ty in types.split(',').map(str::trim).filter(|t| !t.is_empty()) {
                let index = vocab
                    .type_index(ty)
                    .ok_or_else(|| format_err(format!("unknown entity type {ty:?}")))?;
                gaz.insert(&tokens, index);
                any = true;
            }
            if !any {
                return Err(format_err("empty type list".into()));
            }
        }
        Ok(gaz)
    }

    /// Inverse of [`Gazetteer::parse`]; lines sorted by surface form.
    pub fn to_text(&self, vocab: &TagVocabulary) -> String {
        let mut lines: Vec<String> = self
            .entries
            .iter()
            .map(|(surface, types)| {
                let names: Vec<&str> = types.iter().map(|&t| vocab.type_name(t)).collect();
                format!("{}\t{}", surface.join(" "), names.join(","))
            })
            .collect();
        lines.sort();
        let mut out = lines.join("\n");
        if !out.is_empty() {
            out.push('\n');
        }
        out
    }
}

/// Distant supervision by longest left-to-right gazetteer matching.
///
/// Each match is applied with probability `coverage`; a dropped match leaves
/// its tokens `O`. Surface forms with several types are resolved by `rule`.
pub fn distant_annotate<S: AsRef<str>, R: Rng + ?Sized>(
    tokens: &[S],
    gaz: &Gazetteer,
    coverage: f64,
    rule: AmbiguityRule,
    rng: &mut R,
) -> Vec<Tag> {
    let mut tags = vec![Tag::O; tokens.len()];
    let mut i = 0;
    while i < tokens.len() {
        let longest = (1..=gaz.max_len.min(tokens.len() - i))
            .rev()
            .find_map(|len| gaz.get(&tokens[i..i + len]).map(|types| (len, types)));
        let Some((len, types)) = longest else {
            i += 1;
            continue;
        };
        let applied = rng.gen::<f64>() < coverage;
        if applied {
            let ty = match rule {
                AmbiguityRule::First => types[0],
                AmbiguityRule::Last => types[types.len() - 1],
                AmbiguityRule::Random => types[rng.gen_range(0..types.len())],
            };
            tags[i] = Tag::begin(ty);
            for tag in &mut tags[i + 1..i + len] {
                *tag = Tag::inside(ty);
            }
        }
        i += len;
    }
    tags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_bio;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn vocab() -> TagVocabulary {
        TagVocabulary::new(&["PER", "LOC", "ORG"]).unwrap()
    }

    #[test]
    fn ambiguous_entry_takes_first_type() {
        let v = vocab();
        let gaz = Gazetteer::parse("Amazon\tORG,LOC\n", &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let tags = distant_annotate(&["Amazon"], &gaz, 1.0, AmbiguityRule::First, &mut rng);
        assert_eq!(tags, vec![v.code("B-ORG").unwrap()]);
        let tags = distant_annotate(&["Amazon"], &gaz, 1.0, AmbiguityRule::Last, &mut rng);
        assert_eq!(tags, vec![v.code("B-LOC").unwrap()]);
    }

    #[test]
    fn unmatched_and_zero_coverage_are_outside() {
        let v = vocab();
        let gaz = Gazetteer::parse("Amazon\tORG\nNew York\tLOC\n", &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tags = distant_annotate(
            &["Jack", "Lucas"],
            &gaz,
            1.0,
            AmbiguityRule::First,
            &mut rng,
        );
        assert_eq!(tags, vec![Tag::O, Tag::O]);
        let tokens = ["Amazon", "in", "New", "York"];
        let tags = distant_annotate(&tokens, &gaz, 0.0, AmbiguityRule::First, &mut rng);
        assert_eq!(tags, vec![Tag::O; 4]);
    }

    #[test]
    fn longest_match_wins() {
        let v = vocab();
        let gaz = Gazetteer::parse("New\tORG\nNew York\tLOC\nNew York Times\tORG\n", &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tokens = ["the", "New", "York", "Times", "in", "New", "York"];
        let tags = distant_annotate(&tokens, &gaz, 1.0, AmbiguityRule::First, &mut rng);
        let names: Vec<&str> = tags.iter().map(|&t| v.name(t)).collect();
        assert_eq!(
            names,
            ["O", "B-ORG", "I-ORG", "I-ORG", "O", "B-LOC", "I-LOC"]
        );
        assert!(validate_bio(&tags).is_ok());
    }

    #[test]
    fn adjacent_matches_stay_valid() {
        let v = vocab();
        let gaz = Gazetteer::parse("Paris\tLOC\nLyon\tLOC\n", &v).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tags = distant_annotate(
            &["Paris", "Lyon"],
            &gaz,
            1.0,
            AmbiguityRule::First,
            &mut rng,
        );
        assert_eq!(tags, vec![Tag::begin(1), Tag::begin(1)]);
    }

    #[test]
    fn parse_rejects_unknown_types() {
        assert!(matches!(
            Gazetteer::parse("x\tFOO\n", &vocab()),
            Err(Error::Format { line: 1, .. })
        ));
        assert!(Gazetteer::parse("x\t\n", &vocab()).is_err());
        let v = vocab();
        let gaz = Gazetteer::parse("b c\tLOC,ORG\na\tPER\n", &v).unwrap();
        assert_eq!(gaz.to_text(&v), "a\tPER\nb c\tLOC,ORG\n");
        assert_eq!(Gazetteer::parse(&gaz.to_text(&v), &v).unwrap(), gaz);
    }
}
