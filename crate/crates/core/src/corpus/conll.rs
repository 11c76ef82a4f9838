use super::{first_bio_violation, repair_bio, AnnotatedSentence, Tag, TagVocabulary, Track};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default)]
pub struct ParseOptions {
    /// Convert illegal `I-t` to `B-t` instead of rejecting the sentence.
    pub repair: bool,
}

/// Parses `token<TAB>tag` lines with blank lines between sentences. The tags
/// go into the gold track; both noisy tracks start as copies.
pub fn parse_conll(
    text: &str,
    vocab: &TagVocabulary,
    options: ParseOptions,
) -> Result<Vec<AnnotatedSentence>> {
    let mut sentences = Vec::new();
    let mut tokens = Vec::new();
    let mut tags = Vec::new();
    let mut line_numbers = Vec::new();

    let mut flush = |tokens: &mut Vec<String>,
                     tags: &mut Vec<Tag>,
                     line_numbers: &mut Vec<usize>|
     -> Result<()> {
        if tokens.is_empty() {
            return Ok(());
        }
        if let Some(pos) = first_bio_violation(tags) {
            if options.repair {
                repair_bio(tags);
            } else {
                return Err(Error::Validation {
                    line: line_numbers[pos],
                    position: pos,
                    message: format!("{} does not continue an entity", vocab.name(tags[pos])),
                });
            }
        }
        sentences.push(AnnotatedSentence::with_gold(
            std::mem::take(tokens),
            std::mem::take(tags),
        ));
        line_numbers.clear();
        Ok(())
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        if line.trim().is_empty() {
            flush(&mut tokens, &mut tags, &mut line_numbers)?;
            continue;
        }
        let (token, tag_name) = line.split_once('\t').ok_or_else(|| Error::Format {
            line: line_no,
            message: "expected token<TAB>tag".to_string(),
        })?;
        if token.is_empty() {
            return Err(Error::Format {
                line: line_no,
                message: "empty token".to_string(),
            });
        }
        if tag_name.contains('\t') {
            return Err(Error::Format {
                line: line_no,
                message: "expected exactly two columns".to_string(),
            });
        }
        let tag = vocab.code(tag_name.trim()).ok_or_else(|| Error::Format {
            line: line_no,
            message: format!("unknown tag {tag_name:?}"),
        })?;
        tokens.push(token.to_string());
        tags.push(tag);
        line_numbers.push(line_no);
    }
    flush(&mut tokens, &mut tags, &mut line_numbers)?;
    Ok(sentences)
}

/// Entity types named by `B-`/`I-` tags anywhere in `texts`, sorted.
pub fn scan_entity_types<S: AsRef<str>>(texts: &[S]) -> Vec<String> {
    let mut types = std::collections::BTreeSet::new();
    for text in texts {
        for line in text.as_ref().lines() {
            let Some((_, tag)) = line.split_once('\t') else {
                continue;
            };
            let tag = tag.trim();
            if let Some(t) = tag.strip_prefix("B-").or_else(|| tag.strip_prefix("I-")) {
                if !t.is_empty() {
                    types.insert(t.to_string());
                }
            }
        }
    }
    types.into_iter().collect()
}

/// Serializes one track of every sentence.
pub fn write_conll(
    sentences: &[AnnotatedSentence],
    vocab: &TagVocabulary,
    track: Track,
) -> Result<String> {
    let mut out = String::new();
    for (i, sentence) in sentences.iter().enumerate() {
        let tags = sentence
            .track(track)
            .ok_or_else(|| Error::Usage(format!("sentence {i} has no {track} track")))?;
        if sentence.is_empty() {
            return Err(Error::Usage(format!("sentence {i} is empty")));
        }
        if i > 0 {
            out.push('\n');
        }
        for (token, &tag) in sentence.tokens.iter().zip(tags) {
            if !vocab.contains(tag) {
                return Err(Error::Usage(format!(
                    "tag code {} outside vocabulary",
                    tag.0
                )));
            }
            out.push_str(token);
            out.push('\t');
            out.push_str(vocab.name(tag));
            out.push('\n');
        }
    }
    Ok(out)
}
