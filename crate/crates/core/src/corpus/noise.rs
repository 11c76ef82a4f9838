use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{bio_from_spans, spans_from_bio, AnnotatedSentence, Span, TagVocabulary};
use crate::error::{Error, Result};

/// One altered gold mention. `new_type == None` means it was erased to `O`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alteration {
    pub sentence: usize,
    pub start: usize,
    pub end: usize,
    pub old_type: usize,
    pub new_type: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct NoiseOutcome {
    pub sentences: Vec<AnnotatedSentence>,
    pub log: Vec<Alteration>,
    pub warning: Option<String>,
}

/// Replaces `round(k% * mentions)` gold mentions, chosen uniformly, by either
/// another entity type (same boundaries) or `O`, with a fair coin deciding.
/// The result is written to both noisy tracks; gold is kept.
pub fn inject_noise(
    sentences: &[AnnotatedSentence],
    num_types: usize,
    k_percent: f64,
    seed: u64,
) -> Result<NoiseOutcome> {
    if !(0.0..=100.0).contains(&k_percent) {
        return Err(Error::Usage(format!(
            "noise ratio {k_percent} outside [0, 100]"
        )));
    }
    let mut mentions: Vec<(usize, Span)> = Vec::new();
    let mut per_sentence: Vec<Vec<Span>> = Vec::with_capacity(sentences.len());
    for (i, sentence) in sentences.iter().enumerate() {
        let gold = sentence
            .gold
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("sentence {i} has no gold track")))?;
        let spans = spans_from_bio(gold)?;
        mentions.extend(spans.iter().map(|&s| (i, s)));
        per_sentence.push(spans);
    }

    let mut out: Vec<AnnotatedSentence> = sentences
        .iter()
        .map(|s| {
            let mut s = s.clone();
            s.set_noisy(s.gold.clone().unwrap_or_default());
            s
        })
        .collect();

    let target = (k_percent / 100.0 * mentions.len() as f64).round() as usize;
    if mentions.is_empty() {
        let warning = (k_percent > 0.0).then(|| "corpus has no entity mentions".to_string());
        return Ok(NoiseOutcome {
            sentences: out,
            log: Vec::new(),
            warning,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = sample(&mut rng, mentions.len(), target).into_vec();
    chosen.sort_unstable();

    let mut log = Vec::with_capacity(chosen.len());
    for idx in chosen {
        let (sentence, span) = mentions[idx];
        let retype = num_types > 1 && rng.gen_bool(0.5);
        let new_type = if retype {
            let mut t = rng.gen_range(0..num_types - 1);
            if t >= span.entity_type {
                t += 1;
            }
            Some(t)
        } else {
            None
        };
        let spans = &mut per_sentence[sentence];
        let pos = spans
            .iter()
            .position(|s| *s == span)
            .expect("mention belongs to sentence");
        match new_type {
            Some(t) => spans[pos].entity_type = t,
            None => {
                spans.remove(pos);
            }
        }
        log.push(Alteration {
            sentence,
            start: span.start,
            end: span.end,
            old_type: span.entity_type,
            new_type,
        });
    }

    for (sentence, spans) in out.iter_mut().zip(&per_sentence) {
        let tags = bio_from_spans(spans, sentence.len())?;
        sentence.set_noisy(tags);
    }
    Ok(NoiseOutcome {
        sentences: out,
        log,
        warning: None,
    })
}

/// `sent_idx<TAB>start<TAB>end<TAB>old_type<TAB>new_type_or_O`, one line per alteration.
pub fn write_alteration_log(log: &[Alteration], vocab: &TagVocabulary) -> String {
    let mut out = String::new();
    for a in log {
        let new = a.new_type.map_or("O", |t| vocab.type_name(t));
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            a.sentence,
            a.start,
            a.end,
            vocab.type_name(a.old_type),
            new
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{validate_bio, Tag};

    fn corpus(mentions_per_sentence: usize, sentences: usize) -> Vec<AnnotatedSentence> {
        (0..sentences)
            .map(|i| {
                let mut tokens = Vec::new();
                let mut tags = Vec::new();
                for m in 0..mentions_per_sentence {
                    let ty = (i + m) % 3;
                    tokens.extend(["w".to_string(), format!("e{m}a"), format!("e{m}b")]);
                    tags.extend([Tag::O, Tag::begin(ty), Tag::inside(ty)]);
                }
                AnnotatedSentence::with_gold(tokens, tags)
            })
            .collect()
    }

    #[test]
    fn zero_ratio_is_identity() {
        let c = corpus(2, 4);
        let out = inject_noise(&c, 3, 0.0, 7).unwrap();
        assert_eq!(out.sentences, c);
        assert!(out.log.is_empty());
    }

    #[test]
    fn half_of_ten_mentions() {
        let c = corpus(2, 5);
        let out = inject_noise(&c, 3, 50.0, 11).unwrap();
        assert_eq!(out.log.len(), 5);
        for s in &out.sentences {
            assert!(validate_bio(&s.noisy_i).is_ok());
            assert_eq!(s.noisy_i, s.noisy_ii);
        }
    }

    #[test]
    fn only_logged_spans_change() {
        let c = corpus(3, 20);
        let out = inject_noise(&c, 3, 40.0, 5).unwrap();
        for (i, (before, after)) in c.iter().zip(&out.sentences).enumerate() {
            let gold = before.gold.as_ref().unwrap();
            for j in 0..before.len() {
                let covered = out
                    .log
                    .iter()
                    .any(|a| a.sentence == i && (a.start..=a.end).contains(&j));
                if !covered {
                    assert_eq!(gold[j], after.noisy_i[j]);
                }
            }
        }
        for a in &out.log {
            let tags = &out.sentences[a.sentence].noisy_i;
            match a.new_type {
                None => assert!(tags[a.start..=a.end].iter().all(|t| t.is_outside())),
                Some(t) => {
                    assert_ne!(t, a.old_type);
                    assert_eq!(tags[a.start], Tag::begin(t));
                    assert!(tags[a.start + 1..=a.end]
                        .iter()
                        .all(|&x| x == Tag::inside(t)));
                }
            }
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let c = corpus(2, 10);
        let a = inject_noise(&c, 3, 30.0, 9).unwrap();
        let b = inject_noise(&c, 3, 30.0, 9).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.sentences, b.sentences);
    }

    #[test]
    fn no_mentions_warns() {
        let c = vec![AnnotatedSentence::with_gold(vec!["a".into()], vec![Tag::O])];
        let out = inject_noise(&c, 3, 50.0, 1).unwrap();
        assert!(out.warning.is_some());
        assert_eq!(out.sentences, c);
        assert!(inject_noise(&c, 3, 101.0, 1).is_err());
    }

    #[test]
    fn log_format() {
        let v = TagVocabulary::new(&["PER", "LOC"]).unwrap();
        let log = [
            Alteration {
                sentence: 3,
                start: 1,
                end: 2,
                old_type: 0,
                new_type: Some(1),
            },
            Alteration {
                sentence: 4,
                start: 0,
                end: 0,
                old_type: 1,
                new_type: None,
            },
        ];
        assert_eq!(
            write_alteration_log(&log, &v),
            "3\t1\t2\tPER\tLOC\n4\t0\t0\tLOC\tO\n"
        );
    }
}
