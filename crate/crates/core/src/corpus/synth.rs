//! Synthetic NER corpora with controllable distant-supervision noise.
//!
//! Entity names are built from per-type capitalized word pools, so component
//! tokens recur across mentions; context templates carry type cues. A subset
//! of single-token names is shared between two types and is typed by context
//! only. The gazetteer lists a fraction of all surface forms, and ambiguous
//! forms are listed under both types in random order.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{distant_annotate, AmbiguityRule, AnnotatedSentence, Gazetteer, Tag, TagVocabulary};
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    /// Distinct surface forms per entity type.
    pub names_per_type: usize,
    /// Single-token forms shared by the LOC and ORG pools.
    pub ambiguous_names: usize,
    pub filler_words: usize,
    /// Probability that a surface form is listed in the gazetteer.
    pub gazetteer_fraction: f64,
    /// Probability that a gazetteer match is applied.
    pub coverage: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            train_sentences: 2000,
            dev_sentences: 300,
            test_sentences: 300,
            names_per_type: 80,
            ambiguous_names: 10,
            filler_words: 120,
            gazetteer_fraction: 0.6,
            coverage: 0.85,
            seed: 0,
        }
    }
}

pub const ENTITY_TYPES: [&str; 4] = ["PER", "LOC", "ORG", "MISC"];

/// Train has distant labels on both noisy tracks; dev and test carry gold only
/// (noisy tracks equal gold).
#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub vocab: TagVocabulary,
    pub gazetteer: Gazetteer,
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

const PER_CONTEXTS: &[&str] = &[
    "{} said",
    "mr. {}",
    "according to {}",
    "{} told reporters",
    "coach {} added",
    "minister {} met",
    "{} , who scored",
    "with {}",
];
const LOC_CONTEXTS: &[&str] = &[
    "in {}",
    "visited {}",
    "flights to {}",
    "the city of {}",
    "{} police said",
    "near {}",
    "travelled from {}",
    "with {}",
];
const ORG_CONTEXTS: &[&str] = &[
    "shares of {}",
    "{} announced",
    "analysts at {}",
    "{} reported profits",
    "a spokesman for {}",
    "{} shares fell",
    "joined {}",
    "with {}",
];
const MISC_CONTEXTS: &[&str] = &[
    "the {} festival",
    "{} fans",
    "during the {}",
    "the {} championship",
    "{} language",
    "a {} tradition",
    "with {}",
];

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mi", "ne", "ra", "to", "vu", "sha", "de", "ri", "po", "lan", "mor", "tek", "zi",
    "bo", "fen", "gar", "hu", "jo", "ku", "lei", "ma", "nor", "os", "pri", "qua", "sel", "tur",
    "ven", "wa", "xi", "yo", "zan",
];

struct Pools {
    names: Vec<Vec<Vec<String>>>,
    filler: Vec<String>,
}

fn fresh_word<R: Rng>(rng: &mut R, used: &mut HashSet<String>, capital: bool) -> String {
    loop {
        let n = rng.gen_range(2..=3);
        let mut w: String = (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect();
        if capital {
            let mut c = w.chars();
            let first = c.next().unwrap().to_ascii_uppercase();
            w = std::iter::once(first).chain(c).collect();
        }
        if used.insert(w.clone()) {
            return w;
        }
    }
}

fn build_pools<R: Rng>(config: &SynthConfig, rng: &mut R) -> Pools {
    let mut used = HashSet::new();
    let mut words = |rng: &mut R, n: usize, capital: bool| -> Vec<String> {
        (0..n)
            .map(|_| fresh_word(rng, &mut used, capital))
            .collect()
    };
    let firsts = words(rng, 30, true);
    let lasts = words(rng, 30, true);
    let places = words(rng, config.names_per_type, true);
    let stems = words(rng, config.names_per_type, true);
    let misc = words(rng, 40, true);
    let shared = words(rng, config.ambiguous_names, true);
    let filler = words(rng, config.filler_words, false);

    let org_suffix = ["Corp", "Group", "Bank", "United", "Motors"];
    let loc_prefix = ["North", "Port", "San"];
    let misc_suffix = ["Cup", "Open", "Games"];

    let unique = |rng: &mut R, n: usize, gen: &mut dyn FnMut(&mut R) -> Vec<String>| {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut attempts = 0;
        while out.len() < n && attempts < n * 50 {
            attempts += 1;
            let name = gen(rng);
            if seen.insert(name.clone()) {
                out.push(name);
            }
        }
        out
    };

    let n = config.names_per_type;
    let per = unique(rng, n, &mut |r: &mut R| {
        if r.gen_bool(0.15) {
            vec![lasts.choose(r).unwrap().clone()]
        } else {
            vec![
                firsts.choose(r).unwrap().clone(),
                lasts.choose(r).unwrap().clone(),
            ]
        }
    });
    let mut loc = unique(rng, n, &mut |r: &mut R| {
        let place = places.choose(r).unwrap().clone();
        if r.gen_bool(0.2) {
            vec![loc_prefix.choose(r).unwrap().to_string(), place]
        } else {
            vec![place]
        }
    });
    let mut org = unique(rng, n, &mut |r: &mut R| {
        let stem = stems.choose(r).unwrap().clone();
        match r.gen_range(0..3) {
            0 => vec![stem],
            1 => vec![stem, org_suffix.choose(r).unwrap().to_string()],
            _ => vec![
                stem,
                stems.choose(r).unwrap().clone(),
                org_suffix.choose(r).unwrap().to_string(),
            ],
        }
    });
    let misc = unique(rng, n, &mut |r: &mut R| {
        let m = misc.choose(r).unwrap().clone();
        if r.gen_bool(0.4) {
            vec![m, misc_suffix.choose(r).unwrap().to_string()]
        } else {
            vec![m]
        }
    });
    for s in shared {
        loc.push(vec![s.clone()]);
        org.push(vec![s]);
    }
    Pools {
        names: vec![per, loc, org, misc],
        filler,
    }
}

fn contexts(entity_type: usize) -> &'static [&'static str] {
    match entity_type {
        0 => PER_CONTEXTS,
        1 => LOC_CONTEXTS,
        2 => ORG_CONTEXTS,
        _ => MISC_CONTEXTS,
    }
}

fn sentence<R: Rng>(pools: &Pools, rng: &mut R) -> AnnotatedSentence {
    let mut tokens: Vec<String> = Vec::new();
    let mut tags: Vec<Tag> = Vec::new();
    let filler = |rng: &mut R, tokens: &mut Vec<String>, tags: &mut Vec<Tag>, max: usize| {
        for _ in 0..rng.gen_range(0..=max) {
            tokens.push(pools.filler.choose(rng).unwrap().clone());
            tags.push(Tag::O);
        }
    };
    filler(rng, &mut tokens, &mut tags, 3);
    let clauses = rng.gen_range(1..=2);
    for c in 0..clauses {
        if c > 0 {
            tokens.push("and".into());
            tags.push(Tag::O);
        }
        let ty = rng.gen_range(0..ENTITY_TYPES.len());
        let name = pools.names[ty].choose(rng).unwrap();
        let template = contexts(ty).choose(rng).unwrap();
        for piece in template.split_whitespace() {
            if piece == "{}" {
                for (k, word) in name.iter().enumerate() {
                    tokens.push(word.clone());
                    tags.push(if k == 0 {
                        Tag::begin(ty)
                    } else {
                        Tag::inside(ty)
                    });
                }
            } else {
                tokens.push(piece.to_string());
                tags.push(Tag::O);
            }
        }
        filler(rng, &mut tokens, &mut tags, 3);
    }
    tokens.push(".".into());
    tags.push(Tag::O);
    AnnotatedSentence::with_gold(tokens, tags)
}

pub fn generate(config: &SynthConfig) -> Result<SynthCorpus> {
    let vocab = TagVocabulary::new(&ENTITY_TYPES)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pools = build_pools(config, &mut rng);

    let mut gazetteer = Gazetteer::new();
    let mut listed: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    for (ty, names) in pools.names.iter().enumerate() {
        for name in names {
            match listed.iter_mut().find(|(n, _)| n == name) {
                Some((_, types)) => types.push(ty),
                None => listed.push((name.clone(), vec![ty])),
            }
        }
    }
    for (name, mut types) in listed {
        if !rng.gen_bool(config.gazetteer_fraction) {
            continue;
        }
        types.shuffle(&mut rng);
        for ty in types {
            gazetteer.insert(&name, ty);
        }
    }

    let mut split = |n: usize| -> Vec<AnnotatedSentence> {
        (0..n).map(|_| sentence(&pools, &mut rng)).collect()
    };
    let mut train = split(config.train_sentences);
    let dev = split(config.dev_sentences);
    let test = split(config.test_sentences);

    for s in &mut train {
        let noisy = distant_annotate(
            &s.tokens,
            &gazetteer,
            config.coverage,
            AmbiguityRule::First,
            &mut rng,
        );
        s.set_noisy(noisy);
    }
    Ok(SynthCorpus {
        vocab,
        gazetteer,
        train,
        dev,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::validate_bio;

    #[test]
    fn generation_is_deterministic_and_valid() {
        let config = SynthConfig {
            train_sentences: 50,
            dev_sentences: 10,
            test_sentences: 10,
            seed: 4,
            ..SynthConfig::default()
        };
        let a = generate(&config).unwrap();
        let b = generate(&config).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        for s in a.train.iter().chain(&a.dev).chain(&a.test) {
            assert!(validate_bio(s.gold.as_ref().unwrap()).is_ok());
            assert!(validate_bio(&s.noisy_i).is_ok());
        }
        for s in &a.dev {
            assert_eq!(Some(&s.noisy_i), s.gold.as_ref());
        }
    }
}
