//! C ABI over the `scdl` crate.
//!
//! Objects cross the boundary as opaque handles created by `scdl_*_parse`,
//! `scdl_*_load` or `scdl_train` and released by the matching `*_free`.
//! Every fallible call returns an [`ScdlStatus`]; on failure the message is
//! available from [`scdl_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use scdl::corpus::{parse_conll, AnnotatedSentence, ParseOptions, TagVocabulary};
use scdl::metrics::{span_prf1, SpanScore};
use scdl::scdl::{evaluate, train, ScdlConfig};
use scdl::tagger::{read_checkpoint, write_checkpoint, Checkpoint, TaggerParams};
use scdl::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScdlStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Format = 3,
    Validation = 4,
    Usage = 5,
    Shape = 6,
    Config = 7,
    NonFinite = 8,
    Io = 9,
    EmptyBatch = 10,
    Panic = 11,
}

/// Span-level precision, recall and F1 with their counts.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ScdlScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl From<&SpanScore> for ScdlScore {
    fn from(s: &SpanScore) -> Self {
        ScdlScore {
            precision: s.precision,
            recall: s.recall,
            f1: s.f1,
            true_positives: s.true_positives,
            predicted: s.predicted,
            gold: s.gold,
        }
    }
}

/// A parsed CoNLL corpus and its tag vocabulary.
pub struct ScdlCorpus {
    vocab: TagVocabulary,
    sentences: Vec<AnnotatedSentence>,
}

/// A trained tagger.
pub struct ScdlModel {
    checkpoint: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(ScdlStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Format { .. } => ScdlStatus::Format,
            Error::Validation { .. } => ScdlStatus::Validation,
            Error::Usage(_) => ScdlStatus::Usage,
            Error::Shape(_) => ScdlStatus::Shape,
            Error::Config(_) => ScdlStatus::Config,
            Error::NonFinite(_) => ScdlStatus::NonFinite,
            Error::EmptyBatch => ScdlStatus::EmptyBatch,
            Error::Io { .. } => ScdlStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> ScdlStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ScdlStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(message);
            status
        }
        Err(_) => {
            set_last_error("internal panic".into());
            ScdlStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(ScdlStatus::NullPointer, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(ScdlStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn opt_str_arg<'a>(p: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if p.is_null() {
        Ok(None)
    } else {
        str_arg(p, what).map(Some)
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

/// Message of the last failed call on this thread, or null. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn scdl_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Parses CoNLL `text` with the comma-separated `entity_types` (for example
/// `"PER,LOC,ORG"`). Tags become the gold labels of the corpus.
///
/// # Safety
/// `text` and `entity_types` must be NUL-terminated strings and `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_corpus_parse(
    text: *const c_char,
    entity_types: *const c_char,
    out: *mut *mut ScdlCorpus,
) -> ScdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = str_arg(text, "text")?;
        let types: Vec<&str> = str_arg(entity_types, "entity_types")?
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .collect();
        let vocab = TagVocabulary::new(&types)?;
        let sentences = parse_conll(text, &vocab, ParseOptions::default())?;
        *out = Box::into_raw(Box::new(ScdlCorpus { vocab, sentences }));
        Ok(())
    })
}

/// Number of sentences, or 0 for a null handle.
///
/// # Safety
/// `corpus` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn scdl_corpus_len(corpus: *const ScdlCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.sentences.len())
}

/// # Safety
/// `corpus` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdl_corpus_free(corpus: *mut ScdlCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

/// Exact-match span scores of `predicted` against `gold` (both gold tracks).
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_span_prf1(
    predicted: *const ScdlCorpus,
    gold: *const ScdlCorpus,
    out: *mut ScdlScore,
) -> ScdlStatus {
    guard(|| {
        let p = handle(predicted, "predicted")?;
        let g = handle(gold, "gold")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let tags = |c: &ScdlCorpus| -> Vec<Vec<scdl::corpus::Tag>> {
            c.sentences
                .iter()
                .map(|s| s.gold.clone().unwrap_or_default())
                .collect()
        };
        for (i, (a, b)) in p.sentences.iter().zip(&g.sentences).enumerate() {
            if a.tokens != b.tokens {
                return Err(Failure(
                    ScdlStatus::Shape,
                    format!("sentence {i}: tokens differ"),
                ));
            }
        }
        *out = ScdlScore::from(&span_prf1(&tags(p), &tags(g))?);
        Ok(())
    })
}

/// Loads a checkpoint written by the `scdl` CLI or [`scdl_model_save`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_load(
    path: *const c_char,
    out: *mut *mut ScdlModel,
) -> ScdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = Path::new(str_arg(path, "path")?);
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let checkpoint = read_checkpoint(&mut bytes.as_slice())?;
        *out = Box::into_raw(Box::new(ScdlModel { checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `model` must be live and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_save(
    model: *const ScdlModel,
    path: *const c_char,
) -> ScdlStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let path = Path::new(str_arg(path, "path")?);
        let mut bytes = Vec::new();
        write_checkpoint(&mut bytes, &model.checkpoint).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_free(model: *mut ScdlModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of tags the model predicts (`2 * types + 1`), or 0 for null.
///
/// # Safety
/// `model` must be null or live.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_num_tags(model: *const ScdlModel) -> usize {
    model
        .as_ref()
        .map_or(0, |m| m.checkpoint.params.config().num_tags)
}

/// Predicts BIO tag codes for `num_tokens` tokens into `tags_out`. Code 0
/// is `O`; `2t+1` and `2t+2` are `B-` and `I-` of entity type `t`.
///
/// # Safety
/// `tokens` must point to `num_tokens` NUL-terminated strings and
/// `tags_out` to room for `num_tokens` values.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_predict(
    model: *const ScdlModel,
    tokens: *const *const c_char,
    num_tokens: usize,
    tags_out: *mut u16,
) -> ScdlStatus {
    guard(|| {
        let model = handle(model, "model")?;
        if num_tokens == 0 {
            return Ok(());
        }
        if tokens.is_null() {
            return Err(null("tokens"));
        }
        if tags_out.is_null() {
            return Err(null("tags_out"));
        }
        let words = std::slice::from_raw_parts(tokens, num_tokens)
            .iter()
            .map(|&p| str_arg(p, "token").map(str::to_string))
            .collect::<Result<Vec<_>, _>>()?;
        let tags = model.checkpoint.params.predict_labels(&words);
        let out = std::slice::from_raw_parts_mut(tags_out, num_tokens);
        for (o, t) in out.iter_mut().zip(tags) {
            *o = t.0;
        }
        Ok(())
    })
}

/// Scores the model on the gold labels of `corpus`.
///
/// # Safety
/// Handles must be live and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_model_evaluate(
    model: *const ScdlModel,
    corpus: *const ScdlCorpus,
    out: *mut ScdlScore,
) -> ScdlStatus {
    guard(|| {
        let model = handle(model, "model")?;
        let corpus = handle(corpus, "corpus")?;
        if out.is_null() {
            return Err(null("out"));
        }
        check_vocab(model, &corpus.vocab)?;
        *out = ScdlScore::from(&evaluate(&model.checkpoint.params, &corpus.sentences)?);
        Ok(())
    })
}

fn check_vocab(model: &ScdlModel, vocab: &TagVocabulary) -> Result<(), Failure> {
    if model.checkpoint.entity_types.as_slice() == vocab.entity_types() {
        Ok(())
    } else {
        Err(Failure(
            ScdlStatus::Shape,
            format!(
                "model types {:?} differ from corpus types {:?}",
                model.checkpoint.entity_types,
                vocab.entity_types()
            ),
        ))
    }
}

/// Trains on the labels of `train_corpus` (treated as noisy) with dev-set
/// model selection on `dev_corpus`. `config` is key=value text or null for
/// defaults. Writes the best model and, when `dev_score` is non-null, its
/// dev score.
///
/// # Safety
/// Handles must be live; `config` null or NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn scdl_train(
    config: *const c_char,
    train_corpus: *const ScdlCorpus,
    dev_corpus: *const ScdlCorpus,
    out: *mut *mut ScdlModel,
    dev_score: *mut ScdlScore,
) -> ScdlStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let config = match opt_str_arg(config, "config")? {
            Some(text) => ScdlConfig::parse(text)?,
            None => ScdlConfig::default(),
        };
        let train_corpus = handle(train_corpus, "train_corpus")?;
        let dev = handle(dev_corpus, "dev_corpus")?;
        if train_corpus.vocab.entity_types() != dev.vocab.entity_types() {
            return Err(Failure(
                ScdlStatus::Shape,
                "train and dev entity types differ".into(),
            ));
        }
        let mut sentences = train_corpus.sentences.clone();
        sentences.iter_mut().for_each(|s| s.gold = None);
        let outcome = train(&config, &train_corpus.vocab, &sentences, &dev.sentences)?;
        if !dev_score.is_null() {
            *dev_score = ScdlScore::from(&outcome.best.dev);
        }
        *out = Box::into_raw(Box::new(ScdlModel {
            checkpoint: Checkpoint {
                params: outcome.best.params,
                entity_types: train_corpus.vocab.entity_types().to_vec(),
            },
        }));
        Ok(())
    })
}

/// Wraps existing parameters; used by tests and embedders linking the
/// Rust crate directly.
pub fn model_from_params(params: TaggerParams, entity_types: Vec<String>) -> *mut ScdlModel {
    Box::into_raw(Box::new(ScdlModel {
        checkpoint: Checkpoint {
            params,
            entity_types,
        },
    }))
}
