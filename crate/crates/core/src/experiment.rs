//! Multi-run drivers: noise-ratio sweeps and ablation batteries.

use std::fmt::Write as _;

use crate::corpus::{inject_noise, AnnotatedSentence, TagVocabulary, Track};
use crate::error::{Error, Result};
use crate::metrics::SpanScore;
use crate::scdl::{evaluate, train, Ablation, ScdlConfig, TrainOutcome};

/// Train/dev/test partition of one corpus.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Vec<AnnotatedSentence>,
    pub dev: Vec<AnnotatedSentence>,
    pub test: Vec<AnnotatedSentence>,
}

/// Contiguous 70/15/15 split in file order.
pub fn split_corpus(sentences: &[AnnotatedSentence]) -> Result<Splits> {
    let n = sentences.len();
    let held = (n * 15 / 100).max(1);
    if n < 3 * held {
        return Err(Error::Usage(format!(
            "corpus of {n} sentences is too small to split"
        )));
    }
    let train_end = n - 2 * held;
    Ok(Splits {
        train: sentences[..train_end].to_vec(),
        dev: sentences[train_end..n - held].to_vec(),
        test: sentences[n - held..].to_vec(),
    })
}

/// Mean refinery F1 over the live noisy tracks.
pub fn mean_f1(scores: &[SpanScore]) -> f64 {
    if scores.is_empty() {
        return 0.0;
    }
    scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64
}

/// FNV-1a digest of one label track over a corpus.
pub fn track_checksum(sentences: &[AnnotatedSentence], track: Track) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for s in sentences {
        for tag in s.track(track).unwrap_or_default() {
            for b in tag.0.to_le_bytes() {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        h = (h ^ 0xff).wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Scdl,
    Baseline,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Scdl => "scdl",
            Method::Baseline => "baseline",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub k: f64,
    pub seed: u64,
    pub method: Method,
    pub initial_refinery_f1: f64,
    pub final_refinery_f1: f64,
    pub dev_f1: f64,
    pub test_f1: f64,
    /// SCDL test F1 minus baseline test F1 for this `(k, seed)`.
    pub gap: f64,
}

pub const SWEEP_HEADER: &str =
    "k,seed,method,initial_refinery_f1,final_refinery_f1,dev_f1,test_f1,scdl_minus_baseline";

/// Both arms of one `(k, seed)` cell, SCDL first.
pub fn sweep_cell(
    config: &ScdlConfig,
    vocab: &TagVocabulary,
    clean_train: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
    test: &[AnnotatedSentence],
    k: f64,
    seed: u64,
) -> Result<[SweepRow; 2]> {
    let noisy = inject_noise(clean_train, vocab.num_entity_types(), k, seed)?;
    if let Some(w) = &noisy.warning {
        log::warn!("k={k} seed={seed}: {w}");
    }
    let config = config.clone().with_seed(seed);
    let out = train(&config, vocab, &noisy.sentences, dev)?;
    let initial = mean_f1(out.initial_refinery.as_deref().unwrap_or_default());
    let refined = mean_f1(out.final_refinery.as_deref().unwrap_or_default());
    let scdl_test = evaluate(&out.best.params, test)?.f1;
    let base_test = evaluate(&out.baseline.params, test)?.f1;
    let gap = scdl_test - base_test;
    let row = |method, final_refinery_f1, dev_f1, test_f1| SweepRow {
        k,
        seed,
        method,
        initial_refinery_f1: initial,
        final_refinery_f1,
        dev_f1,
        test_f1,
        gap,
    };
    Ok([
        row(Method::Scdl, refined, out.best.dev.f1, scdl_test),
        row(Method::Baseline, initial, out.baseline.dev.f1, base_test),
    ])
}

/// Rows in `k`-major, then seed, then method order.
pub fn run_sweep(
    config: &ScdlConfig,
    vocab: &TagVocabulary,
    clean_train: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
    test: &[AnnotatedSentence],
    ks: &[f64],
    seeds: &[u64],
) -> Result<Vec<SweepRow>> {
    if ks.is_empty() {
        return Err(Error::Usage("sweep needs at least one noise ratio".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Usage("sweep needs at least one seed".into()));
    }
    let mut rows = Vec::with_capacity(ks.len() * seeds.len() * 2);
    for &k in ks {
        for &seed in seeds {
            log::info!("sweep cell k={k} seed={seed}");
            rows.extend(sweep_cell(config, vocab, clean_train, dev, test, k, seed)?);
        }
    }
    Ok(rows)
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            r.k,
            r.seed,
            r.method.name(),
            r.initial_refinery_f1,
            r.final_refinery_f1,
            r.dev_f1,
            r.test_f1,
            r.gap
        );
    }
    out
}

/// One training run under a single ablation (`None` is the full method).
#[derive(Clone, Debug)]
pub struct AblationRun {
    pub ablation: Option<Ablation>,
    pub outcome: TrainOutcome,
    pub test: Option<SpanScore>,
    /// Checksums of noisy_I before and after training.
    pub noisy_checksum: (u64, u64),
}

impl AblationRun {
    pub fn label(&self) -> &'static str {
        self.ablation.map_or("full", Ablation::name)
    }
}

pub fn run_ablations(
    config: &ScdlConfig,
    vocab: &TagVocabulary,
    train_corpus: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
    test: Option<&[AnnotatedSentence]>,
    variants: &[Option<Ablation>],
) -> Result<Vec<AblationRun>> {
    let before = track_checksum(train_corpus, Track::NoisyI);
    variants
        .iter()
        .map(|&ablation| {
            let mut c = config.clone();
            c.ablations.extend(ablation);
            log::info!("ablation run {}", ablation.map_or("full", Ablation::name));
            let outcome = train(&c, vocab, train_corpus, dev)?;
            let test = test
                .map(|t| evaluate(&outcome.best.params, t))
                .transpose()?;
            let after = track_checksum(&outcome.state.corpus, Track::NoisyI);
            Ok(AblationRun {
                ablation,
                outcome,
                test,
                noisy_checksum: (before, after),
            })
        })
        .collect()
}

pub const ABLATION_HEADER: &str =
    "ablation,best_model,dev_f1,test_f1,final_refinery_f1,label_updates";

pub fn ablation_csv(runs: &[AblationRun]) -> String {
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for r in runs {
        let refinery = r.outcome.final_refinery.as_deref().map(mean_f1);
        let _ = writeln!(
            out,
            "{},{},{:.6},{},{},{}",
            r.label(),
            r.outcome.best.model,
            r.outcome.best.dev.f1,
            r.test.map_or(String::new(), |s| format!("{:.6}", s.f1)),
            refinery.map_or(String::new(), |f| format!("{f:.6}")),
            r.outcome.state.label_updates
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Tag;

    fn corpus(n: usize) -> Vec<AnnotatedSentence> {
        (0..n)
            .map(|i| AnnotatedSentence::with_gold(vec![format!("w{i}")], vec![Tag::O]))
            .collect()
    }

    #[test]
    fn split_is_contiguous_and_complete() {
        let c = corpus(100);
        let s = split_corpus(&c).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (70, 15, 15));
        assert_eq!(s.train[0], c[0]);
        assert_eq!(s.test[14], c[99]);
        assert!(split_corpus(&corpus(2)).is_err());
    }

    #[test]
    fn checksum_sees_label_changes() {
        let mut c = corpus(5);
        let a = track_checksum(&c, Track::NoisyI);
        c[2].noisy_i[0] = Tag::begin(0);
        assert_ne!(a, track_checksum(&c, Track::NoisyI));
        assert_eq!(a, track_checksum(&c, Track::NoisyII));
    }

    #[test]
    fn empty_sweep_is_usage_error() {
        let vocab = TagVocabulary::new(&["PER"]).unwrap();
        let c = corpus(10);
        let r = run_sweep(&ScdlConfig::default(), &vocab, &c, &c, &c, &[], &[0]);
        assert!(matches!(r, Err(Error::Usage(_))));
    }

    #[test]
    fn csv_has_header_and_rows() {
        let row = SweepRow {
            k: 30.0,
            seed: 1,
            method: Method::Baseline,
            initial_refinery_f1: 0.5,
            final_refinery_f1: 0.5,
            dev_f1: 0.25,
            test_f1: 0.125,
            gap: -0.0625,
        };
        let csv = sweep_csv(&[row]);
        assert_eq!(
            csv,
            format!(
                "{SWEEP_HEADER}\n30,1,baseline,0.500000,0.500000,0.250000,0.125000,-0.062500\n"
            )
        );
    }
}
