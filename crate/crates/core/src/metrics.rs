//! Span-level precision, recall and F1; refinery reports; learning curves.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::corpus::{collect_track, spans_from_bio, AnnotatedSentence, Span, Tag, Track};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanScore {
    pub fn from_counts(true_positives: usize, predicted: usize, gold: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let precision = ratio(true_positives, predicted);
        let recall = ratio(true_positives, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        SpanScore {
            precision,
            recall,
            f1,
            true_positives,
            predicted,
            gold,
        }
    }
}

/// Exact-match micro-averaged span scores: a predicted span is a true
/// positive iff start, end and type all match a gold span.
pub fn span_prf1<P, G>(predicted: &[P], gold: &[G]) -> Result<SpanScore>
where
    P: AsRef<[Tag]>,
    G: AsRef<[Tag]>,
{
    if predicted.len() != gold.len() {
        return Err(Error::Shape(format!(
            "{} predicted sentences vs {} gold",
            predicted.len(),
            gold.len()
        )));
    }
    let (mut tp, mut n_pred, mut n_gold) = (0, 0, 0);
    for (i, (p, g)) in predicted.iter().zip(gold).enumerate() {
        let (p, g) = (p.as_ref(), g.as_ref());
        if p.len() != g.len() {
            return Err(Error::Shape(format!(
                "sentence {i}: {} predicted tags vs {} gold",
                p.len(),
                g.len()
            )));
        }
        let ps = spans_from_bio(p)?;
        let gs: HashSet<Span> = spans_from_bio(g)?.into_iter().collect();
        tp += ps.iter().filter(|s| gs.contains(s)).count();
        n_pred += ps.len();
        n_gold += gs.len();
    }
    Ok(SpanScore::from_counts(tp, n_pred, n_gold))
}

/// Scores a label track of the training corpus against its gold labels.
pub fn refinery_report(sentences: &[AnnotatedSentence], track: Track) -> Result<SpanScore> {
    let gold = collect_track(sentences, Track::Gold)?;
    let noisy = collect_track(sentences, track)?;
    span_prf1(&noisy, &gold)
}

/// Mention-level breakdown of distant labels against gold.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct NoiseSummary {
    pub gold_spans: usize,
    pub correct: usize,
    /// Gold mentions left entirely `O`.
    pub incomplete: usize,
    /// Gold mentions with matching boundaries but the wrong type.
    pub inaccurate: usize,
    /// Gold mentions partially overlapped by a noisy span with other boundaries.
    pub boundary: usize,
    /// Noisy spans that overlap no gold mention.
    pub spurious: usize,
}

impl NoiseSummary {
    pub fn noisy_spans(&self) -> usize {
        self.incomplete + self.inaccurate + self.boundary + self.spurious
    }
}

pub fn noise_summary<N, G>(noisy: &[N], gold: &[G]) -> Result<NoiseSummary>
where
    N: AsRef<[Tag]>,
    G: AsRef<[Tag]>,
{
    if noisy.len() != gold.len() {
        return Err(Error::Shape(
            "noisy and gold corpora differ in length".into(),
        ));
    }
    let mut summary = NoiseSummary::default();
    for (n, g) in noisy.iter().zip(gold) {
        let (n, g) = (n.as_ref(), g.as_ref());
        if n.len() != g.len() {
            return Err(Error::Shape(
                "noisy and gold sentence lengths differ".into(),
            ));
        }
        let ns = spans_from_bio(n)?;
        let gs = spans_from_bio(g)?;
        let overlaps = |a: &Span, b: &Span| a.start <= b.end && b.start <= a.end;
        for gspan in &gs {
            summary.gold_spans += 1;
            if ns.contains(gspan) {
                summary.correct += 1;
            } else if ns
                .iter()
                .any(|s| s.start == gspan.start && s.end == gspan.end)
            {
                summary.inaccurate += 1;
            } else if ns.iter().any(|s| overlaps(s, gspan)) {
                summary.boundary += 1;
            } else {
                summary.incomplete += 1;
            }
        }
        summary.spurious += ns
            .iter()
            .filter(|s| !gs.iter().any(|g| overlaps(s, g)))
            .count();
    }
    Ok(summary)
}

/// One evaluation of one model (or label track) at one step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    pub epoch: usize,
    pub model: String,
    pub split: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default)]
    pub ablations: Vec<String>,
}

impl MetricRecord {
    pub fn new(step: u64, epoch: usize, model: &str, split: &str, score: &SpanScore) -> Self {
        MetricRecord {
            step,
            epoch,
            model: model.to_string(),
            split: split.to_string(),
            precision: score.precision,
            recall: score.recall,
            f1: score.f1,
            ablations: Vec::new(),
        }
    }
}

pub const CURVE_HEADER: &str = "step,model,split,precision,recall,f1";

/// CSV learning curve sorted by step, then model id.
pub fn emit_curve(history: &[MetricRecord]) -> Result<String> {
    if history.is_empty() {
        return Err(Error::Usage(
            "cannot emit a curve from an empty history".into(),
        ));
    }
    let mut rows: Vec<&MetricRecord> = history.iter().collect();
    rows.sort_by(|a, b| a.step.cmp(&b.step).then_with(|| a.model.cmp(&b.model)));
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6}\n",
            r.step, r.model, r.split, r.precision, r.recall, r.f1
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(code: u16) -> Tag {
        Tag(code)
    }

    #[test]
    fn identical_is_perfect() {
        let gold = vec![vec![t(0), t(1), t(2)], vec![t(3)]];
        let s = span_prf1(&gold, &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_prediction_convention() {
        let gold = vec![vec![t(1), t(0)]];
        let pred = vec![vec![t(0), t(0)]];
        let s = span_prf1(&pred, &gold).unwrap();
        assert_eq!((s.precision, s.recall, s.f1), (0.0, 0.0, 0.0));
        assert_eq!(s.gold, 1);
    }

    #[test]
    fn type_must_match() {
        // PER = 0, LOC = 1
        let pred = vec![vec![t(0), Tag::begin(0), Tag::inside(0)]];
        let gold = vec![vec![t(0), Tag::begin(1), Tag::inside(1)]];
        let s = span_prf1(&pred, &gold).unwrap();
        assert_eq!(s.true_positives, 0);
        assert_eq!((s.predicted, s.gold), (1, 1));
    }

    #[test]
    fn length_mismatch() {
        assert!(span_prf1(&[vec![t(0)]], &[vec![t(0), t(0)]]).is_err());
        assert!(span_prf1(&[vec![t(0)]], &Vec::<Vec<Tag>>::new()).is_err());
    }

    #[test]
    fn refinery_of_gold_and_all_outside() {
        let mut s = vec![AnnotatedSentence::with_gold(
            vec!["a".into(), "b".into()],
            vec![Tag::begin(0), Tag::O],
        )];
        assert_eq!(refinery_report(&s, Track::NoisyI).unwrap().f1, 1.0);
        s[0].noisy_i = vec![Tag::O, Tag::O];
        assert_eq!(refinery_report(&s, Track::NoisyI).unwrap().recall, 0.0);
        s[0].gold = None;
        assert!(refinery_report(&s, Track::NoisyI).is_err());
    }

    #[test]
    fn curve_sorting() {
        let score = SpanScore::from_counts(1, 2, 2);
        let history = vec![
            MetricRecord::new(20, 2, "teacher1", "dev", &score),
            MetricRecord::new(10, 1, "student1", "dev", &score),
            MetricRecord::new(10, 1, "student2", "dev", &score),
            MetricRecord::new(20, 2, "student1", "dev", &score),
        ];
        let csv = emit_curve(&history).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CURVE_HEADER);
        let keys: Vec<(&str, &str)> = lines[1..]
            .iter()
            .map(|l| {
                let mut it = l.split(',');
                (it.next().unwrap(), it.next().unwrap())
            })
            .collect();
        assert_eq!(
            keys,
            [
                ("10", "student1"),
                ("10", "student2"),
                ("20", "student1"),
                ("20", "teacher1")
            ]
        );
        assert_eq!(emit_curve(&history[..1]).unwrap().lines().count(), 2);
        assert!(emit_curve(&[]).is_err());
    }

    #[test]
    fn noise_breakdown() {
        // gold: [PER PER] O [LOC] O ; noisy: O O O [ORG] [MISC]
        let gold = vec![vec![
            Tag::begin(0),
            Tag::inside(0),
            Tag::O,
            Tag::begin(1),
            Tag::O,
        ]];
        let noisy = vec![vec![Tag::O, Tag::O, Tag::O, Tag::begin(2), Tag::begin(3)]];
        let s = noise_summary(&noisy, &gold).unwrap();
        assert_eq!(s.incomplete, 1);
        assert_eq!(s.inaccurate, 1);
        assert_eq!(s.spurious, 1);
        assert_eq!(s.correct, 0);
        assert_eq!(s.noisy_spans(), 3);
    }
}
