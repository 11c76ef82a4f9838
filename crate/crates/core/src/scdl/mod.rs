//! Two-network self-denoising training loop.
//!
//! Each network is a teacher-student pair trained on its own noisy track.
//! Every batch, the teacher selects tokens it agrees with confidently and
//! the student descends the soft-label loss on those tokens. Every
//! `update_cycle` steps each teacher relabels the training set for the
//! other network.

mod config;

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use config::{Ablation, NetShape, ScdlConfig, UpdateCycle};

use crate::corpus::{validate_bio, AnnotatedSentence, TagVocabulary, Track};
use crate::denoise::{token_selection, Confidence, SelectionRules, TeacherStudentPair};
use crate::error::{Error, Result};
use crate::metrics::{refinery_report, span_prf1, MetricRecord, SpanScore};
use crate::tagger::{Distribution, Dropout, LossStatus, TaggerParams};

/// One of the four models tracked during training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ModelId {
    Teacher1,
    Student1,
    Teacher2,
    Student2,
}

impl ModelId {
    /// Tie-break order used by [`select_best`].
    pub const ORDER: [ModelId; 4] = [
        ModelId::Teacher1,
        ModelId::Student1,
        ModelId::Teacher2,
        ModelId::Student2,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelId::Teacher1 => "teacher1",
            ModelId::Student1 => "student1",
            ModelId::Teacher2 => "teacher2",
            ModelId::Student2 => "student2",
        }
    }

    pub fn network(self) -> usize {
        match self {
            ModelId::Teacher1 | ModelId::Student1 => 0,
            ModelId::Teacher2 | ModelId::Student2 => 1,
        }
    }

    pub fn is_teacher(self) -> bool {
        matches!(self, ModelId::Teacher1 | ModelId::Teacher2)
    }
}

impl fmt::Display for ModelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Index of the first maximal score; earlier candidates win ties.
pub fn select_best(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Usage("no candidates to select from".into()));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("candidate score {bad}")));
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Batch order of global epoch `epoch`: a permutation of `0..n` cut into
/// chunks of `batch_size`. Pretraining epochs come first in the numbering.
pub fn epoch_batches(
    n: usize,
    batch_size: usize,
    shuffle_seed: u64,
    epoch: u64,
) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(shuffle_seed);
    rng.set_stream(epoch);
    order.shuffle(&mut rng);
    order
        .chunks(batch_size.max(1))
        .map(<[usize]>::to_vec)
        .collect()
}

/// Token counts of one self-denoising step.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    pub selected: usize,
    pub total: usize,
    pub loss: f64,
}

fn check_loss(loss: f64, what: impl FnOnce() -> String) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(format!("loss {loss} at {}", what())))
    }
}

fn check_training_corpus(corpus: &[AnnotatedSentence]) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::Usage("training corpus is empty".into()));
    }
    for (i, s) in corpus.iter().enumerate() {
        for track in [Track::NoisyI, Track::NoisyII] {
            let tags = s.track(track).unwrap_or_default();
            if tags.len() != s.len() {
                return Err(Error::Shape(format!(
                    "sentence {i}: {track} length differs"
                )));
            }
            validate_bio(tags)
                .map_err(|e| Error::Usage(format!("sentence {i}: {track} track: {e}")))?;
        }
    }
    Ok(())
}

/// Noisy-label pretraining of the networks (one when `single_network` is
/// ablated) together with the mean training loss of every epoch.
pub fn pretrain_networks(
    config: &ScdlConfig,
    num_tags: usize,
    corpus: &[AnnotatedSentence],
) -> Result<(Vec<TaggerParams>, Vec<Vec<f64>>)> {
    config.validate()?;
    check_training_corpus(corpus)?;
    let mut nets = (0..config.num_networks())
        .map(|i| TaggerParams::init(config.tagger_config(i, num_tags)))
        .collect::<Result<Vec<_>>>()?;
    let mut curves = vec![Vec::new(); nets.len()];
    let mut k = 0u64;
    for epoch in 0..config.pretrain_epochs {
        let batches = epoch_batches(
            corpus.len(),
            config.batch_size,
            config.shuffle_seed,
            epoch as u64,
        );
        let mut sums = vec![0.0; nets.len()];
        for idx in &batches {
            let batch: Vec<&AnnotatedSentence> = idx.iter().map(|&i| &corpus[i]).collect();
            let lr = config.lr_at(k);
            for (n, net) in nets.iter_mut().enumerate() {
                let dropout = config.dropout(n, k);
                let (loss, grad) = net.loss_hard_with(&batch, Track::noisy(n), dropout.as_ref())?;
                check_loss(loss, || {
                    format!("pretraining epoch {epoch}, network {}", n + 1)
                })?;
                net.sgd_step(&grad, lr)?;
                sums[n] += loss;
            }
            k += 1;
        }
        for (curve, sum) in curves.iter_mut().zip(sums) {
            curve.push(sum / batches.len() as f64);
        }
    }
    Ok((nets, curves))
}

/// Both pretrained networks, regardless of the `single_network` ablation.
pub fn pretrain(
    config: &ScdlConfig,
    num_tags: usize,
    corpus: &[AnnotatedSentence],
) -> Result<(TaggerParams, TaggerParams)> {
    let mut config = config.clone();
    config.ablations.remove(&Ablation::SingleNetwork);
    let (mut nets, _) = pretrain_networks(&config, num_tags, corpus)?;
    let second = nets.pop().expect("two networks");
    let first = nets.pop().expect("two networks");
    Ok((first, second))
}

/// One self-denoising update of `pair` on `batch`, labelled by `track`.
/// The teacher runs without dropout; the student under `dropout`.
///
/// An empty selection leaves both models untouched.
pub fn self_denoise_step(
    pair: &mut TeacherStudentPair,
    batch: &[&AnnotatedSentence],
    track: Track,
    config: &ScdlConfig,
    lr: f64,
    dropout: Option<&Dropout>,
) -> Result<StepStats> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let teacher: Vec<Vec<Distribution>> = batch
        .iter()
        .map(|s| pair.teacher.forward(&s.tokens))
        .collect();
    let noisy = batch
        .iter()
        .map(|s| {
            s.track(track)
                .ok_or_else(|| Error::Usage(format!("missing {track} track")))
        })
        .collect::<Result<Vec<_>>>()?;
    let rules = SelectionRules {
        consistency: !config.has(Ablation::NoConsistency),
        confidence: !config.has(Ablation::NoConfidence),
    };
    let mask = token_selection(&noisy, &teacher, Confidence::new(config.delta)?, rules)?;
    let targets = if config.has(Ablation::HardLabels) {
        let num_tags = pair.student.config().num_tags;
        noisy
            .iter()
            .map(|tags| {
                tags.iter()
                    .map(|&t| Distribution::one_hot(num_tags, t))
                    .collect()
            })
            .collect()
    } else {
        teacher
    };
    let soft =
        pair.student
            .loss_soft_with(batch, &targets, &mask, config.normalization(), dropout)?;
    check_loss(soft.loss, || format!("{track} student"))?;
    if soft.status == LossStatus::Ok {
        pair.student.sgd_step(&soft.gradient, lr)?;
        pair.ema_update()?;
    }
    Ok(StepStats {
        selected: soft.selected,
        total: soft.total,
        loss: soft.loss,
    })
}

/// Live training state.
#[derive(Clone, Debug)]
pub struct TrainState {
    /// One pair per network; a single entry under `single_network`.
    pub pairs: Vec<TeacherStudentPair>,
    /// Number of batches processed by the self-denoising loop.
    pub step: u64,
    /// Optimizer steps taken so far, including pretraining.
    pub optimizer_steps: u64,
    /// Training corpus with live noisy tracks.
    pub corpus: Vec<AnnotatedSentence>,
    pub history: Vec<MetricRecord>,
    /// Collaborative updates performed so far.
    pub label_updates: usize,
}

impl TrainState {
    pub fn model(&self, id: ModelId) -> Option<&TaggerParams> {
        let pair = self.pairs.get(id.network())?;
        Some(if id.is_teacher() {
            &pair.teacher
        } else {
            &pair.student
        })
    }

    /// Models present in this run, in tie-break order.
    pub fn models(&self) -> Vec<(ModelId, &TaggerParams)> {
        ModelId::ORDER
            .into_iter()
            .filter_map(|id| self.model(id).map(|p| (id, p)))
            .collect()
    }
}

/// Rewrites each network's noisy track with the peer teacher's predictions.
/// A single-network state is left as is.
pub fn collaborative_update(state: &mut TrainState) {
    if state.pairs.len() < 2 {
        return;
    }
    let (t1, t2) = (&state.pairs[0].teacher, &state.pairs[1].teacher);
    for s in &mut state.corpus {
        s.noisy_i = t2.predict_labels(&s.tokens);
        s.noisy_ii = t1.predict_labels(&s.tokens);
    }
    state.label_updates += 1;
}

/// Span scores of `params` on sentences with gold labels.
pub fn evaluate(params: &TaggerParams, sentences: &[AnnotatedSentence]) -> Result<SpanScore> {
    let mut predicted = Vec::with_capacity(sentences.len());
    let mut gold = Vec::with_capacity(sentences.len());
    for (i, s) in sentences.iter().enumerate() {
        let g = s
            .gold
            .as_deref()
            .ok_or_else(|| Error::Usage(format!("evaluation sentence {i} has no gold track")))?;
        predicted.push(params.predict_labels(&s.tokens));
        gold.push(g);
    }
    span_prf1(&predicted, &gold)
}

/// A model snapshot with its dev score.
#[derive(Clone, Debug)]
pub struct BestModel {
    pub model: ModelId,
    pub params: TaggerParams,
    pub dev: SpanScore,
    pub epoch: usize,
    pub step: u64,
}

/// Per-epoch training summary.
#[derive(Clone, Debug, PartialEq, serde::Serialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub step: u64,
    /// Fraction of tokens selected, per network.
    pub selected_fraction: Vec<f64>,
    /// Mean soft loss per batch, per network.
    pub mean_loss: Vec<f64>,
    pub label_updates: usize,
    /// Dev F1 of teacher1, student1, teacher2, student2 (present models only).
    pub dev_f1: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Best model over every evaluation, pretrained candidates included.
    pub best: BestModel,
    /// Best pretrained model: the noisy-supervised baseline of this run.
    pub baseline: BestModel,
    pub state: TrainState,
    pub epochs: Vec<EpochSummary>,
    /// Mean loss of each pretraining epoch, per network.
    pub pretrain_loss: Vec<Vec<f64>>,
    /// Refinery score of the noisy tracks before training, when gold exists.
    pub initial_refinery: Option<Vec<SpanScore>>,
    /// Refinery score of the noisy tracks after training, when gold exists.
    pub final_refinery: Option<Vec<SpanScore>>,
}

/// Callback invoked after pretraining (epoch 0) and after every epoch.
pub type EpochObserver<'a> = dyn FnMut(usize, &TrainState) -> Result<()> + 'a;

pub fn train(
    config: &ScdlConfig,
    vocab: &TagVocabulary,
    train_corpus: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
) -> Result<TrainOutcome> {
    train_with(config, vocab, train_corpus, dev, &mut |_, _| Ok(()))
}

fn refinery(corpus: &[AnnotatedSentence], networks: usize) -> Result<Option<Vec<SpanScore>>> {
    if corpus.iter().any(|s| s.gold.is_none()) {
        return Ok(None);
    }
    (0..networks)
        .map(|n| refinery_report(corpus, Track::noisy(n)))
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

struct Evaluator<'a> {
    dev: &'a [AnnotatedSentence],
    ablations: Vec<String>,
    best: Option<BestModel>,
}

impl Evaluator<'_> {
    /// Scores every model on dev, records metrics and refinery rows, and
    /// updates the best model. Returns the dev F1 per model.
    fn run(&mut self, epoch: usize, state: &mut TrainState) -> Result<Vec<f64>> {
        let models = state.models();
        let scores = models
            .iter()
            .map(|(_, p)| evaluate(p, self.dev))
            .collect::<Result<Vec<_>>>()?;
        let f1: Vec<f64> = scores.iter().map(|s| s.f1).collect();
        let winner = select_best(&f1)?;
        if self.best.as_ref().is_none_or(|b| f1[winner] > b.dev.f1) {
            let (id, params) = models[winner];
            self.best = Some(BestModel {
                model: id,
                params: params.clone(),
                dev: scores[winner],
                epoch,
                step: state.step,
            });
        }
        let mut records: Vec<MetricRecord> = models
            .iter()
            .zip(&scores)
            .map(|((id, _), s)| MetricRecord::new(state.step, epoch, id.name(), "dev", s))
            .collect();
        if let Some(refine) = refinery(&state.corpus, state.pairs.len())? {
            for (n, s) in refine.iter().enumerate() {
                let name = if n == 0 { "noisy_I" } else { "noisy_II" };
                records.push(MetricRecord::new(state.step, epoch, name, "train", s));
            }
        }
        for r in &mut records {
            r.ablations = self.ablations.clone();
        }
        state.history.extend(records);
        Ok(f1)
    }
}

/// Per-network accumulators over one epoch.
#[derive(Clone, Copy, Default)]
struct Tally {
    selected: usize,
    total: usize,
    loss: f64,
    batches: usize,
}

#[allow(clippy::too_many_arguments)]
fn run_segment(
    network: usize,
    pair: &mut TeacherStudentPair,
    corpus: &[AnnotatedSentence],
    batches: &[Vec<usize>],
    track: Track,
    config: &ScdlConfig,
    first_k: u64,
    first_step: u64,
) -> Result<Tally> {
    let mut tally = Tally::default();
    for (b, idx) in batches.iter().enumerate() {
        let batch: Vec<&AnnotatedSentence> = idx.iter().map(|&i| &corpus[i]).collect();
        let k = first_k + b as u64;
        let stats = self_denoise_step(
            pair,
            &batch,
            track,
            config,
            config.lr_at(k),
            config.dropout(network, k).as_ref(),
        )
        .map_err(|e| match e {
            Error::NonFinite(m) => {
                Error::NonFinite(format!("{m}, step {}", first_step + b as u64 + 1))
            }
            other => other,
        })?;
        tally.selected += stats.selected;
        tally.total += stats.total;
        tally.loss += stats.loss;
        tally.batches += 1;
    }
    Ok(tally)
}

/// Full training run; `observer` sees the state after pretraining and after
/// every epoch.
pub fn train_with(
    config: &ScdlConfig,
    vocab: &TagVocabulary,
    train_corpus: &[AnnotatedSentence],
    dev: &[AnnotatedSentence],
    observer: &mut EpochObserver<'_>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if dev.is_empty() {
        return Err(Error::Usage("dev corpus is empty".into()));
    }
    if let Some(i) = dev.iter().position(|s| s.gold.is_none()) {
        return Err(Error::Usage(format!("dev sentence {i} has no gold track")));
    }
    let num_tags = vocab.size();
    let (nets, pretrain_loss) = pretrain_networks(config, num_tags, train_corpus)?;
    let alpha = config.effective_alpha();
    let pairs = nets
        .into_iter()
        .map(|p| TeacherStudentPair::new(p, alpha))
        .collect::<Result<Vec<_>>>()?;
    let batches_per_epoch = config.batches_per_epoch(train_corpus.len()) as u64;
    let pretrain_batches = config.pretrain_epochs as u64 * batches_per_epoch;
    let mut state = TrainState {
        pairs,
        step: if config.cycle_counts_pretrain {
            pretrain_batches
        } else {
            0
        },
        optimizer_steps: pretrain_batches,
        corpus: train_corpus.to_vec(),
        history: Vec::new(),
        label_updates: 0,
    };
    let networks = state.pairs.len();
    let initial_refinery = refinery(&state.corpus, networks)?;
    let mut evaluator = Evaluator {
        dev,
        ablations: config
            .ablations
            .iter()
            .map(|a| a.name().to_string())
            .collect(),
        best: None,
    };
    evaluator.run(0, &mut state)?;
    let baseline = evaluator.best.clone().expect("evaluated at least once");
    observer(0, &state)?;

    let cycle = config.resolved_update_cycle(train_corpus.len()) as u64;
    let mut epochs = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        let global_epoch = (config.pretrain_epochs + epoch - 1) as u64;
        let batches = epoch_batches(
            state.corpus.len(),
            config.batch_size,
            config.shuffle_seed,
            global_epoch,
        );
        let mut tallies = vec![Tally::default(); networks];
        let mut start = 0;
        while start < batches.len() {
            let to_boundary = (cycle - state.step % cycle) as usize;
            let end = (start + to_boundary).min(batches.len());
            let segment = &batches[start..end];
            let (k0, s0) = (state.optimizer_steps, state.step);
            let corpus = &state.corpus;
            let results: Vec<Result<Tally>> = if config.parallel && networks > 1 {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = state
                        .pairs
                        .iter_mut()
                        .enumerate()
                        .map(|(n, pair)| {
                            scope.spawn(move || {
                                run_segment(
                                    n,
                                    pair,
                                    corpus,
                                    segment,
                                    Track::noisy(n),
                                    config,
                                    k0,
                                    s0,
                                )
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("self-denoising worker panicked"))
                        .collect()
                })
            } else {
                state
                    .pairs
                    .iter_mut()
                    .enumerate()
                    .map(|(n, pair)| {
                        run_segment(n, pair, corpus, segment, Track::noisy(n), config, k0, s0)
                    })
                    .collect()
            };
            for (n, r) in results.into_iter().enumerate() {
                let t = r.map_err(|e| match e {
                    Error::NonFinite(m) => Error::NonFinite(format!("network {}: {m}", n + 1)),
                    other => other,
                })?;
                tallies[n].selected += t.selected;
                tallies[n].total += t.total;
                tallies[n].loss += t.loss;
                tallies[n].batches += t.batches;
            }
            let done = (end - start) as u64;
            state.step += done;
            state.optimizer_steps += done;
            if state.step.is_multiple_of(cycle) {
                collaborative_update(&mut state);
                log::debug!("relabelled training set at step {}", state.step);
            }
            start = end;
        }
        let dev_f1 = evaluator.run(epoch, &mut state)?;
        let summary = EpochSummary {
            epoch,
            step: state.step,
            selected_fraction: tallies
                .iter()
                .map(|t| t.selected as f64 / t.total.max(1) as f64)
                .collect(),
            mean_loss: tallies
                .iter()
                .map(|t| t.loss / t.batches.max(1) as f64)
                .collect(),
            label_updates: state.label_updates,
            dev_f1,
        };
        log::info!(
            "epoch {epoch} step {} selected {:?} dev f1 {:?}",
            state.step,
            summary.selected_fraction,
            summary.dev_f1
        );
        epochs.push(summary);
        observer(epoch, &state)?;
    }
    let final_refinery = refinery(&state.corpus, networks)?;
    Ok(TrainOutcome {
        best: evaluator.best.expect("evaluated at least once"),
        baseline,
        state,
        epochs,
        pretrain_loss,
        initial_refinery,
        final_refinery,
    })
}

#[cfg(test)]
mod tests;
