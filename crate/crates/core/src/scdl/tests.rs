use super::*;
use crate::corpus::synth::{generate, SynthConfig, SynthCorpus};
use crate::corpus::Tag;
use crate::denoise::SelectionMask;
use crate::tagger::{Normalization, TaggerConfig};

fn small_corpus() -> SynthCorpus {
    generate(&SynthConfig {
        train_sentences: 60,
        dev_sentences: 20,
        test_sentences: 20,
        names_per_type: 12,
        ambiguous_names: 2,
        filler_words: 30,
        ..SynthConfig::default()
    })
    .unwrap()
}

fn small_config() -> ScdlConfig {
    ScdlConfig {
        batch_size: 8,
        max_epochs: 3,
        lr: 0.2,
        alpha: 0.9,
        update_cycle: UpdateCycle::Steps(5),
        vocab_hash_buckets: 512,
        net1: NetShape {
            embed_dim: 8,
            window: 1,
            hidden_dim: 12,
        },
        net2: NetShape {
            embed_dim: 6,
            window: 2,
            hidden_dim: 10,
        },
        ..ScdlConfig::default()
    }
}

#[test]
fn select_best_examples() {
    assert_eq!(select_best(&[0.8, 0.7, 0.6, 0.5]).unwrap(), 0);
    assert_eq!(select_best(&[0.4; 4]).unwrap(), 0);
    assert_eq!(select_best(&[0.1, 0.9, 0.9, 0.2]).unwrap(), 1);
    assert!(select_best(&[]).is_err());
    assert!(select_best(&[0.1, f64::NAN]).is_err());
}

#[test]
fn epoch_batches_partition_indices() {
    let batches = epoch_batches(37, 8, 3, 2);
    assert_eq!(batches.len(), 5);
    assert!(batches[..4].iter().all(|b| b.len() == 8));
    let mut all: Vec<usize> = batches.concat();
    all.sort();
    assert_eq!(all, (0..37).collect::<Vec<_>>());
    assert_eq!(batches, epoch_batches(37, 8, 3, 2));
    assert_ne!(batches, epoch_batches(37, 8, 3, 3));
}

#[test]
fn pretrain_zero_epochs_is_fresh_init() {
    let c = small_corpus();
    let config = ScdlConfig {
        pretrain_epochs: 0,
        ..small_config()
    };
    let (a, b) = pretrain(&config, c.vocab.size(), &c.train).unwrap();
    assert_eq!(
        a,
        TaggerParams::init(config.tagger_config(0, c.vocab.size())).unwrap()
    );
    assert_eq!(
        b,
        TaggerParams::init(config.tagger_config(1, c.vocab.size())).unwrap()
    );
    assert!(a.config().structurally_distinct(b.config()));
}

#[test]
fn pretrain_is_deterministic_and_rejects_empty_corpus() {
    let c = small_corpus();
    let config = small_config();
    let first = pretrain(&config, c.vocab.size(), &c.train).unwrap();
    let second = pretrain(&config, c.vocab.size(), &c.train).unwrap();
    assert_eq!(first, second);
    assert!(pretrain(&config, c.vocab.size(), &[]).is_err());
}

#[test]
fn pretrain_loss_falls_on_single_sentence() {
    let c = small_corpus();
    let one = vec![c.train[0].clone()];
    let config = ScdlConfig {
        pretrain_epochs: 30,
        lr: 0.5,
        ..small_config()
    };
    let (_, curves) = pretrain_networks(&config, c.vocab.size(), &one).unwrap();
    for curve in curves {
        assert!(curve.last().unwrap() < &curve[0], "{curve:?}");
    }
}

fn pretrained_pair(c: &SynthCorpus, config: &ScdlConfig) -> TeacherStudentPair {
    let (a, _) = pretrain(config, c.vocab.size(), &c.train).unwrap();
    TeacherStudentPair::new(a, config.alpha).unwrap()
}

#[test]
fn alpha_one_freezes_teacher() {
    let c = small_corpus();
    let config = ScdlConfig {
        alpha: 1.0,
        delta: 0.2,
        ..small_config()
    };
    let mut pair = pretrained_pair(&c, &config);
    let teacher = pair.teacher.clone();
    let student = pair.student.clone();
    let batch: Vec<&AnnotatedSentence> = c.train[..8].iter().collect();
    let drop = config.dropout(0, 0);
    let stats = self_denoise_step(
        &mut pair,
        &batch,
        Track::NoisyI,
        &config,
        0.1,
        drop.as_ref(),
    )
    .unwrap();
    assert!(stats.selected > 0);
    assert_eq!(pair.teacher, teacher);
    assert_ne!(pair.student, student);
}

#[test]
fn full_mask_step_matches_manual_composition() {
    let c = small_corpus();
    let config = ScdlConfig {
        delta: 1e-9,
        ..small_config()
    };
    let pair0 = pretrained_pair(&c, &config);
    let mut sentences: Vec<AnnotatedSentence> = c.train[..8].to_vec();
    for s in &mut sentences {
        s.set_noisy(pair0.teacher.predict_labels(&s.tokens));
    }
    let batch: Vec<&AnnotatedSentence> = sentences.iter().collect();

    let mut pair = pair0.clone();
    let stats = self_denoise_step(&mut pair, &batch, Track::NoisyI, &config, 0.1, None).unwrap();
    assert_eq!(stats.selected, stats.total);

    let mut manual = pair0.clone();
    let dists: Vec<Vec<Distribution>> = batch
        .iter()
        .map(|s| manual.teacher.forward(&s.tokens))
        .collect();
    let soft = manual
        .student
        .loss_soft(
            &batch,
            &dists,
            &SelectionMask::full(&batch),
            Normalization::AllTokens,
        )
        .unwrap();
    manual.student.sgd_step(&soft.gradient, 0.1).unwrap();
    manual.ema_update().unwrap();
    assert_eq!(pair, manual);
}

#[test]
fn hard_labels_train_on_one_hot_noisy_labels() {
    let c = small_corpus();
    let mut config = ScdlConfig {
        delta: 0.3,
        ..small_config()
    };
    config.ablations.insert(Ablation::HardLabels);
    let pair0 = pretrained_pair(&c, &config);
    let batch: Vec<&AnnotatedSentence> = c.train[..8].iter().collect();
    let mut pair = pair0.clone();
    self_denoise_step(&mut pair, &batch, Track::NoisyI, &config, 0.1, None).unwrap();

    let mut manual = pair0.clone();
    let dists: Vec<Vec<Distribution>> = batch
        .iter()
        .map(|s| manual.teacher.forward(&s.tokens))
        .collect();
    let noisy: Vec<&[Tag]> = batch.iter().map(|s| s.noisy_i.as_slice()).collect();
    let mask = token_selection(
        &noisy,
        &dists,
        Confidence::new(0.3).unwrap(),
        SelectionRules::default(),
    )
    .unwrap();
    let n = c.vocab.size();
    let targets: Vec<Vec<Distribution>> = noisy
        .iter()
        .map(|tags| tags.iter().map(|&t| Distribution::one_hot(n, t)).collect())
        .collect();
    let soft = manual
        .student
        .loss_soft(&batch, &targets, &mask, Normalization::AllTokens)
        .unwrap();
    manual.student.sgd_step(&soft.gradient, 0.1).unwrap();
    manual.ema_update().unwrap();
    assert_eq!(pair, manual);
}

#[test]
fn empty_selection_leaves_pair_unchanged() {
    let c = small_corpus();
    let config = ScdlConfig {
        delta: 1.0,
        ..small_config()
    };
    let tc = TaggerConfig {
        vocab_hash_buckets: 64,
        embed_dim: 4,
        window: 1,
        hidden_dim: 4,
        num_tags: c.vocab.size(),
        ..TaggerConfig::default()
    };
    // A zero model predicts uniformly, far below a threshold of 1.
    let mut pair = TeacherStudentPair::new(TaggerParams::zeros(tc).unwrap(), 0.5).unwrap();
    let before = pair.clone();
    let batch: Vec<&AnnotatedSentence> = c.train[..4].iter().collect();
    let stats = self_denoise_step(&mut pair, &batch, Track::NoisyI, &config, 0.1, None).unwrap();
    assert_eq!(stats.selected, 0);
    assert_eq!(stats.loss, 0.0);
    assert_eq!(pair, before);
}

fn state_for(c: &SynthCorpus, config: &ScdlConfig) -> TrainState {
    let (a, b) = pretrain(config, c.vocab.size(), &c.train).unwrap();
    TrainState {
        pairs: vec![
            TeacherStudentPair::new(a, config.alpha).unwrap(),
            TeacherStudentPair::new(b, config.alpha).unwrap(),
        ],
        step: 0,
        optimizer_steps: 0,
        corpus: c.train.clone(),
        history: Vec::new(),
        label_updates: 0,
    }
}

#[test]
fn collaborative_update_cross_writes_teacher_predictions() {
    let c = small_corpus();
    let config = small_config();
    let mut state = state_for(&c, &config);
    collaborative_update(&mut state);
    let t2 = &state.pairs[1].teacher;
    let predicted: Vec<Vec<Tag>> = c
        .train
        .iter()
        .map(|s| t2.predict_labels(&s.tokens))
        .collect();
    let gold: Vec<&[Tag]> = c.train.iter().map(|s| s.gold.as_deref().unwrap()).collect();
    let direct = span_prf1(&predicted, &gold).unwrap();
    assert_eq!(
        refinery_report(&state.corpus, Track::NoisyI).unwrap(),
        direct
    );
    for (s, p) in state.corpus.iter().zip(&predicted) {
        assert_eq!(&s.noisy_i, p);
        assert_eq!(s.noisy_ii, state.pairs[0].teacher.predict_labels(&s.tokens));
        validate_bio(&s.noisy_i).unwrap();
    }
    // A second update with unchanged teachers is a fixed point.
    let snapshot = state.corpus.clone();
    collaborative_update(&mut state);
    assert_eq!(state.corpus, snapshot);
}

#[test]
fn single_network_state_is_never_rewritten() {
    let c = small_corpus();
    let config = small_config();
    let mut state = state_for(&c, &config);
    state.pairs.truncate(1);
    collaborative_update(&mut state);
    assert_eq!(state.corpus, c.train);
    assert_eq!(state.label_updates, 0);
}

#[test]
fn zero_epochs_returns_best_pretrained_model() {
    let c = small_corpus();
    let config = ScdlConfig {
        max_epochs: 0,
        ..small_config()
    };
    let out = train(&config, &c.vocab, &c.train, &c.dev).unwrap();
    let (a, b) = pretrain(&config, c.vocab.size(), &c.train).unwrap();
    let fa = evaluate(&a, &c.dev).unwrap().f1;
    let fb = evaluate(&b, &c.dev).unwrap().f1;
    let expected = if fb > fa { &b } else { &a };
    assert_eq!(&out.best.params, expected);
    assert_eq!(out.best.params, out.baseline.params);
    assert!(out.epochs.is_empty());
}

#[test]
fn parallel_run_matches_sequential_run() {
    let c = small_corpus();
    let config = small_config();
    let seq = train(&config, &c.vocab, &c.train, &c.dev).unwrap();
    let par = train(
        &ScdlConfig {
            parallel: true,
            ..config
        },
        &c.vocab,
        &c.train,
        &c.dev,
    )
    .unwrap();
    assert!(seq.state.label_updates > 0);
    assert_eq!(seq.state.corpus, par.state.corpus);
    assert_eq!(seq.state.pairs, par.state.pairs);
    assert_eq!(seq.best.params, par.best.params);
    assert_eq!(seq.state.history, par.state.history);
}

#[test]
fn train_invariants_hold() {
    let c = small_corpus();
    let config = small_config();
    let mut steps = Vec::new();
    let out = train_with(&config, &c.vocab, &c.train, &c.dev, &mut |epoch, state| {
        steps.push((epoch, state.step));
        for s in &state.corpus {
            validate_bio(&s.noisy_i)?;
            validate_bio(&s.noisy_ii)?;
        }
        Ok(())
    })
    .unwrap();
    assert_eq!(steps.len(), config.max_epochs + 1);
    assert!(steps.windows(2).all(|w| w[1].1 > w[0].1));
    let batches = config.batches_per_epoch(c.train.len()) as u64;
    assert_eq!(out.state.step, batches * config.max_epochs as u64);
    assert_eq!(out.state.label_updates as u64, out.state.step / 5);
    assert!(out.best.dev.f1 >= out.baseline.dev.f1);
    assert_eq!(out.initial_refinery.as_ref().unwrap().len(), 2);
    // 4 dev rows and 2 refinery rows per evaluation.
    assert_eq!(out.state.history.len(), 6 * (config.max_epochs + 1));
}

#[test]
fn dev_without_gold_is_rejected() {
    let c = small_corpus();
    let mut dev = c.dev.clone();
    dev[0].gold = None;
    assert!(train(&small_config(), &c.vocab, &c.train, &dev).is_err());
}

#[test]
fn non_finite_loss_aborts() {
    let c = small_corpus();
    let config = ScdlConfig {
        lr: 1e308,
        ..small_config()
    };
    match train(&config, &c.vocab, &c.train, &c.dev) {
        Err(Error::NonFinite(_)) => {}
        other => panic!(
            "expected non-finite abort, got {:?}",
            other.map(|o| o.best.dev)
        ),
    }
}
