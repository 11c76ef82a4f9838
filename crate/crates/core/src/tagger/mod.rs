//! A small windowed token classifier with analytic gradients.
//!
//! Tokens are hashed into an embedding table; the embeddings of a window of
//! `2 * window + 1` tokens are concatenated and fed through one `tanh` hidden
//! layer and a softmax output layer.

mod checkpoint;

use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{repair_bio, AnnotatedSentence, Tag, Track};
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint};

/// Bucket reserved for positions outside the sentence.
pub const PADDING_BUCKET: usize = 0;

#[derive(Clone, Debug, PartialEq)]
pub struct TaggerConfig {
    pub vocab_hash_buckets: usize,
    pub embed_dim: usize,
    pub window: usize,
    pub hidden_dim: usize,
    pub num_tags: usize,
    pub init_seed: u64,
    pub init_scale: f64,
}

impl Default for TaggerConfig {
    fn default() -> Self {
        TaggerConfig {
            vocab_hash_buckets: 1 << 15,
            embed_dim: 32,
            window: 2,
            hidden_dim: 64,
            num_tags: 9,
            init_seed: 0,
            init_scale: 0.1,
        }
    }
}

/// Parameter blocks in storage order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Block {
    Embedding,
    HiddenWeight,
    HiddenBias,
    OutputWeight,
    OutputBias,
}

impl Block {
    pub const ALL: [Block; 5] = [
        Block::Embedding,
        Block::HiddenWeight,
        Block::HiddenBias,
        Block::OutputWeight,
        Block::OutputBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Embedding => "embedding",
            Block::HiddenWeight => "hidden_weight",
            Block::HiddenBias => "hidden_bias",
            Block::OutputWeight => "output_weight",
            Block::OutputBias => "output_bias",
        }
    }
}

impl TaggerConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_hash_buckets", self.vocab_hash_buckets),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("num_tags", self.num_tags),
        ];
        for (name, value) in dims {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.init_scale.is_finite() && self.init_scale >= 0.0) {
            return Err(Error::Config(
                "init_scale must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.window + 1) * self.embed_dim
    }

    pub fn block_len(&self, block: Block) -> usize {
        match block {
            Block::Embedding => self.vocab_hash_buckets * self.embed_dim,
            Block::HiddenWeight => self.input_dim() * self.hidden_dim,
            Block::HiddenBias => self.hidden_dim,
            Block::OutputWeight => self.hidden_dim * self.num_tags,
            Block::OutputBias => self.num_tags,
        }
    }

    pub fn block_range(&self, block: Block) -> Range<usize> {
        let mut start = 0;
        for b in Block::ALL {
            let len = self.block_len(b);
            if b == block {
                return start..start + len;
            }
            start += len;
        }
        unreachable!()
    }

    pub fn num_params(&self) -> usize {
        Block::ALL.iter().map(|&b| self.block_len(b)).sum()
    }

    /// Same architecture (seeds and init scale may differ).
    pub fn same_shape(&self, other: &TaggerConfig) -> bool {
        self.vocab_hash_buckets == other.vocab_hash_buckets
            && self.embed_dim == other.embed_dim
            && self.window == other.window
            && self.hidden_dim == other.hidden_dim
            && self.num_tags == other.num_tags
    }

    pub fn structurally_distinct(&self, other: &TaggerConfig) -> bool {
        self.embed_dim != other.embed_dim
            || self.window != other.window
            || self.hidden_dim != other.hidden_dim
    }

    /// Embedding bucket of a surface form (FNV-1a), never the padding bucket
    /// unless the table has a single row.
    pub fn bucket(&self, token: &str) -> usize {
        if self.vocab_hash_buckets <= 1 {
            return PADDING_BUCKET;
        }
        let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
        for byte in token.as_bytes() {
            hash ^= u64::from(*byte);
            hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
        }
        1 + (hash % (self.vocab_hash_buckets as u64 - 1)) as usize
    }
}

/// A probability vector over the tag set.
#[derive(Clone, Debug, PartialEq)]
pub struct Distribution {
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn uniform(num_tags: usize) -> Self {
        Distribution {
            probs: vec![1.0 / num_tags as f64; num_tags],
        }
    }

    pub fn one_hot(num_tags: usize, tag: Tag) -> Self {
        let mut probs = vec![0.0; num_tags];
        probs[tag.index()] = 1.0;
        Distribution { probs }
    }

    pub fn max(&self) -> f64 {
        self.probs.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Index of the largest probability; ties go to the lowest code.
    pub fn argmax(&self) -> Tag {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        Tag(best as u16)
    }
}

/// Hard pseudo labels: per-token argmax followed by BIO repair.
pub fn labels_from_distributions(dists: &[Distribution]) -> Vec<Tag> {
    let mut tags: Vec<Tag> = dists.iter().map(Distribution::argmax).collect();
    repair_bio(&mut tags);
    tags
}

/// Flat parameter (or gradient) storage laid out in [`Block`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct TaggerParams {
    config: TaggerConfig,
    values: Vec<f64>,
}

/// Derivative of a loss with respect to every entry of a [`TaggerParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradient {
    config: TaggerConfig,
    values: Vec<f64>,
}

macro_rules! flat_storage {
    ($ty:ident) => {
        impl $ty {
            pub fn config(&self) -> &TaggerConfig {
                &self.config
            }

            pub fn values(&self) -> &[f64] {
                &self.values
            }

            pub fn values_mut(&mut self) -> &mut [f64] {
                &mut self.values
            }

            pub fn block(&self, block: Block) -> &[f64] {
                &self.values[self.config.block_range(block)]
            }

            pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
                let range = self.config.block_range(block);
                &mut self.values[range]
            }

            pub fn len(&self) -> usize {
                self.values.len()
            }

            pub fn is_empty(&self) -> bool {
                self.values.is_empty()
            }

            pub fn is_finite(&self) -> bool {
                self.values.iter().all(|v| v.is_finite())
            }
        }
    };
}

flat_storage!(TaggerParams);
flat_storage!(Gradient);

impl Gradient {
    pub fn zeros(config: &TaggerConfig) -> Self {
        Gradient {
            config: config.clone(),
            values: vec![0.0; config.num_params()],
        }
    }

    pub fn from_values(config: &TaggerConfig, values: Vec<f64>) -> Result<Self> {
        if values.len() != config.num_params() {
            return Err(Error::Shape(format!(
                "{} gradient values for {} parameters",
                values.len(),
                config.num_params()
            )));
        }
        Ok(Gradient {
            config: config.clone(),
            values,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Whether the loss averages over every batch token or only the selected ones.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Normalization {
    #[default]
    AllTokens,
    SelectedTokens,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossStatus {
    Ok,
    NoTokensSelected,
}

#[derive(Clone, Debug)]
pub struct SoftLoss {
    pub loss: f64,
    pub gradient: Gradient,
    pub status: LossStatus,
    pub selected: usize,
    pub total: usize,
}

/// Supervision for one token.
enum Target<'a> {
    Hard(Tag),
    Soft(&'a [f64]),
}

/// Training-time dropout with masks derived from a counter hash, so a mask
/// depends only on `(seed, sentence, token, unit)` and not on call order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dropout {
    /// Probability of zeroing a hidden unit.
    pub hidden: f64,
    /// Probability of replacing a token by the padding bucket.
    pub word: f64,
    pub seed: u64,
}

impl Dropout {
    pub fn validate(&self) -> Result<()> {
        for (name, p) in [("hidden", self.hidden), ("word", self.word)] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} dropout {p} outside [0, 1)")));
            }
        }
        Ok(())
    }

    fn uniform(&self, sentence: usize, token: usize, unit: usize) -> f64 {
        let mut x = self.seed;
        for v in [sentence as u64, token as u64, unit as u64] {
            x = splitmix64(x ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15));
        }
        (x >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Whether token `token` of batch sentence `sentence` is kept.
    pub fn keeps_word(&self, sentence: usize, token: usize) -> bool {
        self.word == 0.0 || self.uniform(sentence, token, usize::MAX) >= self.word
    }

    /// Scale applied to hidden unit `unit`: 0 when dropped, `1/(1-p)` when kept.
    pub fn hidden_scale(&self, sentence: usize, token: usize, unit: usize) -> f64 {
        if self.hidden == 0.0 {
            1.0
        } else if self.uniform(sentence, token, unit) >= self.hidden {
            1.0 / (1.0 - self.hidden)
        } else {
            0.0
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Dropout applied to one sentence of a batch.
#[derive(Clone, Copy)]
struct SentenceDropout<'a> {
    dropout: &'a Dropout,
    sentence: usize,
}

struct Activations {
    /// Bucket of each window slot, per token.
    windows: Vec<usize>,
    /// Hidden activations after dropout.
    hidden: Vec<f64>,
    /// Derivative of each dropped-out hidden unit with respect to its
    /// pre-activation.
    hidden_grad: Vec<f64>,
    log_probs: Vec<f64>,
}

impl TaggerParams {
    pub fn zeros(config: TaggerConfig) -> Result<Self> {
        config.validate()?;
        let values = vec![0.0; config.num_params()];
        Ok(TaggerParams { config, values })
    }

    /// Uniform initialization in `[-init_scale, init_scale]` from `init_seed`.
    pub fn init(config: TaggerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let scale = config.init_scale;
        let values = (0..config.num_params())
            .map(|_| {
                if scale == 0.0 {
                    0.0
                } else {
                    rng.gen_range(-scale..=scale)
                }
            })
            .collect();
        Ok(TaggerParams { config, values })
    }

    pub fn from_values(config: TaggerConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        if values.len() != config.num_params() {
            return Err(Error::Shape(format!(
                "{} values for {} parameters",
                values.len(),
                config.num_params()
            )));
        }
        Ok(TaggerParams { config, values })
    }

    pub fn check_shape(&self, other: &TaggerConfig) -> Result<()> {
        if self.config.same_shape(other) && self.values.len() == other.num_params() {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "parameter shapes differ: {:?} vs {:?}",
                self.config, other
            )))
        }
    }

    fn activations(&self, tokens: &[String], dropout: Option<SentenceDropout<'_>>) -> Activations {
        let cfg = &self.config;
        let (e, w, h, c) = (cfg.embed_dim, cfg.window, cfg.hidden_dim, cfg.num_tags);
        let slots = 2 * w + 1;
        let n = tokens.len();
        let ids: Vec<usize> = tokens
            .iter()
            .enumerate()
            .map(|(j, t)| match dropout {
                Some(d) if !d.dropout.keeps_word(d.sentence, j) => PADDING_BUCKET,
                _ => cfg.bucket(t),
            })
            .collect();

        let emb = self.block(Block::Embedding);
        let w1 = self.block(Block::HiddenWeight);
        let b1 = self.block(Block::HiddenBias);
        let w2 = self.block(Block::OutputWeight);
        let b2 = self.block(Block::OutputBias);

        let mut windows = Vec::with_capacity(n * slots);
        let mut hidden = Vec::with_capacity(n * h);
        let mut hidden_grad = Vec::with_capacity(n * h);
        let mut log_probs = Vec::with_capacity(n * c);
        let mut pre = vec![0.0; h];
        let mut logits = vec![0.0; c];
        for j in 0..n {
            pre.copy_from_slice(b1);
            for slot in 0..slots {
                let pos = j as isize + slot as isize - w as isize;
                let id = if pos < 0 || pos >= n as isize {
                    PADDING_BUCKET
                } else {
                    ids[pos as usize]
                };
                windows.push(id);
                let x = &emb[id * e..(id + 1) * e];
                for (d, &xv) in x.iter().enumerate() {
                    let row = &w1[(slot * e + d) * h..(slot * e + d + 1) * h];
                    for (acc, &wv) in pre.iter_mut().zip(row) {
                        *acc += xv * wv;
                    }
                }
            }
            let start = hidden.len();
            for (k, a) in pre.iter().enumerate() {
                let t = a.tanh();
                let keep = dropout.map_or(1.0, |d| d.dropout.hidden_scale(d.sentence, j, k));
                hidden.push(t * keep);
                hidden_grad.push((1.0 - t * t) * keep);
            }
            let hj = &hidden[start..];
            logits.copy_from_slice(b2);
            for (k, &hv) in hj.iter().enumerate() {
                let row = &w2[k * c..(k + 1) * c];
                for (z, &wv) in logits.iter_mut().zip(row) {
                    *z += hv * wv;
                }
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            log_probs.extend(logits.iter().map(|z| z - lse));
        }
        Activations {
            windows,
            hidden,
            hidden_grad,
            log_probs,
        }
    }

    /// Per-token tag distributions.
    pub fn forward(&self, tokens: &[String]) -> Vec<Distribution> {
        let c = self.config.num_tags;
        let acts = self.activations(tokens, None);
        acts.log_probs
            .chunks(c)
            .map(|lp| Distribution {
                probs: lp.iter().map(|v| v.exp()).collect(),
            })
            .collect()
    }

    /// Argmax tags (lowest code on ties), BIO-repaired.
    pub fn predict_labels(&self, tokens: &[String]) -> Vec<Tag> {
        labels_from_distributions(&self.forward(tokens))
    }

    /// Adds `scale *` the loss gradient of one sentence into `grad` and
    /// returns the unscaled loss sum.
    fn backprop_sentence<'t>(
        &self,
        tokens: &[String],
        target: &dyn Fn(usize) -> Option<Target<'t>>,
        scale: f64,
        dropout: Option<SentenceDropout<'_>>,
        grad: &mut [f64],
    ) -> f64 {
        let cfg = &self.config;
        let (e, h, c) = (cfg.embed_dim, cfg.hidden_dim, cfg.num_tags);
        let slots = 2 * cfg.window + 1;
        let acts = self.activations(tokens, dropout);

        let r_emb = cfg.block_range(Block::Embedding);
        let r_w1 = cfg.block_range(Block::HiddenWeight);
        let r_b1 = cfg.block_range(Block::HiddenBias);
        let r_w2 = cfg.block_range(Block::OutputWeight);
        let r_b2 = cfg.block_range(Block::OutputBias);
        let emb = &self.values[r_emb.clone()];
        let w1 = &self.values[r_w1.clone()];
        let w2 = &self.values[r_w2.clone()];

        let mut loss = 0.0;
        let mut dz = vec![0.0; c];
        let mut dh = vec![0.0; h];
        for j in 0..tokens.len() {
            let Some(t) = target(j) else { continue };
            let lp = &acts.log_probs[j * c..(j + 1) * c];
            match t {
                Target::Hard(y) => {
                    loss -= lp[y.index()];
                    for (k, d) in dz.iter_mut().enumerate() {
                        let q = if k == y.index() { 1.0 } else { 0.0 };
                        *d = (1.0 * lp[k].exp() - q) * scale;
                    }
                }
                Target::Soft(q) => {
                    let mass: f64 = q.iter().sum();
                    for (k, d) in dz.iter_mut().enumerate() {
                        if q[k] != 0.0 {
                            loss -= q[k] * lp[k];
                        }
                        *d = (mass * lp[k].exp() - q[k]) * scale;
                    }
                }
            }
            let hj = &acts.hidden[j * h..(j + 1) * h];
            let hg = &acts.hidden_grad[j * h..(j + 1) * h];

            let gb2 = &mut grad[r_b2.clone()];
            for (g, &d) in gb2.iter_mut().zip(&dz) {
                *g += d;
            }
            let gw2 = &mut grad[r_w2.clone()];
            for k in 0..h {
                let row = &mut gw2[k * c..(k + 1) * c];
                for (g, &d) in row.iter_mut().zip(&dz) {
                    *g += hj[k] * d;
                }
                let wrow = &w2[k * c..(k + 1) * c];
                let back: f64 = wrow.iter().zip(&dz).map(|(w, d)| w * d).sum();
                dh[k] = back * hg[k];
            }
            let gb1 = &mut grad[r_b1.clone()];
            for (g, &d) in gb1.iter_mut().zip(&dh) {
                *g += d;
            }
            let window = &acts.windows[j * slots..(j + 1) * slots];
            for (slot, &id) in window.iter().enumerate() {
                let x = &emb[id * e..(id + 1) * e];
                for d in 0..e {
                    let in_idx = slot * e + d;
                    let gw1 = &mut grad[r_w1.start + in_idx * h..r_w1.start + (in_idx + 1) * h];
                    for (g, &dv) in gw1.iter_mut().zip(&dh) {
                        *g += x[d] * dv;
                    }
                    let wrow = &w1[in_idx * h..(in_idx + 1) * h];
                    let dx: f64 = wrow.iter().zip(&dh).map(|(w, dv)| w * dv).sum();
                    grad[r_emb.start + id * e + d] += dx;
                }
            }
        }
        loss
    }

    /// Mean token cross entropy against the hard labels of `track`.
    pub fn loss_hard(&self, batch: &[&AnnotatedSentence], track: Track) -> Result<(f64, Gradient)> {
        self.loss_hard_with(batch, track, None)
    }

    /// [`loss_hard`](Self::loss_hard) with the student forward pass under
    /// `dropout`.
    pub fn loss_hard_with(
        &self,
        batch: &[&AnnotatedSentence],
        track: Track,
        dropout: Option<&Dropout>,
    ) -> Result<(f64, Gradient)> {
        if let Some(d) = dropout {
            d.validate()?;
        }
        let total: usize = batch.iter().map(|s| s.len()).sum();
        if total == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut labels = Vec::with_capacity(batch.len());
        for (i, s) in batch.iter().enumerate() {
            let tags = s
                .track(track)
                .ok_or_else(|| Error::Usage(format!("batch sentence {i} has no {track} track")))?;
            if tags.len() != s.len() {
                return Err(Error::Shape(format!(
                    "batch sentence {i}: track length differs"
                )));
            }
            if let Some(bad) = tags.iter().find(|t| t.index() >= self.config.num_tags) {
                return Err(Error::Shape(format!(
                    "tag code {} outside model range",
                    bad.0
                )));
            }
            labels.push(tags);
        }
        let scale = 1.0 / total as f64;
        let mut grad = Gradient::zeros(&self.config);
        let mut sum = 0.0;
        for (i, (s, tags)) in batch.iter().zip(labels).enumerate() {
            let target = |j: usize| Some(Target::Hard(tags[j]));
            let drop = dropout.map(|dropout| SentenceDropout {
                dropout,
                sentence: i,
            });
            sum += self.backprop_sentence(&s.tokens, &target, scale, drop, &mut grad.values);
        }
        Ok((sum * scale, grad))
    }

    /// Masked soft-label cross entropy against `teacher` distributions.
    pub fn loss_soft(
        &self,
        batch: &[&AnnotatedSentence],
        teacher: &[Vec<Distribution>],
        mask: &crate::denoise::SelectionMask,
        normalization: Normalization,
    ) -> Result<SoftLoss> {
        self.loss_soft_with(batch, teacher, mask, normalization, None)
    }

    /// [`loss_soft`](Self::loss_soft) with the student forward pass under
    /// `dropout`.
    pub fn loss_soft_with(
        &self,
        batch: &[&AnnotatedSentence],
        teacher: &[Vec<Distribution>],
        mask: &crate::denoise::SelectionMask,
        normalization: Normalization,
        dropout: Option<&Dropout>,
    ) -> Result<SoftLoss> {
        if let Some(d) = dropout {
            d.validate()?;
        }
        if teacher.len() != batch.len() || mask.num_sentences() != batch.len() {
            return Err(Error::Shape("batch, teacher and mask sizes differ".into()));
        }
        let total: usize = batch.iter().map(|s| s.len()).sum();
        if total == 0 {
            return Err(Error::EmptyBatch);
        }
        for (i, (s, dists)) in batch.iter().zip(teacher).enumerate() {
            if dists.len() != s.len() || mask.sentence(i).len() != s.len() {
                return Err(Error::Shape(format!(
                    "batch sentence {i}: alignment differs"
                )));
            }
            if dists.iter().any(|d| d.probs.len() != self.config.num_tags) {
                return Err(Error::Shape(format!(
                    "batch sentence {i}: distribution width"
                )));
            }
        }
        let selected = mask.count();
        let mut grad = Gradient::zeros(&self.config);
        if selected == 0 {
            return Ok(SoftLoss {
                loss: 0.0,
                gradient: grad,
                status: LossStatus::NoTokensSelected,
                selected,
                total,
            });
        }
        let z = match normalization {
            Normalization::AllTokens => total,
            Normalization::SelectedTokens => selected,
        };
        let scale = 1.0 / z as f64;
        let mut sum = 0.0;
        for (i, (s, dists)) in batch.iter().zip(teacher).enumerate() {
            let row = mask.sentence(i);
            let target = |j: usize| row[j].then(|| Target::Soft(&dists[j].probs));
            let drop = dropout.map(|dropout| SentenceDropout {
                dropout,
                sentence: i,
            });
            sum += self.backprop_sentence(&s.tokens, &target, scale, drop, &mut grad.values);
        }
        Ok(SoftLoss {
            loss: sum * scale,
            gradient: grad,
            status: LossStatus::Ok,
            selected,
            total,
        })
    }

    /// `params -= lr * grad`.
    pub fn sgd_step(&mut self, grad: &Gradient, lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Usage(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.check_shape(&grad.config)?;
        for (p, g) in self.values.iter_mut().zip(&grad.values) {
            *p -= lr * g;
        }
        Ok(())
    }
}
