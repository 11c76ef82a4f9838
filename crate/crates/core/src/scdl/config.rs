use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::tagger::{Dropout, Normalization, TaggerConfig};

/// Components that can be switched off for ablation runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Ablation {
    NoConsistency,
    NoConfidence,
    SingleNetwork,
    NoTeachers,
    HardLabels,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [
        Ablation::NoConsistency,
        Ablation::NoConfidence,
        Ablation::SingleNetwork,
        Ablation::NoTeachers,
        Ablation::HardLabels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoConsistency => "no_consistency",
            Ablation::NoConfidence => "no_confidence",
            Ablation::SingleNetwork => "single_network",
            Ablation::NoTeachers => "no_teachers",
            Ablation::HardLabels => "hard_labels",
        }
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?}")))
    }
}

/// Architecture of one tagger network.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub embed_dim: usize,
    pub window: usize,
    pub hidden_dim: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateCycle {
    /// Seven epochs' worth of batches for the loaded corpus.
    Auto,
    Steps(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScdlConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub alpha: f64,
    pub delta: f64,
    pub update_cycle: UpdateCycle,
    pub pretrain_epochs: usize,
    /// Initialization seeds of networks 1 and 2.
    pub seeds: (u64, u64),
    /// Seed of the per-epoch batch shuffle shared by both networks.
    pub shuffle_seed: u64,
    pub normalize_by_selected: bool,
    pub ablations: BTreeSet<Ablation>,
    /// Count pretraining batches toward the first collaborative update.
    pub cycle_counts_pretrain: bool,
    /// Linear learning-rate warmup length in optimizer steps; 0 disables it.
    pub warmup_steps: usize,
    /// Run the two networks on separate threads between label exchanges.
    pub parallel: bool,
    pub vocab_hash_buckets: usize,
    pub init_scale: f64,
    /// Hidden-unit dropout of every student forward pass during training.
    pub dropout_hidden: f64,
    /// Word dropout of every student forward pass during training.
    pub dropout_word: f64,
    pub net1: NetShape,
    pub net2: NetShape,
    /// Write per-model checkpoints every this many epochs (0 disables them).
    pub checkpoint_every: usize,
}

impl Default for ScdlConfig {
    fn default() -> Self {
        ScdlConfig {
            batch_size: 16,
            max_epochs: 20,
            lr: 1.0,
            alpha: 0.995,
            delta: 0.9,
            update_cycle: UpdateCycle::Auto,
            pretrain_epochs: 8,
            seeds: (1, 2),
            shuffle_seed: 0,
            normalize_by_selected: false,
            ablations: BTreeSet::new(),
            cycle_counts_pretrain: false,
            warmup_steps: 0,
            parallel: false,
            vocab_hash_buckets: 1 << 15,
            init_scale: 0.1,
            dropout_hidden: 0.3,
            dropout_word: 0.3,
            net1: NetShape {
                embed_dim: 32,
                window: 2,
                hidden_dim: 64,
            },
            net2: NetShape {
                embed_dim: 24,
                window: 2,
                hidden_dim: 48,
            },
            checkpoint_every: 1,
        }
    }
}

impl ScdlConfig {
    pub fn has(&self, ablation: Ablation) -> bool {
        self.ablations.contains(&ablation)
    }

    pub fn num_networks(&self) -> usize {
        if self.has(Ablation::SingleNetwork) {
            1
        } else {
            2
        }
    }

    /// EMA coefficient actually applied; 0 when teachers are ablated so the
    /// teacher always equals the current student.
    pub fn effective_alpha(&self) -> f64 {
        if self.has(Ablation::NoTeachers) {
            0.0
        } else {
            self.alpha
        }
    }

    pub fn normalization(&self) -> Normalization {
        if self.normalize_by_selected {
            Normalization::SelectedTokens
        } else {
            Normalization::AllTokens
        }
    }

    pub fn tagger_config(&self, network: usize, num_tags: usize) -> TaggerConfig {
        let (shape, seed) = if network == 0 {
            (self.net1, self.seeds.0)
        } else {
            (self.net2, self.seeds.1)
        };
        TaggerConfig {
            vocab_hash_buckets: self.vocab_hash_buckets,
            embed_dim: shape.embed_dim,
            window: shape.window,
            hidden_dim: shape.hidden_dim,
            num_tags,
            init_seed: seed,
            init_scale: self.init_scale,
        }
    }

    /// Dropout of network `network` at optimizer step `k`, if enabled.
    pub fn dropout(&self, network: usize, k: u64) -> Option<Dropout> {
        if self.dropout_hidden == 0.0 && self.dropout_word == 0.0 {
            return None;
        }
        let base = if network == 0 {
            self.seeds.0
        } else {
            self.seeds.1
        };
        Some(Dropout {
            hidden: self.dropout_hidden,
            word: self.dropout_word,
            seed: base.rotate_left(32) ^ k,
        })
    }

    pub fn batches_per_epoch(&self, num_sentences: usize) -> usize {
        num_sentences.div_ceil(self.batch_size)
    }

    pub fn resolved_update_cycle(&self, num_sentences: usize) -> usize {
        match self.update_cycle {
            UpdateCycle::Steps(n) => n,
            UpdateCycle::Auto => (7 * self.batches_per_epoch(num_sentences)).max(1),
        }
    }

    /// Learning rate of optimizer step `k` (0-based).
    pub fn lr_at(&self, k: u64) -> f64 {
        if self.warmup_steps == 0 {
            self.lr
        } else {
            self.lr * ((k + 1) as f64 / self.warmup_steps as f64).min(1.0)
        }
    }

    /// Derives every seed from one run seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.shuffle_seed = seed;
        self.seeds = (
            seed.wrapping_mul(2).wrapping_add(1),
            seed.wrapping_mul(2).wrapping_add(2),
        );
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad("lr must be positive");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return bad("delta must lie in (0, 1]");
        }
        if self.update_cycle == UpdateCycle::Steps(0) {
            return bad("update_cycle must be at least 1");
        }
        if self.pretrain_epochs == 0 && self.max_epochs == 0 {
            log::warn!("no training epochs configured");
        }
        for (i, shape) in [self.net1, self.net2].iter().enumerate() {
            if shape.embed_dim == 0 || shape.hidden_dim == 0 {
                return Err(Error::Config(format!(
                    "net{} dimensions must be at least 1",
                    i + 1
                )));
            }
        }
        if self.vocab_hash_buckets == 0 {
            return bad("vocab_hash_buckets must be at least 1");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be finite and non-negative");
        }
        for (name, p) in [
            ("dropout_hidden", self.dropout_hidden),
            ("dropout_word", self.dropout_word),
        ] {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }

    /// Flat `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = ScdlConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", idx + 1)))?;
            config
                .set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", idx + 1)))?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
        }
        fn flag(key: &str, value: &str) -> Result<bool> {
            match value {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(Error::Config(format!(
                    "invalid boolean {value:?} for {key}"
                ))),
            }
        }
        match key {
            "batch_size" => self.batch_size = num(key, value)?,
            "max_epochs" => self.max_epochs = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "alpha" => self.alpha = num(key, value)?,
            "delta" => self.delta = num(key, value)?,
            "update_cycle" => {
                self.update_cycle = if value == "auto" {
                    UpdateCycle::Auto
                } else {
                    UpdateCycle::Steps(num(key, value)?)
                }
            }
            "pretrain_epochs" => self.pretrain_epochs = num(key, value)?,
            "seeds" => {
                let (a, b) = value
                    .split_once(',')
                    .ok_or_else(|| Error::Config("seeds expects two integers a,b".into()))?;
                self.seeds = (num(key, a.trim())?, num(key, b.trim())?);
            }
            "shuffle_seed" => self.shuffle_seed = num(key, value)?,
            "normalize_by_selected" => self.normalize_by_selected = flag(key, value)?,
            "ablations" => {
                self.ablations = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(Ablation::from_str)
                    .collect::<Result<_>>()?
            }
            "cycle_counts_pretrain" => self.cycle_counts_pretrain = flag(key, value)?,
            "warmup_steps" => self.warmup_steps = num(key, value)?,
            "parallel" => self.parallel = flag(key, value)?,
            "vocab_hash_buckets" => self.vocab_hash_buckets = num(key, value)?,
            "init_scale" => self.init_scale = num(key, value)?,
            "dropout_hidden" => self.dropout_hidden = num(key, value)?,
            "dropout_word" => self.dropout_word = num(key, value)?,
            "net1.embed_dim" => self.net1.embed_dim = num(key, value)?,
            "net1.window" => self.net1.window = num(key, value)?,
            "net1.hidden_dim" => self.net1.hidden_dim = num(key, value)?,
            "net2.embed_dim" => self.net2.embed_dim = num(key, value)?,
            "net2.window" => self.net2.window = num(key, value)?,
            "net2.hidden_dim" => self.net2.hidden_dim = num(key, value)?,
            "checkpoint_every" => self.checkpoint_every = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let cycle = match self.update_cycle {
            UpdateCycle::Auto => "auto".to_string(),
            UpdateCycle::Steps(n) => n.to_string(),
        };
        let ablations: Vec<&str> = self.ablations.iter().map(|a| a.name()).collect();
        let lines = [
            format!("batch_size={}", self.batch_size),
            format!("max_epochs={}", self.max_epochs),
            format!("lr={}", self.lr),
            format!("alpha={}", self.alpha),
            format!("delta={}", self.delta),
            format!("update_cycle={cycle}"),
            format!("pretrain_epochs={}", self.pretrain_epochs),
            format!("seeds={},{}", self.seeds.0, self.seeds.1),
            format!("shuffle_seed={}", self.shuffle_seed),
            format!("normalize_by_selected={}", self.normalize_by_selected),
            format!("ablations={}", ablations.join(",")),
            format!("cycle_counts_pretrain={}", self.cycle_counts_pretrain),
            format!("warmup_steps={}", self.warmup_steps),
            format!("parallel={}", self.parallel),
            format!("vocab_hash_buckets={}", self.vocab_hash_buckets),
            format!("init_scale={}", self.init_scale),
            format!("dropout_hidden={}", self.dropout_hidden),
            format!("dropout_word={}", self.dropout_word),
            format!("net1.embed_dim={}", self.net1.embed_dim),
            format!("net1.window={}", self.net1.window),
            format!("net1.hidden_dim={}", self.net1.hidden_dim),
            format!("net2.embed_dim={}", self.net2.embed_dim),
            format!("net2.window={}", self.net2.window),
            format!("net2.hidden_dim={}", self.net2.hidden_dim),
            format!("checkpoint_every={}", self.checkpoint_every),
        ];
        let mut out = lines.join("\n");
        out.push('\n');
        out
    }
}
