//! Command-line front end. Exit codes: 0 success, 1 usage, configuration or
//! I/O failure, 2 non-finite loss.

mod io;

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::corpus::synth::{self, SynthConfig};
use crate::corpus::{
    distant_annotate, inject_noise, write_alteration_log, write_conll, AmbiguityRule,
    AnnotatedSentence, Gazetteer, TagVocabulary, Track,
};
use crate::error::{Error, Result};
use crate::experiment::{ablation_csv, run_ablations, run_sweep, split_corpus, sweep_csv};
use crate::metrics::{emit_curve, noise_summary, NoiseSummary, SpanScore};
use crate::scdl::{evaluate, pretrain_networks, train_with, Ablation, ModelId, ScdlConfig};
use crate::tagger::Checkpoint;

pub use io::{load_corpus, load_vocabulary, read_text, write_atomic};

#[derive(Parser, Debug)]
#[command(
    name = "scdl",
    version,
    about = "Self-collaborative denoising for noisy NER labels"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Label a gold corpus by gazetteer matching and report the label noise.
    Annotate(AnnotateArgs),
    /// Corrupt k% of the gold mentions of a corpus.
    Inject(InjectArgs),
    /// Pretrain both networks on noisy labels and save them.
    Pretrain(PretrainArgs),
    /// Run the full training loop and persist a run directory.
    Train(TrainArgs),
    /// Score a checkpoint on a gold corpus.
    Eval(EvalArgs),
    /// Train against a range of injected noise ratios.
    Sweep(SweepArgs),
    /// Run the full method and every single-component ablation.
    Ablate(AblateArgs),
    /// Write a synthetic corpus with gazetteer labels.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct ConfigArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Derive every seed from this run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Run the two networks on separate threads.
    #[arg(long)]
    pub parallel: bool,
    /// Comma-separated entity types; scanned from the input files if absent.
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ScdlConfig> {
        let mut config = match &self.config {
            Some(path) => ScdlConfig::parse(&read_text(path)?)?,
            None => ScdlConfig::default(),
        };
        for pair in &self.overrides {
            let (k, v) = pair
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got {pair:?}")))?;
            config.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            config = config.with_seed(seed);
        }
        if self.parallel {
            config.parallel = true;
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum RuleArg {
    First,
    Last,
    Random,
}

impl From<RuleArg> for AmbiguityRule {
    fn from(r: RuleArg) -> Self {
        match r {
            RuleArg::First => AmbiguityRule::First,
            RuleArg::Last => AmbiguityRule::Last,
            RuleArg::Random => AmbiguityRule::Random,
        }
    }
}

#[derive(Args, Debug)]
pub struct AnnotateArgs {
    /// Gold CoNLL corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Gazetteer with `surface<TAB>TYPE[,TYPE...]` lines.
    #[arg(long)]
    pub gazetteer: PathBuf,
    #[arg(long, default_value_t = 1.0)]
    pub coverage: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value_t = RuleArg::First)]
    pub rule: RuleArg,
    /// Output CoNLL file with the distant labels.
    #[arg(long)]
    pub out: PathBuf,
    /// Noise summary file; defaults to `<out>.summary`.
    #[arg(long)]
    pub summary: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<String>,
}

#[derive(Args, Debug)]
pub struct InjectArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Percentage of gold mentions to alter.
    #[arg(long)]
    pub k: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Alteration log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub types: Vec<String>,
}

#[derive(Args, Debug)]
pub struct PretrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Noisy-labelled CoNLL training corpus.
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Noisy-labelled CoNLL training corpus.
    #[arg(long)]
    pub train: PathBuf,
    /// Gold labels aligned with `--train`, for refinery reports.
    #[arg(long)]
    pub train_gold: Option<PathBuf>,
    /// Gold CoNLL dev corpus.
    #[arg(long)]
    pub dev: PathBuf,
    /// Ablations to enable (repeatable or comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub ablate: Vec<String>,
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Gold CoNLL corpus.
    #[arg(long)]
    pub corpus: PathBuf,
    /// Write predictions as CoNLL.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Clean gold CoNLL corpus; split 70/15/15 unless `--dev` is given.
    #[arg(long)]
    pub corpus: PathBuf,
    #[arg(long)]
    pub dev: Option<PathBuf>,
    /// Held-out corpus; defaults to the dev corpus when `--dev` is given.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Noise ratios in percent.
    #[arg(long, value_delimiter = ',', required = true)]
    pub k: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    pub seeds: Vec<u64>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub train_gold: Option<PathBuf>,
    #[arg(long)]
    pub dev: PathBuf,
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2000)]
    pub train: usize,
    #[arg(long, default_value_t = 300)]
    pub dev: usize,
    #[arg(long, default_value_t = 300)]
    pub test: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Fraction of names listed in the gazetteer.
    #[arg(long, default_value_t = 0.6)]
    pub gazetteer_fraction: f64,
    /// Probability that a gazetteer match is applied.
    #[arg(long, default_value_t = 0.85)]
    pub coverage: f64,
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(error: &Error) -> ExitCode {
    match error {
        Error::NonFinite(_) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

pub fn execute(command: &Command) -> Result<()> {
    match command {
        Command::Annotate(a) => cmd_annotate(a).map(|_| ()),
        Command::Inject(a) => cmd_inject(a),
        Command::Pretrain(a) => cmd_pretrain(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a).map(|s| println!("{}", score_line("", &s))),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Ablate(a) => cmd_ablate(a),
        Command::Synth(a) => cmd_synth(a),
    }
}

fn score_line(label: &str, s: &SpanScore) -> String {
    let sep = if label.is_empty() { "" } else { " " };
    format!(
        "{label}{sep}precision={:.6} recall={:.6} f1={:.6} tp={} predicted={} gold={}",
        s.precision, s.recall, s.f1, s.true_positives, s.predicted, s.gold
    )
}

fn summary_text(s: &NoiseSummary) -> String {
    format!(
        "gold_spans={}\ncorrect={}\nincomplete={}\ninaccurate={}\nboundary={}\nspurious={}\nnoisy_spans={}\n",
        s.gold_spans,
        s.correct,
        s.incomplete,
        s.inaccurate,
        s.boundary,
        s.spurious,
        s.noisy_spans()
    )
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Usage(format!("{name} must lie in [0, 1], got {v}")))
    }
}

pub fn cmd_annotate(args: &AnnotateArgs) -> Result<NoiseSummary> {
    check_unit("coverage", args.coverage)?;
    let vocab = load_vocabulary(&args.types, &[&args.corpus])?;
    let mut sentences = load_corpus(&args.corpus, &vocab)?;
    let gazetteer = Gazetteer::parse(&read_text(&args.gazetteer)?, &vocab)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    for s in &mut sentences {
        let tags = distant_annotate(
            &s.tokens,
            &gazetteer,
            args.coverage,
            args.rule.into(),
            &mut rng,
        );
        s.set_noisy(tags);
    }
    let noisy: Vec<&[_]> = sentences.iter().map(|s| s.noisy_i.as_slice()).collect();
    let gold: Vec<&[_]> = sentences
        .iter()
        .map(|s| s.gold.as_deref().unwrap_or_default())
        .collect();
    let summary = noise_summary(&noisy, &gold)?;
    write_atomic(
        &args.out,
        write_conll(&sentences, &vocab, Track::NoisyI)?.as_bytes(),
    )?;
    let summary_path = args
        .summary
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".summary"));
    write_atomic(&summary_path, summary_text(&summary).as_bytes())?;
    print!("{}", summary_text(&summary));
    Ok(summary)
}

pub fn cmd_inject(args: &InjectArgs) -> Result<()> {
    let vocab = load_vocabulary(&args.types, &[&args.corpus])?;
    let sentences = load_corpus(&args.corpus, &vocab)?;
    let outcome = inject_noise(&sentences, vocab.num_entity_types(), args.k, args.seed)?;
    if let Some(w) = &outcome.warning {
        eprintln!("warning: {w}");
    }
    write_atomic(
        &args.out,
        write_conll(&outcome.sentences, &vocab, Track::NoisyI)?.as_bytes(),
    )?;
    let log_path = args
        .log
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".log"));
    write_atomic(
        &log_path,
        write_alteration_log(&outcome.log, &vocab).as_bytes(),
    )?;
    println!("altered {} mentions", outcome.log.len());
    Ok(())
}

/// Loads a noisy training corpus; gold comes from `gold` when given.
fn load_training(
    path: &Path,
    gold: Option<&Path>,
    vocab: &TagVocabulary,
) -> Result<Vec<AnnotatedSentence>> {
    let mut sentences = load_corpus(path, vocab)?;
    let gold_sentences = gold.map(|g| load_corpus(g, vocab)).transpose()?;
    match gold_sentences {
        Some(g) => {
            if g.len() != sentences.len() {
                return Err(Error::Usage(format!(
                    "{} has {} sentences but {} has {}",
                    path.display(),
                    sentences.len(),
                    gold.unwrap_or(path).display(),
                    g.len()
                )));
            }
            for (i, (s, g)) in sentences.iter_mut().zip(g).enumerate() {
                if s.tokens != g.tokens {
                    return Err(Error::Usage(format!("sentence {i}: gold tokens differ")));
                }
                s.gold = g.gold;
            }
        }
        None => sentences.iter_mut().for_each(|s| s.gold = None),
    }
    Ok(sentences)
}

fn write_checkpoint_file(
    path: &Path,
    params: &crate::tagger::TaggerParams,
    vocab: &TagVocabulary,
) -> Result<()> {
    let mut bytes = Vec::new();
    let checkpoint = Checkpoint {
        params: params.clone(),
        entity_types: vocab.entity_types().to_vec(),
    };
    crate::tagger::write_checkpoint(&mut bytes, &checkpoint).map_err(|e| Error::io(path, e))?;
    write_atomic(path, &bytes)
}

pub fn cmd_pretrain(args: &PretrainArgs) -> Result<()> {
    let config = args.config.load()?;
    let vocab = load_vocabulary(&args.config.types, &[&args.train])?;
    let train = load_training(&args.train, None, &vocab)?;
    let (nets, curves) = pretrain_networks(&config, vocab.size(), &train)?;
    write_atomic(&args.out.join("config.txt"), config.to_text().as_bytes())?;
    let mut loss = String::from("epoch,network,loss\n");
    for (n, (net, curve)) in nets.iter().zip(&curves).enumerate() {
        write_checkpoint_file(&args.out.join(format!("net{}.ckpt", n + 1)), net, &vocab)?;
        for (e, l) in curve.iter().enumerate() {
            let _ = writeln!(loss, "{},{},{l}", e + 1, n + 1);
        }
    }
    write_atomic(&args.out.join("pretrain_loss.csv"), loss.as_bytes())
}

fn refinery_text(label: &str, scores: &[SpanScore]) -> String {
    let mut out = String::new();
    for (n, s) in scores.iter().enumerate() {
        let track = Track::noisy(n);
        let _ = writeln!(out, "{}", score_line(&format!("{label} {track}"), s));
    }
    out
}

fn parse_ablations(names: &[String]) -> Result<BTreeSet<Ablation>> {
    names
        .iter()
        .filter(|s| !s.is_empty())
        .map(|s| s.parse())
        .collect()
}

pub fn cmd_train(args: &TrainArgs) -> Result<()> {
    let mut config = args.config.load()?;
    config.ablations.extend(parse_ablations(&args.ablate)?);
    let mut files: Vec<&Path> = vec![&args.train, &args.dev];
    files.extend(args.train_gold.as_deref());
    let vocab = load_vocabulary(&args.config.types, &files)?;
    let train = load_training(&args.train, args.train_gold.as_deref(), &vocab)?;
    let dev = load_corpus(&args.dev, &vocab)?;
    let out = &args.out;
    write_atomic(&out.join("config.txt"), config.to_text().as_bytes())?;

    let every = config.checkpoint_every;
    let outcome = train_with(&config, &vocab, &train, &dev, &mut |epoch, state| {
        if every == 0 || epoch == 0 || epoch % every != 0 {
            return Ok(());
        }
        let dir = out.join("checkpoints").join(format!("epoch_{epoch:03}"));
        for id in ModelId::ORDER {
            if let Some(params) = state.model(id) {
                write_checkpoint_file(&dir.join(format!("{id}.ckpt")), params, &vocab)?;
            }
        }
        Ok(())
    })?;

    let mut metrics = String::new();
    for record in &outcome.state.history {
        metrics.push_str(&serde_json::to_string(record).map_err(|e| Error::Usage(e.to_string()))?);
        metrics.push('\n');
    }
    write_atomic(&out.join("metrics.jsonl"), metrics.as_bytes())?;
    let mut epochs = String::new();
    for e in &outcome.epochs {
        epochs.push_str(&serde_json::to_string(e).map_err(|e| Error::Usage(e.to_string()))?);
        epochs.push('\n');
    }
    write_atomic(&out.join("epochs.jsonl"), epochs.as_bytes())?;
    write_atomic(
        &out.join("curve.csv"),
        emit_curve(&outcome.state.history)?.as_bytes(),
    )?;
    write_checkpoint_file(&out.join("best.ckpt"), &outcome.best.params, &vocab)?;

    let mut report = format!(
        "best model={} epoch={} step={}\n{}\n{}\n",
        outcome.best.model,
        outcome.best.epoch,
        outcome.best.step,
        score_line("best dev", &outcome.best.dev),
        score_line(
            &format!("baseline dev ({})", outcome.baseline.model),
            &outcome.baseline.dev
        ),
    );
    if let (Some(initial), Some(fin)) = (&outcome.initial_refinery, &outcome.final_refinery) {
        report.push_str(&refinery_text("initial", initial));
        report.push_str(&refinery_text("final", fin));
    }
    write_atomic(&out.join("refinery.txt"), report.as_bytes())?;
    for n in 0..outcome.state.pairs.len() {
        let track = Track::noisy(n);
        let text = write_conll(&outcome.state.corpus, &vocab, track)?;
        write_atomic(&out.join(format!("labels_{track}.conll")), text.as_bytes())?;
    }
    print!("{report}");
    Ok(())
}

pub fn cmd_eval(args: &EvalArgs) -> Result<SpanScore> {
    let bytes = std::fs::read(&args.checkpoint).map_err(|e| Error::io(&args.checkpoint, e))?;
    let checkpoint = crate::tagger::read_checkpoint(&mut bytes.as_slice())?;
    let vocab = TagVocabulary::new(&checkpoint.entity_types)?;
    let mut corpus = load_corpus(&args.corpus, &vocab)?;
    let score = evaluate(&checkpoint.params, &corpus)?;
    if let Some(path) = &args.predictions {
        for s in &mut corpus {
            s.set_noisy(checkpoint.params.predict_labels(&s.tokens));
        }
        write_atomic(
            path,
            write_conll(&corpus, &vocab, Track::NoisyI)?.as_bytes(),
        )?;
    }
    Ok(score)
}

pub fn cmd_sweep(args: &SweepArgs) -> Result<()> {
    if args.k.is_empty() {
        return Err(Error::Usage("sweep needs at least one noise ratio".into()));
    }
    let config = args.config.load()?;
    let mut files: Vec<&Path> = vec![&args.corpus];
    files.extend(args.dev.as_deref());
    files.extend(args.test.as_deref());
    let vocab = load_vocabulary(&args.config.types, &files)?;
    let corpus = load_corpus(&args.corpus, &vocab)?;
    let splits = match &args.dev {
        None => split_corpus(&corpus)?,
        Some(dev) => {
            let dev = load_corpus(dev, &vocab)?;
            let test = match &args.test {
                Some(t) => load_corpus(t, &vocab)?,
                None => dev.clone(),
            };
            crate::experiment::Splits {
                train: corpus,
                dev,
                test,
            }
        }
    };
    let rows = run_sweep(
        &config,
        &vocab,
        &splits.train,
        &splits.dev,
        &splits.test,
        &args.k,
        &args.seeds,
    )?;
    let csv = sweep_csv(&rows);
    write_atomic(&args.out, csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_ablate(args: &AblateArgs) -> Result<()> {
    let config = args.config.load()?;
    let mut files: Vec<&Path> = vec![&args.train, &args.dev];
    files.extend(args.train_gold.as_deref());
    files.extend(args.test.as_deref());
    let vocab = load_vocabulary(&args.config.types, &files)?;
    let train = load_training(&args.train, args.train_gold.as_deref(), &vocab)?;
    let dev = load_corpus(&args.dev, &vocab)?;
    let test = args
        .test
        .as_ref()
        .map(|t| load_corpus(t, &vocab))
        .transpose()?;
    let mut variants = vec![None];
    variants.extend(Ablation::ALL.map(Some));
    let runs = run_ablations(&config, &vocab, &train, &dev, test.as_deref(), &variants)?;
    let mut metrics = String::new();
    for run in &runs {
        for record in &run.outcome.state.history {
            metrics
                .push_str(&serde_json::to_string(record).map_err(|e| Error::Usage(e.to_string()))?);
            metrics.push('\n');
        }
    }
    write_atomic(&args.out.join("config.txt"), config.to_text().as_bytes())?;
    write_atomic(&args.out.join("metrics.jsonl"), metrics.as_bytes())?;
    let csv = ablation_csv(&runs);
    write_atomic(&args.out.join("ablations.csv"), csv.as_bytes())?;
    print!("{csv}");
    Ok(())
}

pub fn cmd_synth(args: &SynthArgs) -> Result<()> {
    check_unit("gazetteer fraction", args.gazetteer_fraction)?;
    check_unit("coverage", args.coverage)?;
    let corpus = synth::generate(&SynthConfig {
        train_sentences: args.train,
        dev_sentences: args.dev,
        test_sentences: args.test,
        gazetteer_fraction: args.gazetteer_fraction,
        coverage: args.coverage,
        seed: args.seed,
        ..SynthConfig::default()
    })?;
    let v = &corpus.vocab;
    let out = &args.out;
    write_atomic(
        &out.join("train.conll"),
        write_conll(&corpus.train, v, Track::NoisyI)?.as_bytes(),
    )?;
    write_atomic(
        &out.join("train_gold.conll"),
        write_conll(&corpus.train, v, Track::Gold)?.as_bytes(),
    )?;
    write_atomic(
        &out.join("dev.conll"),
        write_conll(&corpus.dev, v, Track::Gold)?.as_bytes(),
    )?;
    write_atomic(
        &out.join("test.conll"),
        write_conll(&corpus.test, v, Track::Gold)?.as_bytes(),
    )?;
    write_atomic(
        &out.join("gazetteer.txt"),
        corpus.gazetteer.to_text(v).as_bytes(),
    )?;
    Ok(())
}
