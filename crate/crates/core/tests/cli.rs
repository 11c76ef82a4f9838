use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

macro_rules! args {
    ($($a:expr),* $(,)?) => {
        [$(($a).to_string()),*]
    };
}

const FAST: &[&str] = &[
    "--set",
    "max_epochs=1",
    "--set",
    "pretrain_epochs=1",
    "--set",
    "vocab_hash_buckets=1024",
    "--set",
    "net1.hidden_dim=8",
    "--set",
    "net2.hidden_dim=6",
];

fn scdl<S: AsRef<str> + std::fmt::Debug>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scdl"))
        .args(args.iter().map(AsRef::as_ref))
        .output()
        .expect("spawn scdl")
}

fn ok<S: AsRef<str> + std::fmt::Debug>(args: &[S]) -> Output {
    let out = scdl(args);
    assert!(
        out.status.success(),
        "scdl {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: impl AsRef<Path>) -> String {
    p.as_ref().to_str().unwrap().to_owned()
}

fn with_fast<const N: usize>(args: [String; N]) -> Vec<String> {
    let mut args = args.to_vec();
    args.extend(FAST.iter().map(|a| a.to_string()));
    args
}

fn summary_value(text: &str, key: &str) -> usize {
    text.lines()
        .find_map(|l| l.strip_prefix(&format!("{key}=")))
        .unwrap_or_else(|| panic!("{key} missing from summary"))
        .parse()
        .unwrap()
}

fn synth(dir: &Path, train: usize) -> PathBuf {
    let out = dir.join("data");
    ok(&args![
        "synth",
        "--out",
        s(&out),
        "--train",
        train,
        "--dev",
        "30",
        "--test",
        "30"
    ]);
    out
}

#[test]
fn annotate_reports_incomplete_and_inaccurate_mentions() {
    let dir = TempDir::new().unwrap();
    let corpus = dir.path().join("gold.conll");
    fs::write(
        &corpus,
        "Jack\tB-PER\nLucas\tI-PER\nworks\tO\nfor\tO\nAmazon\tB-LOC\n\nParis\tB-LOC\nis\tO\nbig\tO\n",
    )
    .unwrap();
    let gaz = dir.path().join("gaz.txt");
    fs::write(&gaz, "Amazon\tORG,LOC\nParis\tLOC\n").unwrap();
    let out = dir.path().join("noisy.conll");
    ok(&args![
        "annotate",
        "--corpus",
        s(&corpus),
        "--gazetteer",
        s(&gaz),
        "--rule",
        "first",
        "--out",
        s(&out),
        "--types",
        "PER,LOC,ORG",
    ]);
    let summary = fs::read_to_string(dir.path().join("noisy.conll.summary")).unwrap();
    assert_eq!(summary_value(&summary, "incomplete"), 1);
    assert_eq!(summary_value(&summary, "inaccurate"), 1);
    assert_eq!(summary_value(&summary, "correct"), 1);
    let noisy = fs::read_to_string(&out).unwrap();
    assert!(noisy.contains("Jack\tO\nLucas\tO\n"));
    assert!(noisy.contains("Amazon\tB-ORG\n"));
}

#[test]
fn annotate_coverage_extremes() {
    let dir = TempDir::new().unwrap();
    let gold = dir.path().join("gold.conll");
    fs::write(
        &gold,
        "Ada\tB-PER\nLovelace\tI-PER\nvisited\tO\nTurin\tB-LOC\n\n\
         Acme\tB-ORG\nhired\tO\nAda\tB-PER\nLovelace\tI-PER\nin\tO\nOslo\tB-LOC\n",
    )
    .unwrap();
    let exhaustive = dir.path().join("exhaustive.txt");
    fs::write(
        &exhaustive,
        "Ada Lovelace\tPER\nTurin\tLOC\nOslo\tLOC\nAcme\tORG\n",
    )
    .unwrap();

    let full = dir.path().join("full.conll");
    ok(&args![
        "annotate",
        "--corpus",
        s(&gold),
        "--gazetteer",
        s(&exhaustive),
        "--coverage",
        "1",
        "--out",
        s(&full)
    ]);
    let summary = fs::read_to_string(dir.path().join("full.conll.summary")).unwrap();
    assert!(summary_value(&summary, "gold_spans") > 0);
    assert_eq!(summary_value(&summary, "noisy_spans"), 0);

    let none = dir.path().join("none.conll");
    ok(&args![
        "annotate",
        "--corpus",
        s(&gold),
        "--gazetteer",
        s(&exhaustive),
        "--coverage",
        "0",
        "--out",
        s(&none)
    ]);
    let text = fs::read_to_string(&none).unwrap();
    assert!(text
        .lines()
        .filter(|l| !l.is_empty())
        .all(|l| l.ends_with("\tO")));
}

#[test]
fn train_writes_run_directory() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 60);
    let run = dir.path().join("run");
    ok(&with_fast(args![
        "train",
        "--train",
        s(data.join("train.conll")),
        "--train-gold",
        s(data.join("train_gold.conll")),
        "--dev",
        s(data.join("dev.conll")),
        "--out",
        s(&run),
    ]));

    assert!(run.join("config.txt").is_file());
    assert!(run.join("best.ckpt").is_file());
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    assert!(metrics.lines().count() >= 1);
    let checkpoints: Vec<_> = fs::read_dir(run.join("checkpoints/epoch_001"))
        .unwrap()
        .collect();
    assert_eq!(checkpoints.len(), 4);

    let out = ok(&args![
        "eval",
        "--checkpoint",
        s(run.join("best.ckpt")),
        "--corpus",
        s(data.join("test.conll"))
    ]);
    assert!(String::from_utf8_lossy(&out.stdout).contains("f1="));
}

#[test]
fn ablation_tags_metric_records() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 40);
    let run = dir.path().join("run");
    ok(&with_fast(args![
        "train",
        "--train",
        s(data.join("train.conll")),
        "--dev",
        s(data.join("dev.conll")),
        "--out",
        s(&run),
        "--ablate",
        "single_network",
    ]));
    let metrics = fs::read_to_string(run.join("metrics.jsonl")).unwrap();
    for line in metrics.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(record["ablations"], serde_json::json!(["single_network"]));
    }
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 30);
    let train = data.join("train.conll");
    let run = dir.path().join("run");

    let missing = scdl(&args![
        "train",
        "--train",
        s(&train),
        "--dev",
        "/nonexistent/dev.conll",
        "--out",
        s(&run)
    ]);
    assert_eq!(missing.status.code(), Some(1));

    let bad_config = scdl(&args![
        "train",
        "--train",
        s(&train),
        "--dev",
        s(data.join("dev.conll")),
        "--out",
        s(&run),
        "--set",
        "alpha=2",
    ]);
    assert_eq!(bad_config.status.code(), Some(1));

    let unknown = scdl(&args!["train", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(1));

    let diverged = scdl(&with_fast(args![
        "train",
        "--train",
        s(&train),
        "--dev",
        s(data.join("dev.conll")),
        "--out",
        s(&run),
        "--set",
        "lr=1e308",
    ]));
    assert_eq!(
        diverged.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&diverged.stderr)
    );
}

fn sweep_csv(dir: &Path, data: &Path, name: &str) -> String {
    let out = dir.join(name);
    ok(&with_fast(args![
        "sweep",
        "--corpus",
        s(data.join("train_gold.conll")),
        "--dev",
        s(data.join("dev.conll")),
        "--k",
        "30,50",
        "--seeds",
        "0,1,2",
        "--out",
        s(&out),
    ]));
    fs::read_to_string(out).unwrap()
}

#[test]
fn sweep_rows_and_determinism() {
    let dir = TempDir::new().unwrap();
    let data = synth(dir.path(), 40);
    let first = sweep_csv(dir.path(), &data, "a.csv");
    let second = sweep_csv(dir.path(), &data, "b.csv");
    assert_eq!(first, second);
    let rows: Vec<&str> = first.lines().skip(1).collect();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows.iter().filter(|r| r.contains(",scdl,")).count(), 6);

    let empty = scdl(&args![
        "sweep",
        "--corpus",
        s(data.join("train_gold.conll")),
        "--k",
        "",
        "--out",
        "x"
    ]);
    assert_eq!(empty.status.code(), Some(1));
}
