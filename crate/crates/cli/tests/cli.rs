use std::ffi::OsStr;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const TINY: &[&str] = &[
    "--set",
    "corpus.n_reports=70",
    "--set",
    "model.embedding_dim=8",
    "--set",
    "model.encoder_hidden=8",
    "--set",
    "model.decoder_hidden=8",
    "--set",
    "model.background_hidden=8",
    "--set",
    "model.max_decode_len=20",
    "--set",
    "train.max_steps=4",
    "--set",
    "train.eval_every=2",
    "--set",
    "train.batch_size=4",
];

fn factsum<S: AsRef<OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_factsum"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("running factsum")
}

fn ok<S: AsRef<OsStr>>(args: &[S]) -> String {
    let out = factsum(args);
    let shown: Vec<_> = args.iter().map(|a| a.as_ref().to_string_lossy()).collect();
    assert!(
        out.status.success(),
        "factsum {shown:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn gen(dir: &Path, name: &str, seed: &str) -> PathBuf {
    let out = dir.join(name);
    let mut args = vec!["gen-corpus", "--seed", seed, "--out", s(&out)];
    args.extend(&TINY[..2]);
    ok(&args);
    out
}

fn value<'a>(text: &'a str, key: &str) -> Option<&'a str> {
    text.lines().find_map(|l| {
        let (k, v) = l.split_once('=')?;
        (k.trim() == key).then(|| v.trim())
    })
}

#[test]
fn gen_corpus_is_deterministic_per_seed() {
    let dir = TempDir::new().unwrap();
    let a = gen(dir.path(), "a", "5");
    let b = gen(dir.path(), "b", "5");
    let c = gen(dir.path(), "c", "6");
    for split in ["train", "dev", "test"] {
        let f = format!("{split}.jsonl");
        let (ta, tb) = (fs::read(a.join(&f)).unwrap(), fs::read(b.join(&f)).unwrap());
        assert!(!ta.is_empty());
        assert_eq!(ta, tb, "{split} differs for equal seeds");
    }
    assert_ne!(fs::read(a.join("train.jsonl")).unwrap(), fs::read(c.join("train.jsonl")).unwrap());
}

#[test]
fn eval_rejects_a_prediction_count_mismatch() {
    let dir = TempDir::new().unwrap();
    let data = gen(dir.path(), "data", "3");
    let preds = dir.path().join("preds.jsonl");
    fs::write(&preds, "{\"id\":\"x\",\"summary\":\"no acute findings .\"}\n").unwrap();
    let run = dir.path().join("eval");
    let out = factsum(&["--run-dir", s(&run), "eval", "--predictions", s(&preds), "--data", s(&data)]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("counts must match"));
}

#[test]
fn unknown_config_keys_are_usage_errors() {
    let dir = TempDir::new().unwrap();
    let out = factsum(&["gen-corpus", "--out", s(&dir.path().join("x")), "--set", "corpus.bogus=1"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn extract_prints_one_fact_vector_per_line() {
    let dir = TempDir::new().unwrap();
    let input = dir.path().join("summaries.txt");
    fs::write(&input, "small left pleural effusion .\nno acute cardiopulmonary process .\n").unwrap();
    let stdout = ok(&["--run-dir", s(&dir.path().join("x")), "extract", "--input", s(&input)]);
    let lines: Vec<serde_json::Value> = stdout.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["facts"]["pleural_effusion"], "positive");
    assert_eq!(lines[1]["facts"]["no_finding"], "positive");
}

#[test]
fn pipeline_trains_decodes_and_evaluates() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = gen(d, "data", "9");

    let train_dir = d.join("train");
    let mut train = vec!["--run-dir", s(&train_dir), "train", "--data", s(&data)];
    train.extend(TINY);
    ok(&train);
    let model = d.join("train/model");
    assert!(model.join("params.bin").exists());
    let log = fs::read_to_string(d.join("train/train.log")).unwrap();
    assert!(log.contains("dev_rouge_l="), "{log}");

    ok(&[
        "--run-dir",
        s(&d.join("ft")),
        "finetune",
        "--data",
        s(&data),
        "--init",
        s(&model),
        "--mode",
        "rl_rc",
        "--set",
        "train.max_steps=2",
        "--set",
        "train.eval_every=1",
        "--set",
        "train.batch_size=2",
    ]);
    assert!(d.join("ft/model/params.bin").exists());

    for (run, extra) in [("beam", vec!["--beam", "2"]), ("greedy", vec!["--greedy"])] {
        let run_dir = d.join(run);
        let mut args = vec!["--run-dir", s(&run_dir), "decode", "--model", s(&model), "--data", s(&data)];
        args.extend(extra);
        ok(&args);
    }
    let preds = d.join("beam/predictions.jsonl");
    let test_len = fs::read_to_string(data.join("test.jsonl")).unwrap().lines().count();
    assert_eq!(fs::read_to_string(&preds).unwrap().lines().count(), test_len);

    let eval_dir = d.join("eval");
    let metrics = ok(&["--run-dir", s(&eval_dir), "eval", "--predictions", s(&preds), "--data", s(&data)]);
    for key in ["r1", "r2", "rl", "factual_f1"] {
        let v: f64 = value(&metrics, key)
            .unwrap_or_else(|| panic!("missing {key} in {metrics}"))
            .parse()
            .unwrap();
        assert!((0.0..=1.0).contains(&v), "{key}={v}");
    }

    let again = ok(&[
        "--run-dir",
        s(&d.join("eval2")),
        "eval",
        "--from-manifest",
        s(&eval_dir.join("manifest.txt")),
    ]);
    assert_eq!(again, metrics);
    assert_eq!(
        fs::read(eval_dir.join("metrics.txt")).unwrap(),
        fs::read(d.join("eval2/metrics.txt")).unwrap()
    );
}

#[test]
fn analyze_reports_style_statistics() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let data = gen(d, "data", "4");

    let refs = ok(&[
        "--run-dir",
        s(&d.join("refs")),
        "analyze",
        "--data",
        s(&data),
        "--split",
        "train",
        "--ngrams",
        "2",
        "5",
        "--most-frequent-sentence",
        "--build-lm",
    ]);
    assert!(refs.starts_with("rank\tgram\tcount"));
    assert!(value(&refs, "most_frequent_sentence_rate").is_some(), "{refs}");
    let lm = d.join("refs/lm.json");
    assert!(lm.exists());

    let lex = ok(&[
        "--run-dir",
        s(&d.join("lex")),
        "analyze",
        "--data",
        s(&data),
        "--lexrank",
        "--perplexity",
        s(&lm),
        "--sentence-rate",
        "no pneumothorax .",
    ]);
    let ppl: f64 = value(&lex, "perplexity").unwrap().parse().unwrap();
    assert!(ppl.is_finite() && ppl >= 1.0);
    let rate: f64 = value(&lex, "sentence_rate").unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&rate));
    assert!(d.join("lex/lexrank.jsonl").exists());

    let out = factsum(&["--run-dir", s(&d.join("bad")), "analyze"]);
    assert_eq!(out.status.code(), Some(1));
}
