use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use factsum::analysis::{
    lexrank_summary, most_frequent_sentence, ngram_profile, perplexity, sentence_rate, LexRankConfig, TrigramLM,
};
use factsum::corpus::{generate_corpus, load_dataset, Report, SplitName};
use factsum::factext::{extract_facts, tokenize};
use factsum::metrics::evaluate_summaries;
use factsum::training::{beam_search, fit, greedy_decode, TrainMode};
use factsum::vocab::build_vocab;
use factsum::{RuleSet, Summarizer};
use rayon::prelude::*;

use crate::config::RunConfig;
use crate::run::{read_manifest, read_predictions, write_predictions, Prediction, RunDir};
use crate::{Cli, Command, ConfigArgs};

pub fn dispatch(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be >= 1");
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    let name = cli.command.name();
    match cli.command {
        Command::GenCorpus { cfg, seed, out } => gen_corpus(cli.run_dir.or(out.clone()), name, &cfg, seed, out),
        Command::Train { cfg, data } => train(cli.run_dir, name, &cfg, &data),
        Command::Finetune { cfg, data, init, mode } => finetune(cli.run_dir, name, &cfg, &data, &init, &mode),
        Command::Decode {
            model,
            data,
            split,
            beam,
            greedy,
        } => decode(cli.run_dir, name, &model, &data, &split, if greedy { None } else { Some(beam) }),
        Command::Extract { input, rules } => extract(cli.run_dir, name, &input, rules.as_deref()),
        Command::Eval {
            predictions,
            data,
            split,
            rules,
            from_manifest,
        } => match from_manifest {
            Some(m) => eval_from_manifest(cli.run_dir, name, &m),
            None => eval(
                cli.run_dir,
                name,
                predictions.as_deref().expect("required by clap"),
                data.as_deref().expect("required by clap"),
                &split,
                rules.as_deref(),
            ),
        },
        Command::Analyze {
            summaries,
            data,
            split,
            ngrams,
            sentence_rate,
            most_frequent_sentence,
            perplexity,
            build_lm,
            add_k,
            lexrank,
        } => analyze(
            cli.run_dir,
            name,
            AnalyzeArgs {
                summaries,
                data,
                split,
                ngrams,
                sentence_rate,
                most_frequent_sentence,
                perplexity,
                build_lm,
                add_k,
                lexrank,
            },
        ),
    }
}

fn load_config(args: &ConfigArgs) -> Result<RunConfig> {
    RunConfig::load(args.config.as_deref(), &args.set)
}

fn load_rules(path: Option<&Path>) -> Result<RuleSet> {
    Ok(match path {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::default_rules(),
    })
}

fn load_split(data: &Path, split: &str) -> Result<Vec<Report>> {
    let name: SplitName = split.parse()?;
    Ok(load_dataset(&data.join(format!("{name}.jsonl")), name)?.reports)
}

fn gen_corpus(
    run_dir: Option<PathBuf>,
    name: &str,
    args: &ConfigArgs,
    seed: Option<u64>,
    out: Option<PathBuf>,
) -> Result<()> {
    let mut cfg = load_config(args)?;
    if let Some(s) = seed {
        cfg.corpus.seed = s;
    }
    cfg.validate()?;
    let mut run = RunDir::create(run_dir, name)?;
    let out = out.unwrap_or_else(|| run.path.clone());
    let corpus = generate_corpus(&cfg.corpus)?;
    corpus.save_dir(&out)?;
    run.write_text("config", "config.resolved", &cfg.render())?;
    run.param("out", out.display());
    for s in corpus.splits() {
        log::info!("{}: {} reports", s.name, s.reports.len());
    }
    run.finish()
}

fn append_log(path: &Path) -> Result<impl FnMut(&str)> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    Ok(move |line: &str| {
        if let Err(e) = writeln!(file, "{line}") {
            log::warn!("training log write failed: {e}");
        }
    })
}

fn run_fit(run: &mut RunDir, model: &mut Summarizer, cfg: &RunConfig, corpus_dir: &Path) -> Result<()> {
    let train = load_split(corpus_dir, "train")?;
    let dev = load_split(corpus_dir, "dev")?;
    let rules = RuleSet::default_rules();
    let mut log_line = append_log(&run.file("train.log"))?;
    let outcome = fit(model, &train, &dev, &cfg.train, cfg.reward, &rules, |rec| {
        log_line(&rec.to_line());
        if let Some(d) = rec.dev {
            log::info!(
                "step {} loss {:.4} dev metric {:.4} (rouge-l {:.4}, factual f1 {:.4})",
                rec.step,
                rec.stats.loss,
                d.metric(),
                d.rouge_l,
                d.factual_f1
            );
        }
    })?;
    run.output("log", "train.log");
    model.save(&run.file("model"))?;
    run.output("model", "model");
    let summary = factsum::kv::render_flat(&[
        ("best_dev_metric".to_string(), format!("{:.6}", outcome.best_metric)),
        ("best_step".to_string(), outcome.best_step.to_string()),
        ("steps".to_string(), outcome.steps.to_string()),
        ("lr_decays".to_string(), outcome.decays.to_string()),
    ]);
    run.write_text("summary", "train_summary.txt", &summary)?;
    log::info!(
        "best dev metric {:.4} at step {} ({} steps)",
        outcome.best_metric,
        outcome.best_step,
        outcome.steps
    );
    Ok(())
}

fn train(run_dir: Option<PathBuf>, name: &str, args: &ConfigArgs, data: &Path) -> Result<()> {
    let cfg = load_config(args)?;
    if cfg.train.mode != TrainMode::Nll {
        bail!("train runs teacher forcing only; use `finetune` for mode {}", cfg.train.mode);
    }
    let mut run = RunDir::create(run_dir, name)?;
    run.input("data", data)?;
    run.write_text("config", "config.resolved", &cfg.render())?;
    let train_reports = load_split(data, "train")?;
    let vocab = build_vocab(&train_reports, cfg.min_count);
    let mut model = Summarizer::new(cfg.model, vocab, cfg.train.seed)?;
    log::info!(
        "vocabulary {} tokens, {} parameters",
        model.vocab.len(),
        model.params.num_values()
    );
    run_fit(&mut run, &mut model, &cfg, data)?;
    run.finish()
}

fn finetune(run_dir: Option<PathBuf>, name: &str, args: &ConfigArgs, data: &Path, init: &Path, mode: &str) -> Result<()> {
    let mut cfg = load_config(args)?;
    cfg.train.mode = mode.parse()?;
    if cfg.train.mode == TrainMode::Nll {
        bail!("finetune needs mode rl_r, rl_c or rl_rc");
    }
    let mut model = Summarizer::load(init)?;
    // The architecture comes from the checkpoint.
    cfg.model = model.config;
    let mut run = RunDir::create(run_dir, name)?;
    run.input("data", data)?;
    run.input("init", init)?;
    run.write_text("config", "config.resolved", &cfg.render())?;
    run_fit(&mut run, &mut model, &cfg, data)?;
    run.finish()
}

fn decode(
    run_dir: Option<PathBuf>,
    name: &str,
    model_dir: &Path,
    data: &Path,
    split: &str,
    beam: Option<usize>,
) -> Result<()> {
    if beam == Some(0) {
        bail!("--beam must be >= 1");
    }
    let model = Summarizer::load(model_dir)?;
    let reports = load_split(data, split)?;
    let mut run = RunDir::create(run_dir, name)?;
    run.input("model", model_dir)?;
    run.input("data", data)?;
    run.param("split", split);
    run.param("strategy", beam.map_or("greedy".to_string(), |b| format!("beam{b}")));
    let preds: Vec<Prediction> = reports
        .par_iter()
        .map(|r| {
            let ex = model.example(r)?;
            let max_len = model.config.max_decode_len;
            let out = match beam {
                Some(b) => beam_search(&model, &ex, b, max_len)?,
                None => greedy_decode(&model, &ex, max_len)?,
            };
            Ok(Prediction {
                id: r.id.clone(),
                summary: model.tokens(&ex, &out.tokens).join(" "),
            })
        })
        .collect::<factsum::Result<_>>()?;
    write_predictions(&run.file("predictions.jsonl"), &preds)?;
    run.output("predictions", "predictions.jsonl");
    log::info!("decoded {} reports", preds.len());
    run.finish()
}

fn extract(run_dir: Option<PathBuf>, name: &str, input: &Path, rules_path: Option<&Path>) -> Result<()> {
    let rules = load_rules(rules_path)?;
    let text = std::fs::read_to_string(input).map_err(|e| factsum::Error::Io {
        path: input.to_path_buf(),
        source: e,
    })?;
    let mut run = RunDir::create(run_dir, name)?;
    run.input("summaries", input)?;
    if let Some(p) = rules_path {
        run.input("rules", p)?;
    }
    let mut out = String::new();
    for (i, line) in text.lines().enumerate() {
        let facts = extract_facts(&tokenize(line), &rules);
        let rec = serde_json::json!({ "line": i + 1, "facts": facts.to_map() });
        out.push_str(&rec.to_string());
        out.push('\n');
    }
    print!("{out}");
    run.write_text("facts", "facts.jsonl", &out)?;
    run.finish()
}

fn eval(
    run_dir: Option<PathBuf>,
    name: &str,
    predictions: &Path,
    data: &Path,
    split: &str,
    rules_path: Option<&Path>,
) -> Result<()> {
    let rules = load_rules(rules_path)?;
    let preds = read_predictions(predictions)?;
    let reports = load_split(data, split)?;
    if preds.len() != reports.len() {
        bail!(
            "{} has {} predictions but the {split} split has {} references; counts must match",
            predictions.display(),
            preds.len(),
            reports.len()
        );
    }
    for (i, (p, r)) in preds.iter().zip(&reports).enumerate() {
        if p.id != r.id {
            bail!("prediction {} has id {:?} but reference {} has id {:?}", i + 1, p.id, i + 1, r.id);
        }
    }
    let hyps: Vec<Vec<String>> = preds.iter().map(|p| tokenize(&p.summary)).collect();
    let refs: Vec<Vec<String>> = reports.iter().map(|r| r.summary.clone()).collect();
    let metrics = evaluate_summaries(&hyps, &refs, &rules)?;

    let mut run = RunDir::create(run_dir, name)?;
    run.input("predictions", predictions)?;
    run.input("data", data)?;
    run.param("split", split);
    if let Some(p) = rules_path {
        run.input("rules", p)?;
    }
    let text = factsum::kv::render_flat(&metrics.to_pairs());
    print!("{text}");
    run.write_text("metrics", "metrics.txt", &text)?;
    run.finish()
}

fn eval_from_manifest(run_dir: Option<PathBuf>, name: &str, manifest: &Path) -> Result<()> {
    let entries = read_manifest(manifest)?;
    let get = |k: &str| entries.iter().find(|(key, _)| key == k).map(|(_, v)| v.clone());
    if get("command").as_deref() != Some("eval") {
        bail!("{} is not an eval manifest", manifest.display());
    }
    let predictions = get("input.predictions").context("manifest lacks input.predictions")?;
    let data = get("input.data").context("manifest lacks input.data")?;
    let split = get("param.split").context("manifest lacks param.split")?;
    let rules = get("input.rules").map(PathBuf::from);
    eval(
        run_dir,
        name,
        Path::new(&predictions),
        Path::new(&data),
        &split,
        rules.as_deref(),
    )
}

pub struct AnalyzeArgs {
    summaries: Option<PathBuf>,
    data: Option<PathBuf>,
    split: String,
    ngrams: Option<Vec<usize>>,
    sentence_rate: Option<String>,
    most_frequent_sentence: bool,
    perplexity: Option<PathBuf>,
    build_lm: bool,
    add_k: f64,
    lexrank: bool,
}

fn analyze(run_dir: Option<PathBuf>, name: &str, a: AnalyzeArgs) -> Result<()> {
    let mut run = RunDir::create(run_dir, name)?;
    let (ids, summaries): (Vec<String>, Vec<Vec<String>>) = match (&a.summaries, &a.data) {
        (Some(path), None) => {
            run.input("summaries", path)?;
            read_predictions(path)?
                .into_iter()
                .map(|p| (p.id, tokenize(&p.summary)))
                .unzip()
        }
        (None, Some(data)) => {
            run.input("data", data)?;
            run.param("split", &a.split);
            let reports = load_split(data, &a.split)?;
            if a.lexrank {
                let cfg = LexRankConfig::default();
                reports
                    .par_iter()
                    .map(|r| Ok((r.id.clone(), lexrank_summary(&r.findings, &cfg)?)))
                    .collect::<factsum::Result<Vec<_>>>()?
                    .into_iter()
                    .unzip()
            } else {
                reports.into_iter().map(|r| (r.id, r.summary)).unzip()
            }
        }
        _ => bail!("analyze needs exactly one of --summaries or --data"),
    };
    if a.lexrank {
        let preds: Vec<Prediction> = ids
            .iter()
            .zip(&summaries)
            .map(|(id, s)| Prediction {
                id: id.clone(),
                summary: s.join(" "),
            })
            .collect();
        write_predictions(&run.file("lexrank.jsonl"), &preds)?;
        run.output("lexrank", "lexrank.jsonl");
    }

    let mut report: Vec<(String, String)> = vec![("summaries".into(), summaries.len().to_string())];
    if let Some(nk) = &a.ngrams {
        let profile = ngram_profile(&summaries, nk[0], nk[1])?;
        let mut table = String::from("rank\tgram\tcount\tshare\toutput_ratio\n");
        for (i, e) in profile.top.iter().enumerate() {
            table.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{:.6}\n",
                i + 1,
                e.gram,
                e.count,
                e.share,
                e.output_ratio
            ));
        }
        print!("{table}");
        let file = format!("ngrams_{}.tsv", nk[0]);
        run.write_text("ngrams", &file, &table)?;
    }
    if let Some(s) = &a.sentence_rate {
        report.push(("sentence".into(), s.clone()));
        report.push((
            "sentence_rate".into(),
            format!("{:.6}", sentence_rate(&summaries, &tokenize(s))),
        ));
    }
    if a.most_frequent_sentence {
        if let Some((s, count)) = most_frequent_sentence(&summaries) {
            report.push(("most_frequent_sentence".into(), s.join(" ")));
            report.push((
                "most_frequent_sentence_rate".into(),
                format!("{:.6}", count as f64 / summaries.len() as f64),
            ));
        }
    }
    if a.build_lm {
        let lm = TrigramLM::train(&summaries, a.add_k)?;
        lm.save(&run.file("lm.json"))?;
        run.output("lm", "lm.json");
        report.push(("lm_outcomes".into(), lm.outcomes().to_string()));
    }
    if let Some(path) = &a.perplexity {
        run.input("lm", path)?;
        let lm = TrigramLM::load(path)?;
        report.push(("perplexity".into(), format!("{:.6}", perplexity(&lm, &summaries)?)));
    }
    let text = factsum::kv::render_flat(&report);
    print!("{text}");
    run.write_text("analysis", "analysis.txt", &text)?;
    run.finish()
}
