//! `factsum` command-line interface.
//!
//! Exit codes: 0 on success, 1 for usage and validation errors, 2 for
//! runtime failures (I/O, divergence).

mod commands;
mod config;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "factsum", version, about = "Fact-aware radiology findings summarization")]
struct Cli {
    /// Worker threads for parallel decoding and training (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Directory for this run's artifacts. Defaults to
    /// `$FACTSUM_RUN_ROOT/<subcommand>` (root `runs` when unset).
    #[arg(long, global = true)]
    run_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone, Default)]
struct ConfigArgs {
    /// Key/value config file with [corpus], [model], [train], [reward], [data] and [decode] sections.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override one setting, e.g. `--set train.batch_size=8`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with planted fact labels.
    GenCorpus {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus seed (overrides corpus.seed).
        #[arg(long)]
        seed: Option<u64>,
        /// Dataset directory (default: the run directory).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the summarizer with teacher forcing.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Corpus directory with train.jsonl and dev.jsonl.
        #[arg(long)]
        data: PathBuf,
    },
    /// Self-critical fine-tuning from a trained checkpoint.
    Finetune {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint directory to start from.
        #[arg(long)]
        init: PathBuf,
        /// One of rl_r, rl_c, rl_rc.
        #[arg(long)]
        mode: String,
    },
    /// Summarize a split with a trained model.
    Decode {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Beam size.
        #[arg(long, default_value_t = 5, conflicts_with = "greedy")]
        beam: usize,
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Extract fact vectors from summaries, one per line.
    Extract {
        #[arg(long)]
        input: PathBuf,
        /// Extraction rules (default: built-in rules).
        #[arg(long)]
        rules: Option<PathBuf>,
    },
    /// Score predictions against references.
    Eval {
        /// Predictions JSONL with `id` and `summary` fields.
        #[arg(long, required_unless_present = "from_manifest")]
        predictions: Option<PathBuf>,
        #[arg(long, required_unless_present = "from_manifest")]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Re-run the evaluation recorded in an earlier run's manifest.
        #[arg(long, conflicts_with_all = ["predictions", "data", "rules"])]
        from_manifest: Option<PathBuf>,
    },
    /// Style analyses: n-grams, sentence rates, LM perplexity, LexRank.
    Analyze {
        /// Summaries to analyze, as predictions JSONL.
        #[arg(long, conflicts_with = "data")]
        summaries: Option<PathBuf>,
        /// Corpus directory; the reference summaries of `--split` are analyzed.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Top-K n-grams of order N.
        #[arg(long, num_args = 2, value_names = ["N", "K"])]
        ngrams: Option<Vec<usize>>,
        /// Fraction of summaries containing this exact sentence.
        #[arg(long)]
        sentence_rate: Option<String>,
        /// Report the most frequent sentence and its rate.
        #[arg(long)]
        most_frequent_sentence: bool,
        /// Perplexity under a trigram LM file written by `--build-lm`.
        #[arg(long)]
        perplexity: Option<PathBuf>,
        /// Train a trigram LM on the summaries and write `lm.json`.
        #[arg(long)]
        build_lm: bool,
        /// Add-k constant for `--build-lm`.
        #[arg(long, default_value_t = 0.1)]
        add_k: f64,
        /// Replace the summaries by LexRank extracts of the split's findings (needs `--data`).
        #[arg(long, requires = "data")]
        lexrank: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GenCorpus { .. } => "gen-corpus",
            Command::Train { .. } => "train",
            Command::Finetune { .. } => "finetune",
            Command::Decode { .. } => "decode",
            Command::Extract { .. } => "extract",
            Command::Eval { .. } => "eval",
            Command::Analyze { .. } => "analyze",
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match commands::dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(run::exit_code(&e))
        }
    }
}
