//! The synthetic benchmark: one NLL baseline and three self-critical
//! fine-tunes per seed, evaluated on the test split with beam search.

use std::time::Instant;

use rayon::prelude::*;

use crate::corpus::{generate_corpus, Corpus, CorpusConfig, Report};
use crate::factext::RuleSet;
use crate::metrics::{evaluate_summaries, EvalMetrics};
use crate::model::{ModelConfig, Summarizer};
use crate::training::{beam_search, fit, LogRecord, RewardWeights, TrainConfig, TrainMode, TrainOutcome};
use crate::vocab::build_vocab;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub baseline: TrainConfig,
    pub finetune: TrainConfig,
    pub weights: RewardWeights,
    pub beam_size: usize,
    pub min_count: usize,
}

impl Default for BenchmarkConfig {
    /// A corpus with more co-occurring findings and distractors than the
    /// generator default, and a model sized to finish three seeds on one core
    /// in well under an hour.
    fn default() -> Self {
        let mut corpus = CorpusConfig {
            uncertainty_rate: 0.3,
            distractor_rate: 3.5,
            resolved_rate: 0.15,
            ..CorpusConfig::default()
        };
        for p in corpus.prevalence.values_mut() {
            *p = 0.4;
        }
        BenchmarkConfig {
            corpus,
            model: ModelConfig {
                embedding_dim: 24,
                encoder_hidden: 48,
                decoder_hidden: 48,
                background_hidden: 32,
                ..ModelConfig::default()
            },
            baseline: TrainConfig {
                patience: 300,
                max_steps: 1500,
                ..TrainConfig::default()
            },
            finetune: TrainConfig {
                learning_rate: 2e-4,
                eval_every: 50,
                patience: 200,
                max_steps: 400,
                ..TrainConfig::default()
            },
            weights: RewardWeights::default(),
            beam_size: 5,
            min_count: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SystemResult {
    pub mode: TrainMode,
    pub summaries: Vec<Vec<String>>,
    pub metrics: EvalMetrics,
    pub outcome: TrainOutcome,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub corpus: Corpus,
    pub baseline: SystemResult,
    pub rl_r: SystemResult,
    pub rl_c: SystemResult,
    pub rl_rc: SystemResult,
}

impl SeedResult {
    pub fn references(&self) -> Vec<Vec<String>> {
        self.corpus.test.reports.iter().map(|r| r.summary.clone()).collect()
    }

    pub fn systems(&self) -> [&SystemResult; 4] {
        [&self.baseline, &self.rl_r, &self.rl_c, &self.rl_rc]
    }
}

/// Beam-decodes every report, in input order.
pub fn decode_reports(model: &Summarizer, reports: &[Report], beam_size: usize) -> Result<Vec<Vec<String>>> {
    reports
        .par_iter()
        .map(|r| {
            let ex = model.example(r)?;
            let out = beam_search(model, &ex, beam_size, model.config.max_decode_len)?;
            Ok(model.tokens(&ex, &out.tokens))
        })
        .collect()
}

fn evaluate(
    model: &Summarizer,
    test: &[Report],
    beam: usize,
    rules: &RuleSet,
    mode: TrainMode,
    outcome: TrainOutcome,
    started: Instant,
) -> Result<SystemResult> {
    let summaries = decode_reports(model, test, beam)?;
    let refs: Vec<Vec<String>> = test.iter().map(|r| r.summary.clone()).collect();
    let metrics = evaluate_summaries(&summaries, &refs, rules)?;
    Ok(SystemResult {
        mode,
        summaries,
        metrics,
        outcome,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Runs the full protocol for one seed. `on_record` sees every training log
/// record tagged with the mode that produced it.
pub fn run_seed(
    config: &BenchmarkConfig,
    seed: u64,
    rules: &RuleSet,
    mut on_record: impl FnMut(TrainMode, &LogRecord),
) -> Result<SeedResult> {
    let corpus = generate_corpus(&CorpusConfig {
        seed,
        ..config.corpus.clone()
    })?;
    let vocab = build_vocab(&corpus.train.reports, config.min_count);
    let (train, dev, test) = (&corpus.train.reports, &corpus.dev.reports, &corpus.test.reports);

    let started = Instant::now();
    let mut baseline = Summarizer::new(config.model, vocab, seed)?;
    let base_cfg = TrainConfig {
        seed,
        mode: TrainMode::Nll,
        ..config.baseline
    };
    let outcome = fit(&mut baseline, train, dev, &base_cfg, config.weights, rules, |r| {
        on_record(TrainMode::Nll, r)
    })?;
    let base_result = evaluate(&baseline, test, config.beam_size, rules, TrainMode::Nll, outcome, started)?;

    let mut finetuned = Vec::with_capacity(3);
    for mode in [TrainMode::RlR, TrainMode::RlC, TrainMode::RlRc] {
        let started = Instant::now();
        let mut model = baseline.clone();
        let cfg = TrainConfig {
            seed,
            mode,
            ..config.finetune
        };
        let outcome = fit(&mut model, train, dev, &cfg, config.weights, rules, |r| on_record(mode, r))?;
        finetuned.push(evaluate(&model, test, config.beam_size, rules, mode, outcome, started)?);
    }
    let rl_rc = finetuned.pop().expect("three fine-tunes");
    let rl_c = finetuned.pop().expect("three fine-tunes");
    let rl_r = finetuned.pop().expect("three fine-tunes");
    Ok(SeedResult {
        seed,
        corpus,
        baseline: base_result,
        rl_r,
        rl_c,
        rl_rc,
    })
}
