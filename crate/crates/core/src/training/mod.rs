//! Teacher-forced pretraining, self-critical fine-tuning and decoding.
//!
//! Fine-tuning minimizes
//!
//! `λ1·L_R + λ2·L_C + λ3·L_NLL`
//!
//! where `L_R` and `L_C` are self-critical surrogates `−(r(ŷ_s) − r(ŷ_g))·log P(ŷ_s)`
//! under the ROUGE-L and factual-accuracy reward respectively, `ŷ_s` is one
//! sampled sequence and `ŷ_g` the greedy decode.

mod decode;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

pub use decode::{argmax, beam_search, forced_decode, greedy_decode, run_policy, sample_decode, DecodeOutput, Policy};

use crate::autodiff::{ParamGrads, ParamStore, Tape};
use crate::corpus::Report;
use crate::factext::{extract_facts, FactVector, RuleSet};
use crate::metrics::{factual_accuracy, macro_factual_f1, rouge_l};
use crate::model::{Dropout, Example, Summarizer};
use crate::{Error, Result};

/// Weights of the ROUGE reward, the factual reward and the NLL term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        RewardWeights {
            lambda1: 0.97,
            lambda2: 0.97,
            lambda3: 0.03,
        }
    }
}

impl RewardWeights {
    pub fn new(lambda1: f64, lambda2: f64, lambda3: f64) -> Result<Self> {
        let w = RewardWeights {
            lambda1,
            lambda2,
            lambda3,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, x) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("lambda3", self.lambda3)] {
            if !(0.0..=1.0).contains(&x) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {x}")));
            }
        }
        if self.lambda1 == 0.0 && self.lambda2 == 0.0 && self.lambda3 == 0.0 {
            return Err(Error::Config("at least one reward weight must be nonzero".into()));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let x: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("invalid value {value:?} for reward.{key}")))?;
        match key {
            "lambda1" => self.lambda1 = x,
            "lambda2" => self.lambda2 = x,
            "lambda3" => self.lambda3 = x,
            _ => return Err(Error::Config(format!("unknown key reward.{key}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("lambda1".into(), self.lambda1.to_string()),
            ("lambda2".into(), self.lambda2.to_string()),
            ("lambda3".into(), self.lambda3.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    Nll,
    RlR,
    RlC,
    RlRc,
}

impl TrainMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainMode::Nll => "nll",
            TrainMode::RlR => "rl_r",
            TrainMode::RlC => "rl_c",
            TrainMode::RlRc => "rl_rc",
        }
    }

    /// Weights actually used: `nll` ignores rewards, `rl_r` drops λ2, `rl_c` drops λ1.
    pub fn effective_weights(self, w: RewardWeights) -> RewardWeights {
        match self {
            TrainMode::Nll => RewardWeights {
                lambda1: 0.0,
                lambda2: 0.0,
                lambda3: 1.0,
            },
            TrainMode::RlR => RewardWeights { lambda2: 0.0, ..w },
            TrainMode::RlC => RewardWeights { lambda1: 0.0, ..w },
            TrainMode::RlRc => w,
        }
    }
}

impl fmt::Display for TrainMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrainMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nll" => Ok(TrainMode::Nll),
            "rl_r" => Ok(TrainMode::RlR),
            "rl_c" => Ok(TrainMode::RlC),
            "rl_rc" => Ok(TrainMode::RlRc),
            _ => Err(Error::Config(format!("unknown mode {s:?} (expected nll, rl_r, rl_c or rl_rc)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub grad_clip_norm: f64,
    pub eval_every: usize,
    pub lr_decay: f64,
    /// Steps without dev improvement before the learning rate decays.
    pub patience: usize,
    /// Training stops after this many decays without an improvement in between.
    pub max_decays: usize,
    pub max_steps: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 16,
            grad_clip_norm: 5.0,
            eval_every: 100,
            lr_decay: 0.5,
            patience: 2500,
            max_decays: 3,
            max_steps: 20_000,
            seed: 1,
            mode: TrainMode::Nll,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.grad_clip_norm.is_nan() || self.grad_clip_norm <= 0.0 {
            return bad("grad_clip_norm must be positive");
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must be in (0,1]");
        }
        if self.patience == 0 || self.max_decays == 0 || self.max_steps == 0 {
            return bad("patience, max_decays and max_steps must be >= 1");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for train.{key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        let float = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "learning_rate" => self.learning_rate = float()?,
            "batch_size" => self.batch_size = int()?,
            "grad_clip_norm" => self.grad_clip_norm = float()?,
            "eval_every" => self.eval_every = int()?,
            "lr_decay" => self.lr_decay = float()?,
            "patience" => self.patience = int()?,
            "max_decays" => self.max_decays = int()?,
            "max_steps" => self.max_steps = int()?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "mode" => self.mode = value.parse()?,
            _ => return Err(Error::Config(format!("unknown key train.{key}"))),
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("learning_rate".into(), self.learning_rate.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("grad_clip_norm".into(), self.grad_clip_norm.to_string()),
            ("eval_every".into(), self.eval_every.to_string()),
            ("lr_decay".into(), self.lr_decay.to_string()),
            ("patience".into(), self.patience.to_string()),
            ("max_decays".into(), self.max_decays.to_string()),
            ("max_steps".into(), self.max_steps.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("mode".into(), self.mode.to_string()),
        ]
    }
}

/// Reward of one hypothesis with its components.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Reward {
    pub rouge: f64,
    pub factual: f64,
    pub total: f64,
}

/// `r = λ1·ROUGE-L F1 + λ2·factual accuracy`; an empty hypothesis scores 0.
pub fn reward<S: AsRef<str>>(hyp: &[S], reference: &[S], weights: RewardWeights, rules: &RuleSet) -> Result<Reward> {
    let ref_facts = extract_facts(reference, rules);
    reward_with_facts(hyp, reference, &ref_facts, weights, rules)
}

fn reward_with_facts<S: AsRef<str>, T: AsRef<str>>(
    hyp: &[S],
    reference: &[T],
    ref_facts: &FactVector,
    weights: RewardWeights,
    rules: &RuleSet,
) -> Result<Reward> {
    if reference.is_empty() {
        return Err(Error::Contract("reward needs a non-empty reference".into()));
    }
    if hyp.is_empty() {
        return Ok(Reward::default());
    }
    let h: Vec<&str> = hyp.iter().map(AsRef::as_ref).collect();
    let r: Vec<&str> = reference.iter().map(AsRef::as_ref).collect();
    let rouge = rouge_l(&h, &r).f1;
    let factual = factual_accuracy(&extract_facts(&h, rules), ref_facts)?;
    Ok(Reward {
        rouge,
        factual,
        total: weights.lambda1 * rouge + weights.lambda2 * factual,
    })
}

/// An encoded report with its reference tokens and facts.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub example: Example,
    pub reference: Vec<String>,
    pub reference_facts: FactVector,
}

pub fn prepare(model: &Summarizer, reports: &[Report], rules: &RuleSet) -> Result<Vec<TrainExample>> {
    reports
        .iter()
        .map(|r| {
            Ok(TrainExample {
                example: model.example(r)?,
                reference: r.summary.clone(),
                reference_facts: extract_facts(&r.summary, rules),
            })
        })
        .collect()
}

/// How `ŷ_s` is drawn during self-critical steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampler {
    Multinomial,
    /// Argmax at every step, so the sample equals the greedy decode.
    Argmax,
}

/// Per-step averages over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepStats {
    pub loss: f64,
    pub l_r: f64,
    pub l_c: f64,
    pub l_nll: f64,
    pub reward_sample: f64,
    pub reward_greedy: f64,
    /// Examples whose weighted advantage was nonzero.
    pub nonzero_advantages: usize,
    pub grad_norm: f64,
}

fn stream_rng(seed: u64, tag: u64, step: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag);
    rng.set_stream(((step as u64) << 24) | index as u64);
    rng
}

const DROPOUT_TAG: u64 = 0xD0;
const SAMPLE_TAG: u64 = 0x5A;

/// The generator that draws `ŷ_s` for batch position `index` at `step`.
pub fn sample_rng(seed: u64, step: usize, index: usize) -> ChaCha8Rng {
    stream_rng(seed, SAMPLE_TAG, step, index)
}

/// Gradient of the (batch-mean) loss for one example, scaled by `1/batch`.
#[allow(clippy::too_many_arguments)]
fn example_gradient(
    model: &Summarizer,
    te: &TrainExample,
    weights: RewardWeights,
    rules: &RuleSet,
    sampler: Sampler,
    seed: u64,
    step: usize,
    index: usize,
    batch: usize,
) -> Result<(ParamGrads, StepStats)> {
    let mut tape = Tape::new();
    let b = model.bind(&mut tape);
    let mut stats = StepStats::default();
    let mut terms = Vec::with_capacity(2);

    if weights.lambda1 != 0.0 || weights.lambda2 != 0.0 {
        let enc = model.encode(&mut tape, &b, &te.example, None)?;
        let max_len = model.config.max_decode_len;
        let (greedy, _) = run_policy(model, &mut tape, &b, &enc, Policy::Greedy, max_len)?;
        let mut rng = sample_rng(seed, step, index);
        let policy = match sampler {
            Sampler::Multinomial => Policy::Sample(&mut rng),
            Sampler::Argmax => Policy::Greedy,
        };
        let (sample, logps) = run_policy(model, &mut tape, &b, &enc, policy, max_len)?;
        let score = |out: &DecodeOutput| {
            let toks = model.tokens(&te.example, &out.tokens);
            reward_with_facts(&toks, &te.reference, &te.reference_facts, weights, rules)
        };
        let (rs, rg) = (score(&sample)?, score(&greedy)?);
        let adv_r = rs.rouge - rg.rouge;
        let adv_c = rs.factual - rg.factual;
        let all = tape.concat(&logps)?;
        let logp = tape.sum(all);
        let logp_value = tape.scalar_value(logp);
        stats.l_r = -adv_r * logp_value;
        stats.l_c = -adv_c * logp_value;
        stats.reward_sample = rs.total;
        stats.reward_greedy = rg.total;
        let coef = -(weights.lambda1 * adv_r + weights.lambda2 * adv_c);
        if coef != 0.0 {
            stats.nonzero_advantages = 1;
        }
        terms.push(tape.scale(logp, coef));
    }

    let mut drop_rng = stream_rng(seed, DROPOUT_TAG, step, index);
    let rate = model.config.dropout_rate;
    let enc = model.encode(
        &mut tape,
        &b,
        &te.example,
        Some(Dropout {
            rate,
            rng: &mut drop_rng,
        }),
    )?;
    let nll = model.sequence_nll_on(
        &mut tape,
        &b,
        &enc,
        &te.example,
        Some(Dropout {
            rate,
            rng: &mut drop_rng,
        }),
    )?;
    stats.l_nll = tape.scalar_value(nll);
    terms.push(tape.scale(nll, weights.lambda3));

    let loss = if terms.len() == 1 {
        terms[0]
    } else {
        tape.add(terms[0], terms[1])?
    };
    stats.loss = tape.scalar_value(loss);
    let mut grads = ParamGrads::zeros_like(&model.params);
    tape.backward(loss)?
        .accumulate_into(&tape, &mut grads, 1.0 / batch as f64);
    Ok((grads, stats))
}

/// Mean gradient of the combined loss over a batch. Examples run in
/// parallel; results are reduced in batch order.
pub fn batch_gradient(
    model: &Summarizer,
    batch: &[&TrainExample],
    weights: RewardWeights,
    rules: &RuleSet,
    sampler: Sampler,
    seed: u64,
    step: usize,
) -> Result<(ParamGrads, StepStats)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty batch".into()));
    }
    let n = batch.len();
    let parts: Vec<(ParamGrads, StepStats)> = batch
        .par_iter()
        .enumerate()
        .map(|(i, te)| example_gradient(model, te, weights, rules, sampler, seed, step, i, n))
        .collect::<Result<_>>()?;
    let mut total = ParamGrads::zeros_like(&model.params);
    let mut stats = StepStats::default();
    for (g, s) in &parts {
        total.add_assign(g);
        stats.loss += s.loss / n as f64;
        stats.l_r += s.l_r / n as f64;
        stats.l_c += s.l_c / n as f64;
        stats.l_nll += s.l_nll / n as f64;
        stats.reward_sample += s.reward_sample / n as f64;
        stats.reward_greedy += s.reward_greedy / n as f64;
        stats.nonzero_advantages += s.nonzero_advantages;
    }
    Ok((total, stats))
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: ParamGrads,
    v: ParamGrads,
    t: i32,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ParamGrads::zeros_like(params),
            v: ParamGrads::zeros_like(params),
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let g = grads.get(id).data();
            let m = self.m.get_mut(id).data_mut();
            for (mi, gi) in m.iter_mut().zip(g) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
            }
            let v = self.v.get_mut(id).data_mut();
            for (vi, gi) in v.iter_mut().zip(g) {
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
            }
            let m = self.m.get(id).data();
            let v = self.v.get(id).data();
            for ((p, mi), vi) in params.get_mut(id).data_mut().iter_mut().zip(m).zip(v) {
                *p -= lr * (mi / c1) / ((vi / c2).sqrt() + self.eps);
            }
        }
    }
}

/// One optimizer update on a batch; returns the batch statistics.
#[allow(clippy::too_many_arguments)]
pub fn train_step(
    model: &mut Summarizer,
    adam: &mut Adam,
    batch: &[&TrainExample],
    weights: RewardWeights,
    rules: &RuleSet,
    config: &TrainConfig,
    lr: f64,
    step: usize,
    sampler: Sampler,
) -> Result<StepStats> {
    let (mut grads, mut stats) = batch_gradient(model, batch, weights, rules, sampler, config.seed, step)?;
    if !stats.loss.is_finite() || !grads.is_finite() {
        return Err(Error::Diverged {
            step,
            detail: format!("loss {} (nll {})", stats.loss, stats.l_nll),
        });
    }
    stats.grad_norm = grads.clip_global_norm(config.grad_clip_norm);
    adam.step(&mut model.params, &grads, lr);
    Ok(stats)
}

/// Self-critical update with multinomial sampling.
pub fn scst_step(
    model: &mut Summarizer,
    adam: &mut Adam,
    batch: &[&TrainExample],
    weights: RewardWeights,
    rules: &RuleSet,
    config: &TrainConfig,
    step: usize,
) -> Result<StepStats> {
    train_step(model, adam, batch, weights, rules, config, config.learning_rate, step, Sampler::Multinomial)
}

/// Greedy-decodes every example and returns token strings, in input order.
pub fn greedy_summaries(model: &Summarizer, examples: &[TrainExample]) -> Result<Vec<Vec<String>>> {
    examples
        .par_iter()
        .map(|te| {
            let out = greedy_decode(model, &te.example, model.config.max_decode_len)?;
            Ok(model.tokens(&te.example, &out.tokens))
        })
        .collect()
}

/// Dev-set scores of greedy decodes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DevScores {
    /// Mean ROUGE-L F1.
    pub rouge_l: f64,
    pub factual_f1: f64,
}

impl DevScores {
    /// The stopping metric: `(ROUGE-L F1 + macro factual F1) / 2`.
    pub fn metric(&self) -> f64 {
        (self.rouge_l + self.factual_f1) / 2.0
    }
}

pub fn dev_scores(model: &Summarizer, dev: &[TrainExample], rules: &RuleSet) -> Result<DevScores> {
    if dev.is_empty() {
        return Err(Error::Contract("stopping metric needs a non-empty dev split".into()));
    }
    let hyps = greedy_summaries(model, dev)?;
    dev_scores_of(&hyps, dev, rules)
}

/// Scores of given summaries, aligned with `dev`.
pub fn dev_scores_of(hyps: &[Vec<String>], dev: &[TrainExample], rules: &RuleSet) -> Result<DevScores> {
    if hyps.len() != dev.len() || dev.is_empty() {
        return Err(Error::Contract(format!("{} summaries for {} dev examples", hyps.len(), dev.len())));
    }
    let rouge_l = hyps
        .iter()
        .zip(dev)
        .map(|(h, te)| rouge_l(h, &te.reference).f1)
        .sum::<f64>()
        / dev.len() as f64;
    let pred: Vec<FactVector> = hyps.iter().map(|h| extract_facts(h, rules)).collect();
    let gold: Vec<FactVector> = dev.iter().map(|te| te.reference_facts).collect();
    Ok(DevScores {
        rouge_l,
        factual_f1: macro_factual_f1(&pred, &gold)?.macro_f1,
    })
}

/// `(ROUGE-L F1 + macro factual F1) / 2` of greedy decodes.
pub fn stopping_metric(model: &Summarizer, dev: &[TrainExample], rules: &RuleSet) -> Result<f64> {
    Ok(dev_scores(model, dev, rules)?.metric())
}

/// The stopping metric of given summaries, aligned with `dev`.
pub fn stopping_metric_of(hyps: &[Vec<String>], dev: &[TrainExample], rules: &RuleSet) -> Result<f64> {
    Ok(dev_scores_of(hyps, dev, rules)?.metric())
}

/// One append-only training log record.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRecord {
    pub step: usize,
    pub learning_rate: f64,
    pub stats: StepStats,
    pub dev: Option<DevScores>,
}

impl LogRecord {
    pub fn to_line(&self) -> String {
        let s = &self.stats;
        let mut line = format!(
            "step={} lr={:e} loss={:.6} l_r={:.6} l_c={:.6} l_nll={:.6} grad_norm={:.6} reward_sample={:.6} reward_greedy={:.6}",
            self.step, self.learning_rate, s.loss, s.l_r, s.l_c, s.l_nll, s.grad_norm, s.reward_sample, s.reward_greedy
        );
        if let Some(d) = self.dev {
            line.push_str(&format!(
                " dev_metric={:.6} dev_rouge_l={:.6} dev_factual_f1={:.6}",
                d.metric(),
                d.rouge_l,
                d.factual_f1
            ));
        }
        line
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOutcome {
    pub best_metric: f64,
    pub best_step: usize,
    pub steps: usize,
    pub decays: usize,
}

/// Trains in `config.mode` and leaves the best dev checkpoint in `model`.
///
/// The starting parameters are evaluated first, so fine-tuning never returns
/// a checkpoint that is worse on dev than the one it started from.
pub fn fit(
    model: &mut Summarizer,
    train: &[Report],
    dev: &[Report],
    config: &TrainConfig,
    weights: RewardWeights,
    rules: &RuleSet,
    mut on_record: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    weights.validate()?;
    if train.is_empty() || dev.is_empty() {
        return Err(Error::Contract("training needs non-empty train and dev splits".into()));
    }
    let weights = config.mode.effective_weights(weights);
    let train_ex = prepare(model, train, rules)?;
    let dev_ex = prepare(model, dev, rules)?;

    let mut adam = Adam::new(&model.params);
    let mut lr = config.learning_rate;
    let initial = dev_scores(model, &dev_ex, rules)?;
    let mut best_metric = initial.metric();
    let mut best_params = model.params.clone();
    let mut best_step = 0;
    let mut since_improve = 0;
    let mut decays_without_improve = 0;
    let mut decays = 0;
    on_record(&LogRecord {
        step: 0,
        learning_rate: lr,
        stats: StepStats::default(),
        dev: Some(initial),
    });

    let mut order: Vec<usize> = (0..train_ex.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut cursor = order.len();
    let mut epoch_nonzero = 0usize;
    let rl = weights.lambda1 != 0.0 || weights.lambda2 != 0.0;
    let mut step = 0;
    while step < config.max_steps {
        step += 1;
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size {
            if cursor == order.len() {
                if rl && step > 1 && epoch_nonzero == 0 {
                    log::warn!("all self-critical advantages were zero for a full epoch; reward saturated");
                }
                epoch_nonzero = 0;
                order.shuffle(&mut shuffle_rng);
                cursor = 0;
            }
            batch.push(&train_ex[order[cursor]]);
            cursor += 1;
        }
        let stats = train_step(
            model,
            &mut adam,
            &batch,
            weights,
            rules,
            config,
            lr,
            step,
            Sampler::Multinomial,
        )?;
        epoch_nonzero += stats.nonzero_advantages;

        let mut dev = None;
        if step % config.eval_every == 0 {
            let scores = dev_scores(model, &dev_ex, rules)?;
            dev = Some(scores);
            let m = scores.metric();
            if m > best_metric {
                best_metric = m;
                best_params = model.params.clone();
                best_step = step;
                since_improve = 0;
                decays_without_improve = 0;
            } else {
                since_improve += config.eval_every;
                if since_improve >= config.patience {
                    lr *= config.lr_decay;
                    decays += 1;
                    decays_without_improve += 1;
                    since_improve = 0;
                    log::info!("step {step}: learning rate decayed to {lr:e}");
                }
            }
        }
        on_record(&LogRecord {
            step,
            learning_rate: lr,
            stats,
            dev,
        });
        if decays_without_improve >= config.max_decays {
            break;
        }
    }
    model.params = best_params;
    Ok(TrainOutcome {
        best_metric,
        best_step,
        steps: step,
        decays,
    })
}
