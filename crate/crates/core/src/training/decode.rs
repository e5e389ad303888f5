//! Greedy, sampled, forced and beam decoding over the extended vocabulary.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var, LOG_FLOOR};
use crate::model::{Bound, DecoderState, Encoded, Example, Summarizer};
use crate::vocab::{BOS_ID, EOS_ID};
use crate::Result;

/// A decoded sequence. `tokens` excludes the end-of-sequence token;
/// `step_logprobs` includes its step when `finished`.
#[derive(Debug, Clone, PartialEq)]
pub struct DecodeOutput {
    pub tokens: Vec<usize>,
    pub step_logprobs: Vec<f64>,
    pub total_logprob: f64,
    pub finished: bool,
}

impl DecodeOutput {
    fn from_steps(tokens: Vec<usize>, step_logprobs: Vec<f64>, finished: bool) -> Self {
        let total_logprob = step_logprobs.iter().sum();
        DecodeOutput {
            tokens,
            step_logprobs,
            total_logprob,
            finished,
        }
    }
}

/// How the next token is chosen.
pub enum Policy<'a> {
    Greedy,
    Sample(&'a mut ChaCha8Rng),
    /// Follow the given tokens, then emit EOS.
    Forced(&'a [usize]),
}

/// Lowest-index argmax.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

fn sample_index(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let total: f64 = probs.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, &p) in probs.iter().enumerate() {
        if u < p {
            return i;
        }
        u -= p;
    }
    // Rounding left some mass unassigned: take the last token with support.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

/// Runs one policy on an already encoded example. Returns the output and,
/// per step, the tape node holding the log-probability of the chosen token.
pub fn run_policy(
    model: &Summarizer,
    tape: &mut Tape,
    bound: &Bound,
    enc: &Encoded,
    mut policy: Policy<'_>,
    max_len: usize,
) -> Result<(DecodeOutput, Vec<Var>)> {
    let mut state = enc.init;
    let mut prev = BOS_ID;
    let mut tokens = Vec::new();
    let mut logps = Vec::new();
    let mut logp_vars = Vec::new();
    let steps = match &policy {
        Policy::Forced(t) => t.len() + 1,
        _ => max_len,
    };
    let mut finished = false;
    for t in 0..steps {
        let step = model.decode_step(tape, bound, enc, state, prev, &mut None)?;
        let next = match &mut policy {
            Policy::Greedy => argmax(tape.value(step.dist).data()),
            Policy::Sample(rng) => sample_index(tape.value(step.dist).data(), rng),
            Policy::Forced(seq) => seq.get(t).copied().unwrap_or(EOS_ID),
        };
        let p = tape.pick(step.dist, next)?;
        let lp = tape.log(p);
        logps.push(tape.scalar_value(lp));
        logp_vars.push(lp);
        if next == EOS_ID {
            finished = true;
            break;
        }
        tokens.push(next);
        state = step.state;
        prev = next;
    }
    Ok((DecodeOutput::from_steps(tokens, logps, finished), logp_vars))
}

fn with_encoding<T>(
    model: &Summarizer,
    ex: &Example,
    f: impl FnOnce(&mut Tape, &Bound, &Encoded) -> Result<T>,
) -> Result<T> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape);
    let enc = model.encode(&mut tape, &bound, ex, None)?;
    f(&mut tape, &bound, &enc)
}

pub fn greedy_decode(model: &Summarizer, ex: &Example, max_len: usize) -> Result<DecodeOutput> {
    with_encoding(model, ex, |tape, b, enc| {
        Ok(run_policy(model, tape, b, enc, Policy::Greedy, max_len)?.0)
    })
}

/// Temperature-1 multinomial sampling.
pub fn sample_decode(model: &Summarizer, ex: &Example, max_len: usize, rng: &mut ChaCha8Rng) -> Result<DecodeOutput> {
    with_encoding(model, ex, |tape, b, enc| {
        Ok(run_policy(model, tape, b, enc, Policy::Sample(rng), max_len)?.0)
    })
}

/// Scores `tokens` followed by EOS.
pub fn forced_decode(model: &Summarizer, ex: &Example, tokens: &[usize]) -> Result<DecodeOutput> {
    with_encoding(model, ex, |tape, b, enc| {
        Ok(run_policy(model, tape, b, enc, Policy::Forced(tokens), usize::MAX)?.0)
    })
}

#[derive(Clone)]
struct Hypothesis {
    tokens: Vec<usize>,
    logps: Vec<f64>,
    score: f64,
    state: DecoderState,
}

/// Length-unnormalized beam search. Returns the best completed hypothesis,
/// or the best partial one if none completed within `max_len` steps.
pub fn beam_search(model: &Summarizer, ex: &Example, beam_size: usize, max_len: usize) -> Result<DecodeOutput> {
    if beam_size == 0 {
        return Err(crate::Error::Contract("beam_size must be >= 1".into()));
    }
    with_encoding(model, ex, |tape, b, enc| {
        let mut live = vec![Hypothesis {
            tokens: Vec::new(),
            logps: Vec::new(),
            score: 0.0,
            state: enc.init,
        }];
        let mut done: Vec<Hypothesis> = Vec::new();
        for _ in 0..max_len {
            // (score, hypothesis index, token, token logp, next state)
            let mut cands: Vec<(f64, usize, usize, f64, DecoderState)> = Vec::new();
            for (hi, h) in live.iter().enumerate() {
                let prev = h.tokens.last().copied().unwrap_or(BOS_ID);
                let step = model.decode_step(tape, b, enc, h.state, prev, &mut None)?;
                let logp: Vec<f64> = tape
                    .value(step.dist)
                    .data()
                    .iter()
                    .map(|&p| p.max(LOG_FLOOR).ln())
                    .collect();
                let mut order: Vec<usize> = (0..logp.len()).collect();
                order.sort_by(|&i, &j| logp[j].total_cmp(&logp[i]).then(i.cmp(&j)));
                for &tok in order.iter().take(beam_size) {
                    cands.push((h.score + logp[tok], hi, tok, logp[tok], step.state));
                }
            }
            cands.sort_by(|x, y| {
                y.0.total_cmp(&x.0)
                    .then(x.1.cmp(&y.1))
                    .then(y.3.total_cmp(&x.3))
                    .then(x.2.cmp(&y.2))
            });
            let mut next = Vec::with_capacity(beam_size);
            for (score, hi, tok, lp, state) in cands {
                if next.len() >= beam_size {
                    break;
                }
                let parent = &live[hi];
                let mut logps = parent.logps.clone();
                logps.push(lp);
                if tok == EOS_ID {
                    done.push(Hypothesis {
                        tokens: parent.tokens.clone(),
                        logps,
                        score,
                        state,
                    });
                } else if next.len() < beam_size {
                    let mut tokens = parent.tokens.clone();
                    tokens.push(tok);
                    next.push(Hypothesis {
                        tokens,
                        logps,
                        score,
                        state,
                    });
                }
            }
            live = next;
            // Keep the best finished hypotheses; ties keep the earlier one.
            done.sort_by(|x, y| y.score.total_cmp(&x.score));
            done.truncate(beam_size);
            let best_done = done.first().map_or(f64::NEG_INFINITY, |h| h.score);
            let best_live = live.iter().map(|h| h.score).fold(f64::NEG_INFINITY, f64::max);
            // Scores only decrease with length, so no live hypothesis can overtake.
            if live.is_empty() || best_done >= best_live {
                break;
            }
        }
        let pick_best = |hs: &[Hypothesis]| {
            hs.iter()
                .enumerate()
                .max_by(|(i, a), (j, b)| a.score.total_cmp(&b.score).then(j.cmp(i)))
                .map(|(_, h)| h.clone())
        };
        let (best, finished) = match pick_best(&done) {
            Some(h) => (h, true),
            None => (pick_best(&live).expect("beam keeps at least one hypothesis"), false),
        };
        Ok(DecodeOutput::from_steps(best.tokens, best.logps, finished))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index_on_ties() {
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
        assert_eq!(argmax(&[0.5]), 0);
    }

    #[test]
    fn sampling_respects_zero_mass() {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let i = sample_index(&[0.0, 0.3, 0.0, 0.7], &mut rng);
            assert!(i == 1 || i == 3);
        }
    }
}
