//! ROUGE, factual accuracy, macro factual F1 and a paired bootstrap test.

use std::collections::HashMap;
use std::hash::Hash;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::factext::{extract_facts, FactStatus, FactVector, RuleSet, Variable};
use crate::{Error, Result};

/// Precision, recall and F1 of one comparison.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf {
            precision,
            recall,
            f1,
        }
    }

    fn from_overlap(overlap: usize, hyp_total: usize, ref_total: usize) -> Self {
        if hyp_total == 0 || ref_total == 0 {
            return Prf::default();
        }
        Prf::from_pr(
            overlap as f64 / hyp_total as f64,
            overlap as f64 / ref_total as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScores {
    pub r1: Prf,
    pub r2: Prf,
    pub rl: Prf,
}

impl RougeScores {
    pub fn score<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Self {
        RougeScores {
            r1: rouge_n(hyp, reference, 1),
            r2: rouge_n(hyp, reference, 2),
            rl: rouge_l(hyp, reference),
        }
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts
            .entry(w.iter().map(AsRef::as_ref).collect())
            .or_insert(0) += 1;
    }
    counts
}

/// ROUGE-N with clipped n-gram overlap.
pub fn rouge_n<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> Prf {
    assert!(n >= 1, "rouge_n needs n >= 1");
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let overlap: usize = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_overlap(
        overlap,
        hyp.len().saturating_sub(n - 1),
        reference.len().saturating_sub(n - 1),
    )
}

/// Length of the longest common subsequence, O(|a|·|b|) time and O(|b|) space.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    lcs_len_by(a, b, |x, y| x == y)
}

fn lcs_len_by<A, B>(a: &[A], b: &[B], eq: impl Fn(&A, &B) -> bool) -> usize {
    // One row; `diag` holds the previous row's value left of column j.
    let mut row = vec![0usize; b.len() + 1];
    for x in a {
        let mut diag = 0;
        for (j, y) in b.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if eq(x, y) { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    row[b.len()]
}

/// Whole-sequence ROUGE-L; sentence breaks are ordinary tokens.
pub fn rouge_l<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Prf {
    let lcs = lcs_len_by(hyp, reference, |x, y| x.as_ref() == y.as_ref());
    Prf::from_overlap(lcs, hyp.len(), reference.len())
}

/// Fraction of variables with equal status.
pub fn factual_accuracy(predicted: &FactVector, reference: &FactVector) -> Result<f64> {
    if predicted.variables() != reference.variables() {
        return Err(Error::Contract("fact vectors cover different variables".into()));
    }
    let m = reference.variables().len();
    let equal = predicted
        .statuses()
        .iter()
        .zip(reference.statuses())
        .filter(|(a, b)| a == b)
        .count();
    Ok(equal as f64 / m as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn add(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => self.tn += 1,
        }
    }

    /// 2tp / (2tp + fp + fn), zero when undefined.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactualReport {
    pub per_variable_f1: Vec<(Variable, f64)>,
    pub macro_f1: f64,
    pub confusion: Vec<(Variable, Confusion)>,
}

impl FactualReport {
    pub fn f1(&self, var: Variable) -> f64 {
        self.per_variable_f1
            .iter()
            .find(|(v, _)| *v == var)
            .map(|(_, f)| *f)
            .unwrap_or(0.0)
    }
}

/// Macro-averaged presence F1 over all variables; negative and not-mentioned
/// both count as absent.
pub fn macro_factual_f1(predictions: &[FactVector], references: &[FactVector]) -> Result<FactualReport> {
    if predictions.is_empty() {
        return Err(Error::Contract("macro F1 over an empty set".into()));
    }
    if predictions.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} predictions vs {} references",
            predictions.len(),
            references.len()
        )));
    }
    let mut confusion = vec![Confusion::default(); Variable::ALL.len()];
    for (p, r) in predictions.iter().zip(references) {
        for var in Variable::ALL {
            confusion[var.index()].add(
                p.get(var) == FactStatus::Positive,
                r.get(var) == FactStatus::Positive,
            );
        }
    }
    let per_variable_f1: Vec<(Variable, f64)> = Variable::ALL
        .iter()
        .map(|&v| (v, confusion[v.index()].f1()))
        .collect();
    let macro_f1 = per_variable_f1.iter().map(|(_, f)| f).sum::<f64>() / per_variable_f1.len() as f64;
    Ok(FactualReport {
        per_variable_f1,
        macro_f1,
        confusion: Variable::ALL.iter().map(|&v| (v, confusion[v.index()])).collect(),
    })
}

/// Corpus ROUGE: unweighted mean of per-example scores.
pub fn corpus_rouge<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>]) -> Result<RougeScores> {
    if hyps.len() != refs.len() {
        return Err(Error::Contract(format!(
            "{} hypotheses vs {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let n = hyps.len().max(1) as f64;
    let mut acc = [[0.0; 3]; 3];
    for (h, r) in hyps.iter().zip(refs) {
        let s = RougeScores::score(h, r);
        for (row, prf) in acc.iter_mut().zip([s.r1, s.r2, s.rl]) {
            row[0] += prf.precision;
            row[1] += prf.recall;
            row[2] += prf.f1;
        }
    }
    let mean = |row: [f64; 3]| Prf {
        precision: row[0] / n,
        recall: row[1] / n,
        f1: row[2] / n,
    };
    Ok(RougeScores {
        r1: mean(acc[0]),
        r2: mean(acc[1]),
        rl: mean(acc[2]),
    })
}

/// Corpus ROUGE plus factual F1 of extracted fact vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub rouge: RougeScores,
    pub factual: FactualReport,
}

impl EvalMetrics {
    /// Flat `key=value` pairs: `r1`, `r2`, `rl`, `factual_f1`, `f1.<variable>`.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("r1".to_string(), format!("{:.6}", self.rouge.r1.f1)),
            ("r2".to_string(), format!("{:.6}", self.rouge.r2.f1)),
            ("rl".to_string(), format!("{:.6}", self.rouge.rl.f1)),
            ("factual_f1".to_string(), format!("{:.6}", self.factual.macro_f1)),
        ];
        for (v, f) in &self.factual.per_variable_f1 {
            out.push((format!("f1.{}", v.key()), format!("{f:.6}")));
        }
        out
    }
}

pub fn evaluate_summaries<S: AsRef<str>>(hyps: &[Vec<S>], refs: &[Vec<S>], rules: &RuleSet) -> Result<EvalMetrics> {
    let rouge = corpus_rouge(hyps, refs)?;
    let pred: Vec<FactVector> = hyps.iter().map(|h| extract_facts(h, rules)).collect();
    let gold: Vec<FactVector> = refs.iter().map(|r| extract_facts(r, rules)).collect();
    Ok(EvalMetrics {
        rouge,
        factual: macro_factual_f1(&pred, &gold)?,
    })
}

/// Paired bootstrap on the mean of per-example values.
///
/// Returns the fraction of resamples in which `b` does at least as well as
/// `a`, i.e. a one-sided p-value for "a is better".
pub fn bootstrap_compare(a: &[f64], b: &[f64], n_resamples: usize, seed: u64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!("paired samples of length {} vs {}", a.len(), b.len())));
    }
    let mean = |xs: &[f64], idx: &[usize]| idx.iter().map(|&i| xs[i]).sum::<f64>() / idx.len() as f64;
    bootstrap_compare_with(a.len(), n_resamples, seed, |idx| (mean(a, idx), mean(b, idx)))
}

/// Paired bootstrap over example indices for a corpus-level statistic.
///
/// `stat` maps a resampled index list to the statistic of system A and B.
pub fn bootstrap_compare_with<F>(n_examples: usize, n_resamples: usize, seed: u64, mut stat: F) -> Result<f64>
where
    F: FnMut(&[usize]) -> (f64, f64),
{
    if n_resamples < 1000 {
        return Err(Error::Contract(format!("n_resamples must be >= 1000, got {n_resamples}")));
    }
    if n_examples == 0 {
        return Err(Error::Contract("bootstrap over an empty sample".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = vec![0usize; n_examples];
    let mut not_better = 0usize;
    for _ in 0..n_resamples {
        for slot in idx.iter_mut() {
            *slot = rng.gen_range(0..n_examples);
        }
        let (sa, sb) = stat(&idx);
        if sb >= sa {
            not_better += 1;
        }
    }
    Ok(not_better as f64 / n_resamples as f64)
}

/// Most frequent item with its count; ties break toward the smallest item.
pub fn mode<T: Ord + Hash + Clone>(items: impl IntoIterator<Item = T>) -> Option<(T, usize)> {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for it in items {
        *counts.entry(it).or_insert(0) += 1;
    }
    counts
        .into_iter()
        .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.cmp(a)))
}
