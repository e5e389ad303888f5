//! Style analyses of generated summaries and the LexRank extractive baseline.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const SENTENCE_BREAK: &str = ".";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NgramEntry {
    pub gram: String,
    pub count: usize,
    /// Share of all grams of this order.
    pub share: f64,
    /// Fraction of summaries containing the gram at least once.
    pub output_ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NgramProfile {
    pub n: usize,
    pub total: usize,
    pub top: Vec<NgramEntry>,
}

/// The `k` most frequent `n`-grams, ties broken lexicographically.
pub fn ngram_profile<S: AsRef<str>>(summaries: &[Vec<S>], n: usize, k: usize) -> Result<NgramProfile> {
    if n == 0 || k == 0 {
        return Err(Error::Contract("ngram_profile needs n >= 1 and k >= 1".into()));
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    let mut docs: HashMap<String, usize> = HashMap::new();
    let mut total = 0;
    for s in summaries {
        let toks: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
        let mut seen = HashSet::new();
        for w in toks.windows(n) {
            let g = w.join(" ");
            total += 1;
            *counts.entry(g.clone()).or_insert(0) += 1;
            if seen.insert(g.clone()) {
                *docs.entry(g).or_insert(0) += 1;
            }
        }
    }
    let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top = ranked
        .into_iter()
        .take(k)
        .map(|(gram, count)| NgramEntry {
            output_ratio: docs[&gram] as f64 / summaries.len() as f64,
            share: count as f64 / total as f64,
            gram,
            count,
        })
        .collect();
    Ok(NgramProfile { n, total, top })
}

/// Splits on sentence-break tokens, dropping empty sentences.
pub fn sentences<S: AsRef<str>>(tokens: &[S]) -> Vec<Vec<&str>> {
    tokens
        .split(|t| t.as_ref() == SENTENCE_BREAK)
        .filter(|s| !s.is_empty())
        .map(|s| s.iter().map(AsRef::as_ref).collect())
        .collect()
}

/// Fraction of summaries with a sentence exactly equal to `sentence`.
pub fn sentence_rate<S: AsRef<str>, T: AsRef<str>>(summaries: &[Vec<S>], sentence: &[T]) -> f64 {
    if summaries.is_empty() {
        return 0.0;
    }
    let target: Vec<&str> = sentence.iter().map(AsRef::as_ref).collect();
    let hits = summaries
        .iter()
        .filter(|s| sentences(s).contains(&target))
        .count();
    hits as f64 / summaries.len() as f64
}

/// The sentence occurring in the most summaries (counted once per summary).
pub fn most_frequent_sentence<S: AsRef<str>>(summaries: &[Vec<S>]) -> Option<(Vec<String>, usize)> {
    let per_doc = summaries.iter().flat_map(|s| {
        let uniq: HashSet<Vec<String>> = sentences(s)
            .into_iter()
            .map(|x| x.into_iter().map(String::from).collect())
            .collect();
        uniq
    });
    crate::metrics::mode(per_doc)
}

const LM_BOS: &str = "<s>";
const LM_EOS: &str = "</s>";
const LM_UNK: &str = "<unk>";

/// Add-k smoothed trigram LM with backoff to bigram and unigram estimates
/// when the history was never observed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrigramLM {
    pub k: f64,
    vocab: Vec<String>,
    unigrams: BTreeMap<String, usize>,
    bigrams: BTreeMap<String, usize>,
    trigrams: BTreeMap<String, usize>,
    bigram_histories: BTreeMap<String, usize>,
    trigram_histories: BTreeMap<String, usize>,
    events: usize,
}

fn key(parts: &[&str]) -> String {
    parts.join(" ")
}

impl TrigramLM {
    pub fn train<S: AsRef<str>>(summaries: &[Vec<S>], k: f64) -> Result<Self> {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::Contract(format!("add-k constant must be >= 0, got {k}")));
        }
        let mut vocab: std::collections::BTreeSet<String> = [LM_EOS, LM_UNK].into_iter().map(String::from).collect();
        let mut lm = TrigramLM {
            k,
            vocab: Vec::new(),
            unigrams: BTreeMap::new(),
            bigrams: BTreeMap::new(),
            trigrams: BTreeMap::new(),
            bigram_histories: BTreeMap::new(),
            trigram_histories: BTreeMap::new(),
            events: 0,
        };
        for s in summaries {
            for t in s {
                vocab.insert(t.as_ref().to_string());
            }
            let toks: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
            for (u, v, w) in Self::events(&toks) {
                *lm.unigrams.entry(w.to_string()).or_insert(0) += 1;
                *lm.bigrams.entry(key(&[v, w])).or_insert(0) += 1;
                *lm.trigrams.entry(key(&[u, v, w])).or_insert(0) += 1;
                *lm.bigram_histories.entry(v.to_string()).or_insert(0) += 1;
                *lm.trigram_histories.entry(key(&[u, v])).or_insert(0) += 1;
                lm.events += 1;
            }
        }
        lm.vocab = vocab.into_iter().collect();
        Ok(lm)
    }

    fn events<'a>(toks: &[&'a str]) -> Vec<(&'a str, &'a str, &'a str)> {
        let mut padded = vec![LM_BOS, LM_BOS];
        padded.extend_from_slice(toks);
        padded.push(LM_EOS);
        padded.windows(3).map(|w| (w[0], w[1], w[2])).collect()
    }

    /// Number of outcomes: training tokens plus EOS and UNK.
    pub fn outcomes(&self) -> usize {
        self.vocab.len()
    }

    fn known<'a>(&self, w: &'a str) -> &'a str {
        if w == LM_BOS || self.vocab.binary_search_by(|v| v.as_str().cmp(w)).is_ok() {
            w
        } else {
            LM_UNK
        }
    }

    /// `P(w | u v)`.
    pub fn prob(&self, u: &str, v: &str, w: &str) -> f64 {
        let (u, v, w) = (self.known(u), self.known(v), self.known(w));
        let kv = self.k * self.outcomes() as f64;
        let get = |m: &BTreeMap<String, usize>, k: &str| m.get(k).copied().unwrap_or(0) as f64;
        let h3 = get(&self.trigram_histories, &key(&[u, v]));
        if h3 > 0.0 {
            return (get(&self.trigrams, &key(&[u, v, w])) + self.k) / (h3 + kv);
        }
        let h2 = get(&self.bigram_histories, v);
        if h2 > 0.0 {
            return (get(&self.bigrams, &key(&[v, w])) + self.k) / (h2 + kv);
        }
        let denom = self.events as f64 + kv;
        if denom == 0.0 {
            return 0.0;
        }
        (get(&self.unigrams, w) + self.k) / denom
    }

    /// All outcomes, for normalization checks.
    pub fn outcome_tokens(&self) -> &[String] {
        &self.vocab
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("LM serializes");
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e.line(), e.to_string()))
    }
}

/// `exp` of the mean per-token negative log-likelihood, EOS included.
pub fn perplexity<S: AsRef<str>>(lm: &TrigramLM, summaries: &[Vec<S>]) -> Result<f64> {
    let mut nll = 0.0;
    let mut n = 0usize;
    for s in summaries {
        let toks: Vec<&str> = s.iter().map(AsRef::as_ref).collect();
        for (u, v, w) in TrigramLM::events(&toks) {
            nll -= lm.prob(u, v, w).ln();
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::Contract("perplexity of an empty set".into()));
    }
    Ok((nll / n as f64).exp())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LexRankConfig {
    pub top_n: usize,
    pub threshold: f64,
    pub damping: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for LexRankConfig {
    fn default() -> Self {
        LexRankConfig {
            top_n: 3,
            threshold: 0.1,
            damping: 0.85,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LexRankOutput {
    pub scores: Vec<f64>,
    /// Selected sentence indices in document order.
    pub selected: Vec<usize>,
    pub iterations: usize,
    pub converged: bool,
}

/// TF-IDF vectors with smoothed idf `ln((1 + N) / (1 + df)) + 1`.
pub fn tfidf<S: AsRef<str>>(sentences: &[Vec<S>]) -> Vec<HashMap<String, f64>> {
    let n = sentences.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for s in sentences {
        let uniq: HashSet<&str> = s.iter().map(AsRef::as_ref).collect();
        for w in uniq {
            *df.entry(w).or_insert(0) += 1;
        }
    }
    sentences
        .iter()
        .map(|s| {
            let mut v: HashMap<String, f64> = HashMap::new();
            for w in s {
                *v.entry(w.as_ref().to_string()).or_insert(0.0) += 1.0;
            }
            for (w, x) in v.iter_mut() {
                *x *= ((1.0 + n) / (1.0 + df[w.as_str()] as f64)).ln() + 1.0;
            }
            v
        })
        .collect()
}

pub fn cosine(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().filter_map(|(w, x)| b.get(w).map(|y| x * y)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Row-stochastic transition matrix of the thresholded similarity graph.
pub fn lexrank_matrix<S: AsRef<str>>(sentences: &[Vec<S>], threshold: f64) -> Vec<Vec<f64>> {
    let vecs = tfidf(sentences);
    let n = sentences.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || cosine(&vecs[i], &vecs[j]) >= threshold {
                m[i][j] = 1.0;
            }
        }
        let deg: f64 = m[i].iter().sum();
        m[i].iter_mut().for_each(|x| *x /= deg);
    }
    m
}

/// Centrality by power iteration on `p ← (1 − d)/N + d · Mᵀ p`.
pub fn lexrank<S: AsRef<str>>(sentences: &[Vec<S>], config: &LexRankConfig) -> Result<LexRankOutput> {
    if sentences.is_empty() {
        return Err(Error::Contract("lexrank needs at least one sentence".into()));
    }
    if !(config.damping > 0.0 && config.damping < 1.0) {
        return Err(Error::Contract(format!("damping must be in (0,1), got {}", config.damping)));
    }
    let n = sentences.len();
    let m = lexrank_matrix(sentences, config.threshold);
    let mut p = vec![1.0 / n as f64; n];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iterations {
        iterations += 1;
        let mut next = vec![(1.0 - config.damping) / n as f64; n];
        for (i, row) in m.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                next[j] += config.damping * x * p[i];
            }
        }
        let diff: f64 = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if diff < config.tolerance {
            converged = true;
            break;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    let mut selected: Vec<usize> = order.into_iter().take(config.top_n).collect();
    selected.sort_unstable();
    Ok(LexRankOutput {
        scores: p,
        selected,
        iterations,
        converged,
    })
}

/// Extractive summary of a findings section: the top sentences joined by breaks.
pub fn lexrank_summary<S: AsRef<str>>(findings: &[S], config: &LexRankConfig) -> Result<Vec<String>> {
    let sents = sentences(findings);
    let out = lexrank(&sents, config)?;
    let mut summary = Vec::new();
    for (i, &idx) in out.selected.iter().enumerate() {
        if i > 0 {
            summary.push(SENTENCE_BREAK.to_string());
        }
        summary.extend(sents[idx].iter().map(|t| t.to_string()));
    }
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factext::tokenize;

    #[test]
    fn trigram_profile_of_one_summary() {
        let p = ngram_profile(&[tokenize("a b c d")], 3, 10).unwrap();
        assert_eq!(p.top.len(), 2);
        assert_eq!(p.top[0].gram, "a b c");
        assert!(p.top.iter().all(|e| e.share == 0.5 && e.output_ratio == 1.0));
        let twice = ngram_profile(&[tokenize("a b c d"), tokenize("a b c d")], 3, 10).unwrap();
        assert_eq!(twice.top[0].count, 2);
        assert_eq!(twice.top[0].share, 0.5);
    }

    #[test]
    fn sentence_rates() {
        let s = vec![tokenize("no acute process . heart is big"), tokenize("heart is big")];
        assert_eq!(sentence_rate(&s, &tokenize("heart is big")), 1.0);
        assert_eq!(sentence_rate(&s, &tokenize("no acute process")), 0.5);
        assert_eq!(sentence_rate(&s, &tokenize("heart is")), 0.0);
        let (top, c) = most_frequent_sentence(&s).unwrap();
        assert_eq!((top.join(" "), c), ("heart is big".to_string(), 2));
    }

    #[test]
    fn uniform_lm_perplexity_is_outcome_count() {
        let empty: Vec<Vec<String>> = Vec::new();
        let lm = TrigramLM::train(&empty, 1.0).unwrap();
        let v = lm.outcomes() as f64;
        let ppl = perplexity(&lm, &[tokenize("x y z")]).unwrap();
        assert!((ppl - v).abs() < 1e-12);
    }

    #[test]
    fn deterministic_lm_has_unit_perplexity() {
        let data = vec![Vec::<String>::new(); 3];
        let lm = TrigramLM::train(&data, 0.0).unwrap();
        assert_eq!(perplexity(&lm, &data).unwrap(), 1.0);
    }

    #[test]
    fn conditionals_are_normalized() {
        let data = vec![tokenize("a b a c"), tokenize("b b c")];
        let lm = TrigramLM::train(&data, 0.5).unwrap();
        for (u, v) in [("<s>", "<s>"), ("a", "b"), ("c", "a"), ("zz", "b"), ("zz", "zz")] {
            let total: f64 = lm.outcome_tokens().iter().map(|w| lm.prob(u, v, w)).sum();
            assert!((total - 1.0).abs() < 1e-12, "{u} {v}: {total}");
        }
    }

    #[test]
    fn lm_file_round_trip() {
        let lm = TrigramLM::train(&[tokenize("a b c")], 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("lm.json");
        lm.save(&path).unwrap();
        assert_eq!(TrigramLM::load(&path).unwrap(), lm);
    }

    #[test]
    fn lexrank_edge_cases() {
        let one = vec![tokenize("only sentence")];
        assert_eq!(lexrank(&one, &LexRankConfig::default()).unwrap().selected, vec![0]);
        let dup = vec![tokenize("a b"), tokenize("c d"), tokenize("a b")];
        let out = lexrank(&dup, &LexRankConfig::default()).unwrap();
        assert!((out.scores[0] - out.scores[2]).abs() < 1e-12);
        assert!(out.converged);
        let s = lexrank_summary(&tokenize("a b . a c . c d . e f"), &LexRankConfig { top_n: 1, ..Default::default() })
            .unwrap();
        assert_eq!(s.join(" "), "a c");
        let s = lexrank_summary(&tokenize("e f . a b . a c . c d"), &LexRankConfig::default()).unwrap();
        // The isolated sentence keeps exactly 1/N; the chain ends tie and fall to document order.
        assert_eq!(s.join(" "), "e f . a b . a c");
    }
}
