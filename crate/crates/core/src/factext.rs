//! Rule-based fact extraction over nine chest radiograph observations.
//!
//! Mentions are matched as phrases inside a sentence. A negation cue within
//! `window` tokens before a mention (or a post-negation cue within `window`
//! tokens after it) marks the mention negative; the scope never crosses a
//! sentence boundary or a scope-breaking conjunction such as "but".
//! Uncertain mentions count as positive.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::kv::{self, Value};
use crate::{Error, Result};

/// Clinical variables in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variable {
    NoFinding,
    Cardiomegaly,
    AirspaceOpacity,
    Edema,
    Consolidation,
    Pneumonia,
    Atelectasis,
    Pneumothorax,
    PleuralEffusion,
}

impl Variable {
    pub const ALL: [Variable; 9] = [
        Variable::NoFinding,
        Variable::Cardiomegaly,
        Variable::AirspaceOpacity,
        Variable::Edema,
        Variable::Consolidation,
        Variable::Pneumonia,
        Variable::Atelectasis,
        Variable::Pneumothorax,
        Variable::PleuralEffusion,
    ];

    /// The eight observations that are mentioned directly; `NoFinding` is derived.
    pub const OBSERVED: [Variable; 8] = [
        Variable::Cardiomegaly,
        Variable::AirspaceOpacity,
        Variable::Edema,
        Variable::Consolidation,
        Variable::Pneumonia,
        Variable::Atelectasis,
        Variable::Pneumothorax,
        Variable::PleuralEffusion,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn key(self) -> &'static str {
        match self {
            Variable::NoFinding => "no_finding",
            Variable::Cardiomegaly => "cardiomegaly",
            Variable::AirspaceOpacity => "airspace_opacity",
            Variable::Edema => "edema",
            Variable::Consolidation => "consolidation",
            Variable::Pneumonia => "pneumonia",
            Variable::Atelectasis => "atelectasis",
            Variable::Pneumothorax => "pneumothorax",
            Variable::PleuralEffusion => "pleural_effusion",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Variable::NoFinding => "No Finding",
            Variable::Cardiomegaly => "Cardiomegaly",
            Variable::AirspaceOpacity => "Airspace Opacity",
            Variable::Edema => "Edema",
            Variable::Consolidation => "Consolidation",
            Variable::Pneumonia => "Pneumonia",
            Variable::Atelectasis => "Atelectasis",
            Variable::Pneumothorax => "Pneumothorax",
            Variable::PleuralEffusion => "Pleural Effusion",
        }
    }
}

impl fmt::Display for Variable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Variable {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variable::ALL
            .into_iter()
            .find(|v| v.key() == s)
            .ok_or_else(|| Error::Config(format!("unknown variable {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum FactStatus {
    Positive,
    Negative,
    #[default]
    NotMentioned,
}

impl FactStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            FactStatus::Positive => "positive",
            FactStatus::Negative => "negative",
            FactStatus::NotMentioned => "not_mentioned",
        }
    }
}

impl fmt::Display for FactStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FactStatus {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "positive" => Ok(FactStatus::Positive),
            "negative" => Ok(FactStatus::Negative),
            "not_mentioned" => Ok(FactStatus::NotMentioned),
            other => Err(Error::Config(format!("unknown fact status {other:?}"))),
        }
    }
}

/// Per-variable status in canonical [`Variable::ALL`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct FactVector {
    statuses: [FactStatus; 9],
}

impl FactVector {
    pub fn new(statuses: [FactStatus; 9]) -> Self {
        FactVector { statuses }
    }

    pub fn all_not_mentioned() -> Self {
        Self::default()
    }

    pub fn get(&self, var: Variable) -> FactStatus {
        self.statuses[var.index()]
    }

    pub fn set(&mut self, var: Variable, status: FactStatus) {
        self.statuses[var.index()] = status;
    }

    pub fn statuses(&self) -> &[FactStatus; 9] {
        &self.statuses
    }

    pub fn variables(&self) -> &'static [Variable] {
        &Variable::ALL
    }

    pub fn iter(&self) -> impl Iterator<Item = (Variable, FactStatus)> + '_ {
        Variable::ALL.iter().copied().zip(self.statuses.iter().copied())
    }

    pub fn to_map(&self) -> BTreeMap<String, String> {
        self.iter()
            .map(|(v, s)| (v.key().to_string(), s.as_str().to_string()))
            .collect()
    }

    /// Missing variables default to `NotMentioned`.
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut out = FactVector::default();
        for (k, v) in map {
            out.set(k.parse()?, v.parse()?);
        }
        Ok(out)
    }
}

/// Status of a single mention before uncertain collapses to positive.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentionStatus {
    Positive,
    Uncertain,
    Negative,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mention {
    pub variable: Variable,
    pub sentence: usize,
    pub start: usize,
    pub len: usize,
    pub status: MentionStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleSet {
    /// Indexed by `Variable::index()`; empty for `NoFinding`.
    mentions: Vec<Vec<Vec<String>>>,
    normal: Vec<Vec<String>>,
    negation: Vec<Vec<String>>,
    post_negation: Vec<Vec<String>>,
    uncertainty: Vec<Vec<String>>,
    breakers: Vec<String>,
    sentence_breaks: Vec<String>,
    window: usize,
}

pub const DEFAULT_RULES: &str = include_str!("../rules/default.rules");

fn split_phrases(items: &[String]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for item in items {
        let toks: Vec<String> = item.split_whitespace().map(str::to_lowercase).collect();
        if !toks.is_empty() && !out.contains(&toks) {
            out.push(toks);
        }
    }
    // Longest phrases first so "pleural effusion" wins over "effusion".
    out.sort_by_key(|p| std::cmp::Reverse(p.len()));
    out
}

impl RuleSet {
    pub fn default_rules() -> Self {
        Self::parse(DEFAULT_RULES, Path::new("<default rules>")).expect("shipped rules parse")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let doc = kv::parse_str(text, origin)?;
        let root = doc.root();
        let list = |key: &str| -> Result<Vec<String>> {
            match root.get(key).map(|e| &e.value) {
                None => Ok(Vec::new()),
                Some(Value::List(items)) => Ok(items.clone()),
                Some(Value::Scalar(s)) => Ok(vec![s.clone()]),
            }
        };
        let window = match root.get("window").map(|e| &e.value) {
            Some(Value::Scalar(s)) => s
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("window must be a positive integer, got {s:?}")))?,
            None => return Err(Error::Config("rule file missing window=".into())),
            Some(Value::List(_)) => return Err(Error::Config("window must be a scalar".into())),
        };
        if window < 1 {
            return Err(Error::Config("window must be >= 1".into()));
        }
        for e in &root.entries {
            if ![
                "window",
                "negation",
                "post_negation",
                "uncertainty",
                "breakers",
                "sentence_breaks",
                "normal",
            ]
            .contains(&e.key.as_str())
            {
                return Err(Error::parse(origin, e.line, format!("unknown key {:?}", e.key)));
            }
        }

        let mut mentions = vec![Vec::new(); Variable::ALL.len()];
        for section in doc.sections.iter().skip(1) {
            let var: Variable = section.name.parse().map_err(|_| {
                Error::parse(origin, section.line, format!("unknown variable {:?}", section.name))
            })?;
            if var == Variable::NoFinding {
                return Err(Error::parse(
                    origin,
                    section.line,
                    "no_finding is derived; use the root normal= list",
                ));
            }
            let items = match section.get("mention").map(|e| &e.value) {
                Some(Value::List(items)) => items.clone(),
                Some(Value::Scalar(s)) => vec![s.clone()],
                None => Vec::new(),
            };
            mentions[var.index()] = split_phrases(&items);
        }
        for var in Variable::OBSERVED {
            if mentions[var.index()].is_empty() {
                return Err(Error::Config(format!("empty mention list for {var}")));
            }
        }
        let normal = split_phrases(&list("normal")?);
        if normal.is_empty() {
            return Err(Error::Config("empty normal= phrase list".into()));
        }
        let mut breakers: Vec<String> = list("breakers")?;
        if breakers.is_empty() {
            breakers.push("but".into());
        }
        let mut sentence_breaks: Vec<String> = list("sentence_breaks")?;
        if sentence_breaks.is_empty() {
            sentence_breaks.push(".".into());
        }
        Ok(RuleSet {
            mentions,
            normal,
            negation: split_phrases(&list("negation")?),
            post_negation: split_phrases(&list("post_negation")?),
            uncertainty: split_phrases(&list("uncertainty")?),
            breakers,
            sentence_breaks,
            window,
        })
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn mention_phrases(&self, var: Variable) -> &[Vec<String>] {
        &self.mentions[var.index()]
    }

    pub fn variable_count(&self) -> usize {
        Variable::ALL.len()
    }

    /// Every token that occurs in any phrase of the rule set.
    pub fn lexicon(&self) -> Vec<String> {
        let mut toks: Vec<String> = self
            .mentions
            .iter()
            .flatten()
            .chain(&self.normal)
            .chain(&self.negation)
            .chain(&self.post_negation)
            .chain(&self.uncertainty)
            .flatten()
            .cloned()
            .collect();
        toks.sort();
        toks.dedup();
        toks
    }

    fn is_sentence_break(&self, tok: &str) -> bool {
        self.sentence_breaks.iter().any(|b| b == tok)
    }

    fn is_breaker(&self, tok: &str) -> bool {
        self.breakers.iter().any(|b| b == tok)
    }
}

fn matches_at<S: AsRef<str>>(sent: &[S], at: usize, phrase: &[String]) -> bool {
    at + phrase.len() <= sent.len()
        && phrase
            .iter()
            .zip(&sent[at..at + phrase.len()])
            .all(|(p, t)| p == t.as_ref())
}

/// Positions (start, len) of cue phrases in a sentence, non-overlapping, longest first.
fn find_cues<S: AsRef<str>>(sent: &[S], cues: &[Vec<String>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < sent.len() {
        if let Some(c) = cues.iter().find(|c| matches_at(sent, i, c)) {
            out.push((i, c.len()));
            i += c.len();
        } else {
            i += 1;
        }
    }
    out
}

/// Splits at sentence-break tokens; breaks themselves are dropped.
fn sentences<'a, S: AsRef<str>>(tokens: &'a [S], rules: &RuleSet) -> Vec<&'a [S]> {
    tokens
        .split(|t| rules.is_sentence_break(t.as_ref()))
        .filter(|s| !s.is_empty())
        .collect()
}

fn scope_clear<S: AsRef<str>>(sent: &[S], from: usize, to: usize, rules: &RuleSet) -> bool {
    sent[from..to].iter().all(|t| !rules.is_breaker(t.as_ref()))
}

/// All mentions found in `tokens`, with per-mention status.
pub fn find_mentions<S: AsRef<str>>(tokens: &[S], rules: &RuleSet) -> Vec<Mention> {
    let mut out = Vec::new();
    for (sent_idx, sent) in sentences(tokens, rules).into_iter().enumerate() {
        let neg = find_cues(sent, &rules.negation);
        let post = find_cues(sent, &rules.post_negation);
        let unc = find_cues(sent, &rules.uncertainty);

        let mut i = 0;
        while i < sent.len() {
            let hit = Variable::OBSERVED.iter().find_map(|&var| {
                rules.mentions[var.index()]
                    .iter()
                    .find(|p| matches_at(sent, i, p))
                    .map(|p| (var, p.len()))
            });
            let Some((variable, len)) = hit else {
                i += 1;
                continue;
            };
            let start = i;
            let end = i + len;
            // Cue ends within `window` tokens before the mention.
            let before = |&(cs, cl): &(usize, usize)| {
                let ce = cs + cl;
                ce <= start && start - ce < rules.window && scope_clear(sent, ce, start, rules)
            };
            // Cue starts within `window` tokens after the mention.
            let after = |&(cs, _): &(usize, usize)| {
                cs >= end && cs - end < rules.window && scope_clear(sent, end, cs, rules)
            };
            let status = if neg.iter().any(before) || post.iter().any(after) {
                MentionStatus::Negative
            } else if unc.iter().any(before) || unc.iter().any(after) {
                MentionStatus::Uncertain
            } else {
                MentionStatus::Positive
            };
            out.push(Mention {
                variable,
                sentence: sent_idx,
                start,
                len,
                status,
            });
            i = end;
        }
    }
    out
}

/// Maps a lowercase token sequence to a fact vector.
///
/// A variable with several mentions is positive if any mention is positive
/// (or uncertain), otherwise negative.
pub fn extract_facts<S: AsRef<str>>(tokens: &[S], rules: &RuleSet) -> FactVector {
    let mut facts = FactVector::default();
    for m in find_mentions(tokens, rules) {
        let status = match m.status {
            MentionStatus::Positive | MentionStatus::Uncertain => FactStatus::Positive,
            MentionStatus::Negative => FactStatus::Negative,
        };
        let slot = &mut facts.statuses[m.variable.index()];
        if *slot != FactStatus::Positive {
            *slot = status;
        }
    }
    let any_positive = Variable::OBSERVED
        .iter()
        .any(|&v| facts.get(v) == FactStatus::Positive);
    if !any_positive {
        let normal = sentences(tokens, rules)
            .into_iter()
            .any(|s| (0..s.len()).any(|i| rules.normal.iter().any(|p| matches_at(s, i, p))));
        if normal {
            facts.set(Variable::NoFinding, FactStatus::Positive);
        }
    }
    facts
}

/// Whitespace tokenization into lowercase tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}
