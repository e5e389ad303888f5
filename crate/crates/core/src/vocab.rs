//! Token vocabularies.

use std::collections::HashMap;
use std::path::Path;

use crate::{Error, Result};

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";

pub const UNK_ID: usize = 0;
pub const BOS_ID: usize = 1;
pub const EOS_ID: usize = 2;

/// Token counts ordered by descending frequency, then lexicographically.
pub fn frequency_order<'a, I, S>(sequences: I) -> Vec<(String, usize)>
where
    I: IntoIterator<Item = &'a [S]>,
    S: AsRef<str> + 'a,
{
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for seq in sequences {
        for t in seq {
            *counts.entry(t.as_ref()).or_insert(0) += 1;
        }
    }
    let mut out: Vec<(String, usize)> = counts.into_iter().map(|(t, c)| (t.to_string(), c)).collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

/// Vocabulary over every section of the given (training) reports.
pub fn build_vocab(reports: &[crate::corpus::Report], min_count: usize) -> Vocab {
    let counts = frequency_order(
        reports
            .iter()
            .flat_map(|r| [&r.background[..], &r.findings[..], &r.summary[..]]),
    );
    Vocab::from_counts(&counts, min_count)
}

/// Model vocabulary: the three special tokens followed by corpus tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<I: IntoIterator<Item = String>>(tokens: I) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for t in [UNK, BOS, EOS].into_iter().map(String::from).chain(tokens) {
            if !v.index.contains_key(&t) {
                v.index.insert(t.clone(), v.tokens.len());
                v.tokens.push(t);
            }
        }
        v
    }

    /// Tokens seen at least `min_count` times, most frequent first.
    pub fn from_counts(counts: &[(String, usize)], min_count: usize) -> Self {
        Vocab::new(counts.iter().filter(|(_, c)| *c >= min_count).map(|(t, _)| t.clone()))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Corpus tokens only, one per line.
    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = String::new();
        for t in &self.tokens[3..] {
            text.push_str(t);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Vocab::new(
            text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from),
        ))
    }
}
