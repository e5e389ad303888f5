//! Plain-text key/value documents.
//!
//! The format is shared by rule files, run configs and checkpoint headers:
//!
//! ```text
//! # comment
//! window=5
//! negation=
//! no
//! free of
//!
//! [edema]
//! mention=
//! edema
//! pulmonary edema
//! ```
//!
//! `key=value` sets a scalar, `key=` with nothing after it opens a list whose
//! items are the following non-blank lines, and `[name]` opens a section.
//! Keys outside any section live in the unnamed root section.

use std::fmt::Write as _;
use std::path::Path;

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Scalar(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: Value,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    pub fn get(&self, key: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.key == key)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Document {
    /// Root section first, then named sections in file order.
    pub sections: Vec<Section>,
}

impl Document {
    pub fn root(&self) -> &Section {
        &self.sections[0]
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().skip(1).find(|s| s.name == name)
    }

    /// Flattens to `(section.key, scalar)` pairs; root keys carry no prefix.
    pub fn flat_scalars(&self) -> Vec<(String, String, usize)> {
        let mut out = Vec::new();
        for section in &self.sections {
            for e in &section.entries {
                if let Value::Scalar(v) = &e.value {
                    let key = if section.name.is_empty() {
                        e.key.clone()
                    } else {
                        format!("{}.{}", section.name, e.key)
                    };
                    out.push((key, v.clone(), e.line));
                }
            }
        }
        out
    }
}

pub fn parse_str(text: &str, origin: &Path) -> Result<Document> {
    let mut doc = Document {
        sections: vec![Section::default()],
    };
    let mut open_list = false;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| Error::parse(origin, line_no, "unterminated section header"))?
                .trim();
            if name.is_empty() {
                return Err(Error::parse(origin, line_no, "empty section name"));
            }
            doc.sections.push(Section {
                name: name.to_string(),
                line: line_no,
                entries: Vec::new(),
            });
            open_list = false;
            continue;
        }
        let section = doc.sections.last_mut().expect("root section");
        if let Some((key, value)) = line.split_once('=') {
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(origin, line_no, "missing key before '='"));
            }
            if key.contains(char::is_whitespace) {
                return Err(Error::parse(origin, line_no, format!("malformed key {key:?}")));
            }
            let value = value.trim();
            if section.get(key).is_some() {
                return Err(Error::parse(origin, line_no, format!("duplicate key {key:?}")));
            }
            let value = if value.is_empty() {
                open_list = true;
                Value::List(Vec::new())
            } else {
                open_list = false;
                Value::Scalar(value.to_string())
            };
            section.entries.push(Entry {
                key: key.to_string(),
                value,
                line: line_no,
            });
        } else if open_list {
            if let Some(Entry {
                value: Value::List(items),
                ..
            }) = section.entries.last_mut()
            {
                items.push(line.to_string());
            }
        } else {
            return Err(Error::parse(
                origin,
                line_no,
                format!("expected key=value, found {line:?}"),
            ));
        }
    }
    Ok(doc)
}

pub fn parse_file(path: &Path) -> Result<Document> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_str(&text, path)
}

/// Renders flat `section.key=value` pairs back into a sectioned document.
/// Pairs must be grouped by section, root keys first.
pub fn render_flat(pairs: &[(String, String)]) -> String {
    let mut out = String::new();
    let mut current = String::new();
    for (key, value) in pairs {
        let (section, key) = match key.split_once('.') {
            Some((s, k)) => (s, k),
            None => ("", key.as_str()),
        };
        if section != current {
            if !out.is_empty() {
                out.push('\n');
            }
            let _ = writeln!(out, "[{section}]");
            current = section.to_string();
        }
        let _ = writeln!(out, "{key}={value}");
    }
    out
}
