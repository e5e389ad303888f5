//! Synthetic chest radiograph reports with planted fact vectors.
//!
//! Every report has a background section, a findings section and a
//! compressed summary. A clinical state (present/absent per observation) is
//! sampled first; the findings render it verbosely (with negated, uncertain
//! and "no longer evident" phrasings plus fact-free filler), and the summary
//! restates the positives. The stored fact vector is the one the summary
//! expresses, so `extract_facts(summary) == facts` holds by construction.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::factext::{FactStatus, FactVector, Variable};
use crate::vocab::frequency_order;
use crate::{Error, Result};

pub const NORMAL_SUMMARY: &str = "no acute cardiopulmonary abnormality";
pub const SENTENCE_BREAK: &str = ".";

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub id: String,
    pub background: Vec<String>,
    pub findings: Vec<String>,
    pub summary: Vec<String>,
    pub facts: FactVector,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitName {
    Train,
    Dev,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Dev, SplitName::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Dev => "dev",
            SplitName::Test => "test",
        }
    }

    fn block(self) -> u64 {
        self as u64
    }
}

impl fmt::Display for SplitName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SplitName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?} (expected train, dev or test)")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub name: SplitName,
    pub reports: Vec<Report>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub train: DatasetSplit,
    pub dev: DatasetSplit,
    pub test: DatasetSplit,
}

impl Corpus {
    pub fn splits(&self) -> [&DatasetSplit; 3] {
        [&self.train, &self.dev, &self.test]
    }

    /// Token counts over every section of every report, most frequent first.
    pub fn vocabulary(&self) -> Vec<(String, usize)> {
        frequency_order(
            self.splits()
                .into_iter()
                .flat_map(|s| &s.reports)
                .flat_map(|r| [&r.background[..], &r.findings[..], &r.summary[..]]),
        )
    }

    /// Writes `train.jsonl`, `dev.jsonl`, `test.jsonl` and `vocab.txt`.
    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for split in self.splits() {
            save_dataset(split, &dir.join(format!("{}.jsonl", split.name)))?;
        }
        let vocab_path = dir.join("vocab.txt");
        let mut text = String::new();
        for (t, _) in self.vocabulary() {
            text.push_str(&t);
            text.push('\n');
        }
        std::fs::write(&vocab_path, text).map_err(|e| Error::io(&vocab_path, e))
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let load = |name: SplitName| load_dataset(&dir.join(format!("{name}.jsonl")), name);
        Ok(Corpus {
            train: load(SplitName::Train)?,
            dev: load(SplitName::Dev)?,
            test: load(SplitName::Test)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusConfig {
    pub n_reports: usize,
    /// Train, dev and test fractions.
    pub split_ratios: [f64; 3],
    /// Probability that each observation is present.
    pub prevalence: BTreeMap<Variable, f64>,
    /// Fraction of present observations written with hedged phrasing.
    pub uncertainty_rate: f64,
    /// Mean number of fact-free sentences per findings section.
    pub distractor_rate: f64,
    /// Probability that an absent observation is explicitly negated.
    pub negation_rate: f64,
    /// Probability that an absent observation is described as resolved.
    pub resolved_rate: f64,
    /// Probability that the clinical history asks about one observation.
    pub concern_rate: f64,
    pub seed: u64,
}

pub const MIN_PREVALENCE: f64 = 0.03;

impl Default for CorpusConfig {
    fn default() -> Self {
        let prevalence = [
            (Variable::Cardiomegaly, 0.25),
            (Variable::AirspaceOpacity, 0.3),
            (Variable::Edema, 0.2),
            (Variable::Consolidation, 0.12),
            (Variable::Pneumonia, 0.15),
            (Variable::Atelectasis, 0.25),
            (Variable::Pneumothorax, 0.1),
            (Variable::PleuralEffusion, 0.3),
        ]
        .into_iter()
        .collect();
        CorpusConfig {
            n_reports: 2800,
            split_ratios: [5.0 / 7.0, 1.0 / 7.0, 1.0 / 7.0],
            prevalence,
            uncertainty_rate: 0.25,
            distractor_rate: 2.5,
            negation_rate: 0.35,
            resolved_rate: 0.08,
            concern_rate: 0.4,
            seed: 1,
        }
    }
}

impl CorpusConfig {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.split_ratios.iter().sum();
        if self.split_ratios.iter().any(|r| !(0.0..=1.0).contains(r)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios must lie in [0,1] and sum to 1, got {:?}",
                self.split_ratios
            )));
        }
        for var in Variable::OBSERVED {
            let p = self.prevalence.get(&var).copied().unwrap_or(0.0);
            if !(MIN_PREVALENCE..=1.0).contains(&p) {
                return Err(Error::Config(format!(
                    "prevalence of {var} must be in [{MIN_PREVALENCE}, 1], got {p}"
                )));
            }
        }
        if self.prevalence.contains_key(&Variable::NoFinding) {
            return Err(Error::Config("no_finding is derived and takes no prevalence".into()));
        }
        for (name, r) in [
            ("uncertainty_rate", self.uncertainty_rate),
            ("negation_rate", self.negation_rate),
            ("resolved_rate", self.resolved_rate),
            ("concern_rate", self.concern_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must be in [0,1], got {r}")));
            }
        }
        if self.negation_rate + self.resolved_rate > 1.0 {
            return Err(Error::Config("negation_rate + resolved_rate must not exceed 1".into()));
        }
        if !(0.0..=20.0).contains(&self.distractor_rate) {
            return Err(Error::Config(format!(
                "distractor_rate must be in [0,20], got {}",
                self.distractor_rate
            )));
        }
        Ok(())
    }

    /// Applies one `key=value` setting; prevalences use `prevalence.<variable>`.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for corpus.{key}"));
        let float = || value.parse::<f64>().map_err(|_| bad());
        match key {
            "n_reports" => self.n_reports = value.parse().map_err(|_| bad())?,
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "split_ratios" => {
                let parts: Vec<f64> = value
                    .split(',')
                    .map(|x| x.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| bad())?;
                self.split_ratios = parts.try_into().map_err(|_| bad())?;
            }
            "uncertainty_rate" => self.uncertainty_rate = float()?,
            "distractor_rate" => self.distractor_rate = float()?,
            "negation_rate" => self.negation_rate = float()?,
            "resolved_rate" => self.resolved_rate = float()?,
            "concern_rate" => self.concern_rate = float()?,
            _ => match key.strip_prefix("prevalence.") {
                Some(var) => {
                    let var: Variable = var.parse()?;
                    self.prevalence.insert(var, float()?);
                }
                None => return Err(Error::Config(format!("unknown key corpus.{key}"))),
            },
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out = vec![
            ("n_reports".to_string(), self.n_reports.to_string()),
            (
                "split_ratios".to_string(),
                self.split_ratios.map(|r| r.to_string()).join(","),
            ),
            ("uncertainty_rate".to_string(), self.uncertainty_rate.to_string()),
            ("distractor_rate".to_string(), self.distractor_rate.to_string()),
            ("negation_rate".to_string(), self.negation_rate.to_string()),
            ("resolved_rate".to_string(), self.resolved_rate.to_string()),
            ("concern_rate".to_string(), self.concern_rate.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ];
        for (var, p) in &self.prevalence {
            out.push((format!("prevalence.{}", var.key()), p.to_string()));
        }
        out
    }

    pub fn split_sizes(&self) -> [usize; 3] {
        let dev = (self.n_reports as f64 * self.split_ratios[1]).round() as usize;
        let test = (self.n_reports as f64 * self.split_ratios[2]).round() as usize;
        let train = self.n_reports.saturating_sub(dev + test);
        [train, dev, test]
    }
}

// Template bank. `{x}` is a modified mention ("small left pleural effusion"),
// `{m}` a bare mention ("pleural effusion").

struct VariableLexicon {
    /// Mention phrases usable in running text.
    mentions: &'static [&'static str],
    /// Modifiers (severity, location) prefixed to a mention.
    modifiers: &'static [&'static str],
}

fn lexicon(var: Variable) -> VariableLexicon {
    let (mentions, modifiers): (&[&str], &[&str]) = match var {
        Variable::NoFinding => (&[], &[]),
        Variable::Cardiomegaly => (&["cardiomegaly", "enlarged cardiac silhouette"], &["mild", "moderate", "severe", "stable"]),
        Variable::AirspaceOpacity => (
            &["airspace opacity", "airspace disease", "opacity"],
            &["left basilar", "right basilar", "bibasilar", "retrocardiac", "right middle lobe", "right upper lobe"],
        ),
        Variable::Edema => (&["pulmonary edema", "interstitial edema", "edema"], &["mild", "moderate", "severe"]),
        Variable::Consolidation => (&["consolidation"], &["left lower lobe", "right lower lobe", "right upper lobe", "lingular"]),
        Variable::Pneumonia => (&["pneumonia"], &["left lower lobe", "right lower lobe", "right middle lobe", "multifocal"]),
        Variable::Atelectasis => (&["atelectasis"], &["bibasilar", "left basilar", "right basilar", "subsegmental", "plate-like"]),
        Variable::Pneumothorax => (&["pneumothorax"], &["small left", "small right", "tiny apical", "large right", "left apical"]),
        Variable::PleuralEffusion => (
            &["pleural effusion", "effusion"],
            &["small left", "small right", "moderate right", "moderate left", "large left", "small bilateral"],
        ),
    };
    VariableLexicon { mentions, modifiers }
}

const FINDINGS_POSITIVE: &[&str] = &[
    "there is {x}",
    "{x} is seen",
    "{x} is again noted",
    "{x} is present",
    "interval development of {x}",
    "persistent {x}",
];
const FINDINGS_UNCERTAIN: &[&str] = &["likely {x}", "possible {x}", "findings raise concern for {x}", "probable {x}"];
const FINDINGS_NEGATIVE: &[&str] = &["no {m}", "there is no {m}", "no evidence of {m}", "{m} is not seen", "lungs are free of {m}"];
const FINDINGS_NEGATIVE_PAIR: &[&str] = &["no {m} or {m2}", "there is no {m} or {m2}"];
const FINDINGS_POSITIVE_BUT_NEGATIVE: &[&str] = &["{x} but no {m2}", "there is {x} but no {m2}"];
const FINDINGS_RESOLVED: &[&str] = &[
    "previously seen {x} is no longer evident",
    "{x} has resolved",
    "interval resolution of {x}",
];
const DISTRACTORS: &[&str] = &[
    "lines and tubes are unchanged",
    "the mediastinal contours are within normal limits",
    "osseous structures are intact",
    "no acute osseous abnormality",
    "thoracic aorta appears calcified and mildly tortuous",
    "median sternotomy wires are intact",
    "right ij central venous catheter tip overlies the svc",
    "comparison is made to prior study from <date>",
    "the lungs are well expanded",
    "degenerative changes of the thoracic spine",
    "no significant interval change",
    "single portable view of the chest obtained at <time>",
];
const HEART_NORMAL: &str = "heart size is normal";

const SUMMARY_POSITIVE: &[&str] = &["{x}", "{x} is seen", "findings consistent with {x}"];
const SUMMARY_UNCERTAIN: &[&str] = &["likely {x}", "possible {x}", "{x} , possibly infection"];
const SUMMARY_NEGATIVE: &[&str] = &["no {m}", "no evidence of {m}", "{m} is not seen"];

const STUDIES: &[&str] = &[
    "radiographic examination of the chest",
    "chest radiograph single view",
    "pa and lateral views of the chest",
    "portable chest radiograph",
];
const HISTORIES: &[&str] = &[
    "cough",
    "fever",
    "shortness of breath",
    "chest pain",
    "hypoxia",
    "post op cardiac surgery",
];
const CONCERN_HISTORIES: &[&str] = &["evaluate for {m}", "rule out {m}"];

fn fill(template: &str, x: &str, m: &str, m2: &str) -> String {
    template.replace("{x}", x).replace("{m2}", m2).replace("{m}", m)
}

fn words(s: &str) -> impl Iterator<Item = String> + '_ {
    s.split_whitespace().map(String::from)
}

fn join_sentences(sentences: &[String]) -> Vec<String> {
    let mut out = Vec::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push(SENTENCE_BREAK.to_string());
        }
        out.extend(words(s));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Rendering {
    Positive,
    Uncertain,
    Negated,
    Resolved,
    Silent,
}

/// A generated report plus the statuses its findings section expresses.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedReport {
    pub report: Report,
    pub findings_facts: FactVector,
}

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items[rng.gen_range(0..items.len())]
}

fn poisson<R: Rng>(rng: &mut R, mean: f64) -> usize {
    // Knuth; `mean` is small.
    let l = (-mean).exp();
    let mut k = 0;
    let mut p = 1.0;
    loop {
        p *= rng.gen::<f64>();
        if p <= l {
            return k;
        }
        k += 1;
    }
}

fn render_report<R: Rng>(rng: &mut R, cfg: &CorpusConfig, id: String) -> AnnotatedReport {
    let present: Vec<bool> = Variable::OBSERVED
        .iter()
        .map(|v| rng.gen::<f64>() < cfg.prevalence[v])
        .collect();
    let concern = (rng.gen::<f64>() < cfg.concern_rate).then(|| rng.gen_range(0..Variable::OBSERVED.len()));

    let mut renderings = Vec::with_capacity(8);
    for (k, &is_present) in present.iter().enumerate() {
        let r = if is_present {
            if rng.gen::<f64>() < cfg.uncertainty_rate {
                Rendering::Uncertain
            } else {
                Rendering::Positive
            }
        } else if concern == Some(k) {
            Rendering::Negated
        } else {
            let u = rng.gen::<f64>();
            if u < cfg.negation_rate {
                Rendering::Negated
            } else if u < cfg.negation_rate + cfg.resolved_rate {
                Rendering::Resolved
            } else {
                Rendering::Silent
            }
        };
        renderings.push(r);
    }

    // One modified mention per observation, shared by findings and summary.
    let phrases: Vec<(String, &str)> = Variable::OBSERVED
        .iter()
        .map(|&v| {
            let lex = lexicon(v);
            let m = pick(rng, lex.mentions);
            (format!("{} {}", pick(rng, lex.modifiers), m), m)
        })
        .collect();

    let mut findings_facts = FactVector::default();
    let mut sentences: Vec<(String, Option<usize>)> = Vec::new();
    let mut negated: Vec<usize> = Vec::new();
    for (k, r) in renderings.iter().enumerate() {
        let var = Variable::OBSERVED[k];
        let (x, m) = (&phrases[k].0, phrases[k].1);
        match r {
            Rendering::Positive => {
                findings_facts.set(var, FactStatus::Positive);
                sentences.push((fill(pick(rng, FINDINGS_POSITIVE), x, m, ""), Some(k)));
            }
            Rendering::Uncertain => {
                findings_facts.set(var, FactStatus::Positive);
                sentences.push((fill(pick(rng, FINDINGS_UNCERTAIN), x, m, ""), Some(k)));
            }
            Rendering::Resolved => {
                findings_facts.set(var, FactStatus::Negative);
                sentences.push((fill(pick(rng, FINDINGS_RESOLVED), x, m, ""), None));
            }
            Rendering::Negated => {
                findings_facts.set(var, FactStatus::Negative);
                negated.push(k);
            }
            Rendering::Silent => {}
        }
    }
    negated.shuffle(rng);
    while let Some(k) = negated.pop() {
        let m = phrases[k].1;
        let roll = rng.gen::<f64>();
        if roll < 0.3 && !negated.is_empty() {
            let k2 = negated.pop().expect("non-empty");
            sentences.push((fill(pick(rng, FINDINGS_NEGATIVE_PAIR), "", m, phrases[k2].1), None));
        } else if roll < 0.5 {
            // Attach to a plain positive sentence to exercise the "but" scope break.
            let host = sentences
                .iter()
                .position(|(text, owner)| {
                    owner.is_some_and(|o| renderings[o] == Rendering::Positive) && !text.contains(" but ")
                });
            if let Some(h) = host {
                let owner = sentences[h].1.expect("positive owner");
                let text = fill(pick(rng, FINDINGS_POSITIVE_BUT_NEGATIVE), &phrases[owner].0, "", m);
                sentences[h] = (text, Some(owner));
            } else {
                sentences.push((fill(pick(rng, FINDINGS_NEGATIVE), "", m, ""), None));
            }
        } else {
            sentences.push((fill(pick(rng, FINDINGS_NEGATIVE), "", m, ""), None));
        }
    }

    let mut filler: Vec<&str> = DISTRACTORS.to_vec();
    if !present[Variable::Cardiomegaly.index() - 1] {
        filler.push(HEART_NORMAL);
    }
    filler.shuffle(rng);
    let n_distractors = poisson(rng, cfg.distractor_rate).min(filler.len());
    let mut filler_iter = filler.into_iter();
    for s in filler_iter.by_ref().take(n_distractors) {
        sentences.push((s.to_string(), None));
    }
    sentences.shuffle(rng);
    let mut findings = join_sentences(&sentences.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
    // Findings shorter than 10 tokens get more filler.
    while findings.len() < 10 {
        let s = filler_iter.next().unwrap_or("the lungs are well expanded");
        sentences.push((s.to_string(), None));
        findings = join_sentences(&sentences.iter().map(|(s, _)| s.clone()).collect::<Vec<_>>());
    }

    // Summary: positives in findings order, then the pertinent negative.
    let mut facts = FactVector::default();
    let mut summary_sentences = Vec::new();
    for (_, owner) in &sentences {
        let Some(k) = *owner else { continue };
        let (x, m) = (&phrases[k].0, phrases[k].1);
        let template = match renderings[k] {
            Rendering::Uncertain => pick(rng, SUMMARY_UNCERTAIN),
            _ => pick(rng, SUMMARY_POSITIVE),
        };
        summary_sentences.push(fill(template, x, m, ""));
        facts.set(Variable::OBSERVED[k], FactStatus::Positive);
    }
    if summary_sentences.is_empty() {
        summary_sentences.push(NORMAL_SUMMARY.to_string());
        facts.set(Variable::NoFinding, FactStatus::Positive);
    } else if let Some(k) = concern.filter(|&k| !present[k]) {
        summary_sentences.push(fill(pick(rng, SUMMARY_NEGATIVE), "", phrases[k].1, ""));
        facts.set(Variable::OBSERVED[k], FactStatus::Negative);
    }
    let summary = join_sentences(&summary_sentences);

    let history = match concern {
        Some(k) => fill(pick(rng, CONCERN_HISTORIES), "", phrases[k].1, ""),
        None => pick(rng, HISTORIES).to_string(),
    };
    let background_text = format!(
        "{} . clinical history : <age> years of age , {} . comparison : <date>",
        pick(rng, STUDIES),
        history
    );

    AnnotatedReport {
        report: Report {
            id,
            background: words(&background_text).collect(),
            findings,
            summary,
            facts,
        },
        findings_facts,
    }
}

fn block_rng(seed: u64, block: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(block + 1);
    rng
}

/// Generates all three splits along with the findings-level statuses.
pub fn generate_annotated(config: &CorpusConfig) -> Result<[(SplitName, Vec<AnnotatedReport>); 3]> {
    config.validate()?;
    let sizes = config.split_sizes();
    Ok(SplitName::ALL.map(|name| {
        let mut rng = block_rng(config.seed, name.block());
        let reports = (0..sizes[name as usize])
            .map(|i| render_report(&mut rng, config, format!("{name}-{}-{i:05}", config.seed)))
            .collect();
        (name, reports)
    }))
}

pub fn generate_corpus(config: &CorpusConfig) -> Result<Corpus> {
    let [train, dev, test] = generate_annotated(config)?.map(|(name, reports)| DatasetSplit {
        name,
        reports: reports.into_iter().map(|a| a.report).collect(),
    });
    Ok(Corpus { train, dev, test })
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    id: String,
    background: String,
    findings: String,
    summary: String,
    facts: BTreeMap<String, String>,
}

impl Record {
    fn from_report(r: &Report) -> Self {
        Record {
            id: r.id.clone(),
            background: r.background.join(" "),
            findings: r.findings.join(" "),
            summary: r.summary.join(" "),
            facts: r.facts.to_map(),
        }
    }

    fn into_report(self) -> Result<Report> {
        let toks = |s: String| s.split_whitespace().map(String::from).collect::<Vec<_>>();
        Ok(Report {
            facts: FactVector::from_map(&self.facts)?,
            id: self.id,
            background: toks(self.background),
            findings: toks(self.findings),
            summary: toks(self.summary),
        })
    }
}

pub fn write_reports(reports: &[Report], mut w: impl Write) -> std::io::Result<()> {
    for r in reports {
        serde_json::to_writer(&mut w, &Record::from_report(r))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_dataset(split: &DatasetSplit, path: &Path) -> Result<()> {
    let mut buf = Vec::new();
    write_reports(&split.reports, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_reports(r: impl BufRead, origin: &Path) -> Result<Vec<Report>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(origin, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::parse(origin, i + 1, e.to_string()))?;
        out.push(rec.into_report().map_err(|e| Error::parse(origin, i + 1, e.to_string()))?);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path, name: SplitName) -> Result<DatasetSplit> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(DatasetSplit {
        name,
        reports: read_reports(BufReader::new(f), path)?,
    })
}
