use std::path::Path;

use anyhow::{bail, Context, Result};
use factsum::corpus::CorpusConfig;
use factsum::kv::{self, Value};
use factsum::{ModelConfig, RewardWeights, TrainConfig};

/// Settings merged from built-in defaults, an optional config file and
/// `--set section.key=value` overrides, in that order of precedence.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub corpus: CorpusConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub reward: RewardWeights,
    pub min_count: usize,
    pub beam_size: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            corpus: CorpusConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            reward: RewardWeights::default(),
            min_count: 1,
            beam_size: 5,
        }
    }
}

impl RunConfig {
    pub fn load(file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(path) = file {
            let doc = kv::parse_file(path)?;
            if let Some(e) = doc.root().entries.first() {
                bail!("{}:{}: key {:?} must be inside a section", path.display(), e.line, e.key);
            }
            for section in &doc.sections {
                if section.name.is_empty() {
                    continue;
                }
                for e in &section.entries {
                    let Value::Scalar(v) = &e.value else {
                        bail!("{}:{}: {}.{} takes a single value", path.display(), e.line, section.name, e.key);
                    };
                    cfg.set(&section.name, &e.key, v)
                        .with_context(|| format!("{}:{}", path.display(), e.line))?;
                }
            }
        }
        for o in overrides {
            let (k, v) = o
                .split_once('=')
                .with_context(|| format!("override {o:?} is not section.key=value"))?;
            let (section, key) = k
                .split_once('.')
                .with_context(|| format!("override key {k:?} is not section.key"))?;
            cfg.set(section.trim(), key.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "corpus" => self.corpus.set(key, value)?,
            "model" => self.model.set(key, value)?,
            "train" => self.train.set(key, value)?,
            "reward" => self.reward.set(key, value)?,
            "data" => match key {
                "min_count" => self.min_count = value.parse().with_context(|| format!("data.min_count={value:?}"))?,
                _ => bail!("unknown key data.{key}"),
            },
            "decode" => match key {
                "beam_size" => self.beam_size = value.parse().with_context(|| format!("decode.beam_size={value:?}"))?,
                _ => bail!("unknown key decode.{key}"),
            },
            _ => bail!("unknown config section [{section}]"),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        self.train.validate()?;
        self.reward.validate()?;
        if self.min_count == 0 {
            bail!("data.min_count must be >= 1");
        }
        if self.beam_size == 0 {
            bail!("decode.beam_size must be >= 1");
        }
        Ok(())
    }

    /// The fully resolved configuration in config-file syntax.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let model: Vec<(String, String)> = self
            .model
            .to_pairs()
            .into_iter()
            .filter(|(k, _)| k != "vocab_size")
            .collect();
        let sections = [
            ("corpus", self.corpus.to_pairs()),
            ("model", model),
            ("train", self.train.to_pairs()),
            ("reward", self.reward.to_pairs()),
            ("data", vec![("min_count".to_string(), self.min_count.to_string())]),
            ("decode", vec![("beam_size".to_string(), self.beam_size.to_string())]),
        ];
        for (i, (name, pairs)) in sections.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!("[{name}]\n"));
            for (k, v) in pairs {
                out.push_str(&format!("{k}={v}\n"));
            }
        }
        out
    }
}
