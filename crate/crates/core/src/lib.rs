//! Factual-correctness aware summarization of radiology findings.
//!
//! The crate bundles everything needed to train and evaluate a
//! background-augmented pointer-generator summarizer whose outputs are
//! fact-checked against reference summaries:
//!
//! - [`corpus`]: synthetic radiology reports with planted fact vectors.
//! - [`factext`]: a rule-based fact extractor over nine clinical variables.
//! - [`metrics`]: ROUGE, factual accuracy, macro factual F1 and a paired bootstrap.
//! - [`autodiff`]: a small reverse-mode tape over dense `f64` tensors.
//! - [`model`]: the summarizer itself (copy mechanism, background-guided decoding).
//! - [`training`]: teacher forcing, self-critical fine-tuning and decoding.
//! - [`analysis`]: n-gram profiles, generic-sentence rates, a trigram LM and LexRank.

pub mod analysis;
pub mod autodiff;
pub mod corpus;
mod error;
pub mod experiment;
pub mod factext;
pub mod kv;
pub mod metrics;
pub mod model;
pub mod training;
pub mod vocab;

pub use error::{Error, Result};
pub use factext::{FactStatus, FactVector, RuleSet, Variable};
pub use metrics::{FactualReport, Prf, RougeScores};
pub use model::{ModelConfig, Summarizer};
pub use training::{DecodeOutput, RewardWeights, TrainConfig, TrainMode};
