//! Background-augmented pointer-generator summarizer.
//!
//! Findings go through a bidirectional LSTM; the background section through a
//! separate unidirectional LSTM whose final state is appended to the decoder
//! input at every step. The decoder attends over findings states and mixes
//! its vocabulary distribution with a copy distribution:
//!
//! `P(w) = p_gen · P_vocab(w) + (1 − p_gen) · Σ_{i : x_i = w} a_i`
//!
//! Source tokens outside the vocabulary get temporary ids past the end of the
//! vocabulary so the copy channel can emit them.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::Report;
use crate::kv::{self, Value};
use crate::vocab::{Vocab, BOS_ID, EOS_ID, UNK_ID};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub background_hidden: usize,
    pub max_decode_len: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 0,
            embedding_dim: 32,
            encoder_hidden: 64,
            decoder_hidden: 64,
            background_hidden: 64,
            max_decode_len: 50,
            dropout_rate: 0.5,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("embedding_dim", self.embedding_dim),
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("background_hidden", self.background_hidden),
        ];
        for (name, d) in dims {
            if d < 1 {
                return Err(Error::Config(format!("{name} must be >= 1")));
            }
        }
        if self.max_decode_len < 2 {
            return Err(Error::Config("max_decode_len must be >= 2".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout_rate must be in [0,1), got {}", self.dropout_rate)));
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("vocab_size".into(), self.vocab_size.to_string()),
            ("embedding_dim".into(), self.embedding_dim.to_string()),
            ("encoder_hidden".into(), self.encoder_hidden.to_string()),
            ("decoder_hidden".into(), self.decoder_hidden.to_string()),
            ("background_hidden".into(), self.background_hidden.to_string()),
            ("max_decode_len".into(), self.max_decode_len.to_string()),
            ("dropout_rate".into(), self.dropout_rate.to_string()),
        ]
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::Config(format!("invalid value {value:?} for model.{key}"));
        let int = || value.parse::<usize>().map_err(|_| bad());
        match key {
            "vocab_size" => self.vocab_size = int()?,
            "embedding_dim" => self.embedding_dim = int()?,
            "encoder_hidden" => self.encoder_hidden = int()?,
            "decoder_hidden" => self.decoder_hidden = int()?,
            "background_hidden" => self.background_hidden = int()?,
            "max_decode_len" => self.max_decode_len = int()?,
            "dropout_rate" => self.dropout_rate = value.parse().map_err(|_| bad())?,
            _ => return Err(Error::Config(format!("unknown key model.{key}"))),
        }
        Ok(())
    }

    fn attention_dim(&self) -> usize {
        self.decoder_hidden
    }

    fn source_dim(&self) -> usize {
        2 * self.encoder_hidden
    }

    fn decoder_input_dim(&self) -> usize {
        self.embedding_dim + self.background_hidden
    }
}

#[derive(Debug, Clone, Copy)]
struct ParamIds {
    embedding: ParamId,
    enc_fwd: (ParamId, ParamId),
    enc_bwd: (ParamId, ParamId),
    background: (ParamId, ParamId),
    init: (ParamId, ParamId),
    decoder: (ParamId, ParamId),
    att_src: ParamId,
    att_dec: ParamId,
    att_b: ParamId,
    att_v: ParamId,
    out: (ParamId, ParamId),
    gen: (ParamId, ParamId),
}

impl ParamIds {
    fn lookup(store: &ParamStore) -> Result<Self> {
        let id = |n: &str| store.id(n).ok_or_else(|| Error::Contract(format!("missing parameter {n:?}")));
        Ok(ParamIds {
            embedding: id("embedding")?,
            enc_fwd: (id("enc_fwd.w")?, id("enc_fwd.b")?),
            enc_bwd: (id("enc_bwd.w")?, id("enc_bwd.b")?),
            background: (id("background.w")?, id("background.b")?),
            init: (id("init.w")?, id("init.b")?),
            decoder: (id("decoder.w")?, id("decoder.b")?),
            att_src: id("att.src")?,
            att_dec: id("att.dec")?,
            att_b: id("att.b")?,
            att_v: id("att.v")?,
            out: (id("out.w")?, id("out.b")?),
            gen: (id("gen.w")?, id("gen.b")?),
        })
    }
}

fn param_shapes(c: &ModelConfig) -> Vec<(&'static str, Vec<usize>)> {
    let (e, he, hd, hb, a) = (
        c.embedding_dim,
        c.encoder_hidden,
        c.decoder_hidden,
        c.background_hidden,
        c.attention_dim(),
    );
    let src = c.source_dim();
    let dec_in = c.decoder_input_dim();
    vec![
        ("embedding", vec![c.vocab_size, e]),
        ("enc_fwd.w", vec![4 * he, e + he]),
        ("enc_fwd.b", vec![4 * he]),
        ("enc_bwd.w", vec![4 * he, e + he]),
        ("enc_bwd.b", vec![4 * he]),
        ("background.w", vec![4 * hb, e + hb]),
        ("background.b", vec![4 * hb]),
        ("init.w", vec![hd, src]),
        ("init.b", vec![hd]),
        ("decoder.w", vec![4 * hd, dec_in + hd]),
        ("decoder.b", vec![4 * hd]),
        ("att.src", vec![src, a]),
        ("att.dec", vec![a, hd]),
        ("att.b", vec![a]),
        ("att.v", vec![a]),
        ("out.w", vec![c.vocab_size, hd + src]),
        ("out.b", vec![c.vocab_size]),
        ("gen.w", vec![1, src + hd + dec_in]),
        ("gen.b", vec![1]),
    ]
}

/// Token ids for one report, with the per-report extended vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    /// Findings ids in the fixed vocabulary (`UNK` for unknown tokens).
    pub findings: Vec<usize>,
    /// Findings ids in the extended vocabulary.
    pub findings_ext: Vec<usize>,
    pub background: Vec<usize>,
    /// Source tokens outside the vocabulary; id `vocab_len + k` is `oovs[k]`.
    pub oovs: Vec<String>,
    /// Reference summary in extended ids, without EOS.
    pub target: Vec<usize>,
    pub vocab_len: usize,
}

impl Example {
    pub fn extended_size(&self) -> usize {
        self.vocab_len + self.oovs.len()
    }
}

/// Parameters bound to one tape.
#[derive(Debug, Clone, Copy)]
pub struct Bound {
    embedding: Var,
    enc_fwd: (Var, Var),
    enc_bwd: (Var, Var),
    background: (Var, Var),
    init: (Var, Var),
    decoder: (Var, Var),
    att_src: Var,
    att_dec: Var,
    att_b: Var,
    att_v: Var,
    out: (Var, Var),
    gen: (Var, Var),
}

#[derive(Debug, Clone, Copy)]
pub struct DecoderState {
    pub h: Var,
    pub c: Var,
}

/// Encoder outputs for one example.
#[derive(Debug, Clone)]
pub struct Encoded {
    /// One state per findings token: `[forward; backward]`.
    pub states: Vec<Var>,
    source: Var,
    source_proj: Var,
    pub background: Var,
    pub init: DecoderState,
    source_ext: Vec<usize>,
    extended_size: usize,
}

/// Tape handles produced by one decoder step.
#[derive(Debug, Clone, Copy)]
pub struct Step {
    /// Final distribution over the extended vocabulary.
    pub dist: Var,
    pub p_gen: Var,
    pub attention: Var,
    pub state: DecoderState,
}

/// Plain-value view of one step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepDistribution {
    pub final_dist: Vec<f64>,
    pub vocab_dist: Vec<f64>,
    pub p_gen: f64,
    pub attention: Vec<f64>,
}

/// Embedding dropout. Each call to `mask` draws a fresh inverted-dropout mask.
pub struct Dropout<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    fn apply(&mut self, tape: &mut Tape, x: Var) -> Result<Var> {
        if self.rate == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 - self.rate;
        let n = tape.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if self.rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let m = tape.constant(Tensor::vector(mask));
        tape.mul(x, m)
    }
}

fn maybe_dropout(d: &mut Option<Dropout<'_>>, tape: &mut Tape, x: Var) -> Result<Var> {
    match d {
        Some(d) => d.apply(tape, x),
        None => Ok(x),
    }
}

#[derive(Debug, Clone)]
pub struct Summarizer {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocab: Vocab,
    ids: ParamIds,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

impl Summarizer {
    /// Uniform(−0.1, 0.1) weights, zero biases except forget gates at 1.
    pub fn new(mut config: ModelConfig, vocab: Vocab, seed: u64) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        for (name, shape) in param_shapes(&config) {
            let n: usize = shape.iter().product();
            let mut data: Vec<f64> = if name.ends_with(".b") {
                vec![0.0; n]
            } else {
                (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect()
            };
            if matches!(name, "enc_fwd.b" | "enc_bwd.b" | "background.b" | "decoder.b") {
                let h = n / 4;
                data[h..2 * h].iter_mut().for_each(|x| *x = 1.0);
            }
            store.insert(name, Tensor::new(shape, data)?)?;
        }
        Self::from_parts(config, store, vocab)
    }

    /// Every parameter set to zero.
    pub fn zeroed(mut config: ModelConfig, vocab: Vocab) -> Result<Self> {
        config.vocab_size = vocab.len();
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape) in param_shapes(&config) {
            store.insert(name, Tensor::zeros(&shape))?;
        }
        Self::from_parts(config, store, vocab)
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore, vocab: Vocab) -> Result<Self> {
        config.validate()?;
        if config.vocab_size != vocab.len() {
            return Err(Error::Contract(format!(
                "config vocab_size {} but vocabulary has {} entries",
                config.vocab_size,
                vocab.len()
            )));
        }
        for (name, shape) in param_shapes(&config) {
            let id = params
                .id(name)
                .ok_or_else(|| Error::Contract(format!("missing parameter {name:?}")))?;
            if params.get(id).shape() != shape.as_slice() {
                return Err(Error::Shape {
                    op: "load parameters",
                    left: params.get(id).shape().to_vec(),
                    right: shape,
                });
            }
        }
        let ids = ParamIds::lookup(&params)?;
        Ok(Summarizer {
            config,
            params,
            vocab,
            ids,
        })
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }

    pub fn example(&self, report: &Report) -> Result<Example> {
        if report.findings.is_empty() {
            return Err(Error::Contract(format!("report {} has empty findings", report.id)));
        }
        let v = self.vocab.len();
        let mut oovs: Vec<String> = Vec::new();
        let mut findings = Vec::with_capacity(report.findings.len());
        let mut findings_ext = Vec::with_capacity(report.findings.len());
        for t in &report.findings {
            match self.vocab.id(t) {
                Some(id) => {
                    findings.push(id);
                    findings_ext.push(id);
                }
                None => {
                    let k = oovs.iter().position(|o| o == t).unwrap_or_else(|| {
                        oovs.push(t.clone());
                        oovs.len() - 1
                    });
                    findings.push(UNK_ID);
                    findings_ext.push(v + k);
                }
            }
        }
        let target = report
            .summary
            .iter()
            .map(|t| {
                self.vocab
                    .id(t)
                    .or_else(|| oovs.iter().position(|o| o == t).map(|k| v + k))
                    .unwrap_or(UNK_ID)
            })
            .collect();
        Ok(Example {
            findings,
            findings_ext,
            background: report.background.iter().map(|t| self.vocab.id_or_unk(t)).collect(),
            oovs,
            target,
            vocab_len: v,
        })
    }

    /// Maps extended ids back to tokens.
    pub fn tokens(&self, ex: &Example, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .map(|&id| {
                if id < self.vocab.len() {
                    self.vocab.token(id).unwrap_or("<unk>").to_string()
                } else {
                    ex.oovs.get(id - self.vocab.len()).cloned().unwrap_or_else(|| "<unk>".into())
                }
            })
            .collect()
    }

    pub fn bind(&self, tape: &mut Tape) -> Bound {
        let ids = &self.ids;
        let p = &self.params;
        let mut pair = |(w, b): (ParamId, ParamId)| (tape.param(p, w), tape.param(p, b));
        let enc_fwd = pair(ids.enc_fwd);
        let enc_bwd = pair(ids.enc_bwd);
        let background = pair(ids.background);
        let init = pair(ids.init);
        let decoder = pair(ids.decoder);
        let out = pair(ids.out);
        let gen = pair(ids.gen);
        Bound {
            embedding: tape.param(p, ids.embedding),
            enc_fwd,
            enc_bwd,
            background,
            init,
            decoder,
            att_src: tape.param(p, ids.att_src),
            att_dec: tape.param(p, ids.att_dec),
            att_b: tape.param(p, ids.att_b),
            att_v: tape.param(p, ids.att_v),
            out,
            gen,
        }
    }

    fn embed(&self, tape: &mut Tape, b: &Bound, id: usize, dropout: &mut Option<Dropout<'_>>) -> Result<Var> {
        let row = if id < self.vocab.len() { id } else { UNK_ID };
        let e = tape.embedding(b.embedding, row)?;
        maybe_dropout(dropout, tape, e)
    }

    fn run_lstm(
        &self,
        tape: &mut Tape,
        inputs: &[Var],
        (w, bias): (Var, Var),
        hidden: usize,
    ) -> Result<Vec<Var>> {
        let mut h = tape.constant(Tensor::zeros(&[hidden]));
        let mut c = tape.constant(Tensor::zeros(&[hidden]));
        let mut out = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let hc = tape.lstm_cell(x, h, c, w, bias)?;
            h = tape.slice(hc, 0, hidden)?;
            c = tape.slice(hc, hidden, hidden)?;
            out.push(h);
        }
        Ok(out)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        b: &Bound,
        ex: &Example,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<Encoded> {
        if ex.findings.is_empty() {
            return Err(Error::Contract("cannot encode empty findings".into()));
        }
        let cfg = &self.config;
        let embs = ex
            .findings
            .iter()
            .map(|&id| self.embed(tape, b, id, &mut dropout))
            .collect::<Result<Vec<_>>>()?;
        let fwd = self.run_lstm(tape, &embs, b.enc_fwd, cfg.encoder_hidden)?;
        let rev: Vec<Var> = embs.iter().rev().copied().collect();
        let mut bwd = self.run_lstm(tape, &rev, b.enc_bwd, cfg.encoder_hidden)?;
        bwd.reverse();
        let states = fwd
            .iter()
            .zip(&bwd)
            .map(|(&f, &bw)| tape.concat(&[f, bw]))
            .collect::<Result<Vec<_>>>()?;
        let source = tape.stack(&states)?;
        let source_proj = tape.matmul(source, b.att_src)?;

        let bg_embs = ex
            .background
            .iter()
            .map(|&id| self.embed(tape, b, id, &mut dropout))
            .collect::<Result<Vec<_>>>()?;
        let background = match self.run_lstm(tape, &bg_embs, b.background, cfg.background_hidden)?.last() {
            Some(&h) => h,
            None => tape.constant(Tensor::zeros(&[cfg.background_hidden])),
        };

        let summary = tape.concat(&[*fwd.last().expect("non-empty"), bwd[0]])?;
        let pre = tape.matmul(b.init.0, summary)?;
        let pre = tape.add(pre, b.init.1)?;
        let h = tape.tanh(pre);
        let c = tape.constant(Tensor::zeros(&[cfg.decoder_hidden]));
        Ok(Encoded {
            states,
            source,
            source_proj,
            background,
            init: DecoderState { h, c },
            source_ext: ex.findings_ext.clone(),
            extended_size: ex.extended_size(),
        })
    }

    pub fn decode_step(
        &self,
        tape: &mut Tape,
        b: &Bound,
        enc: &Encoded,
        state: DecoderState,
        prev: usize,
        dropout: &mut Option<Dropout<'_>>,
    ) -> Result<Step> {
        let hd = self.config.decoder_hidden;
        let emb = self.embed(tape, b, prev, dropout)?;
        let input = tape.concat(&[emb, enc.background])?;
        let hc = tape.lstm_cell(input, state.h, state.c, b.decoder.0, b.decoder.1)?;
        let h = tape.slice(hc, 0, hd)?;
        let c = tape.slice(hc, hd, hd)?;

        // Additive attention: v · tanh(W_src s_i + W_dec h + b).
        let dec_feat = tape.matmul(b.att_dec, h)?;
        let dec_feat = tape.add(dec_feat, b.att_b)?;
        let pre = tape.add_row_broadcast(enc.source_proj, dec_feat)?;
        let act = tape.tanh(pre);
        let scores = tape.matmul(act, b.att_v)?;
        let attention = tape.softmax(scores, 0)?;
        let context = tape.matmul(attention, enc.source)?;

        let hc_ctx = tape.concat(&[h, context])?;
        let logits = tape.matmul(b.out.0, hc_ctx)?;
        let logits = tape.add(logits, b.out.1)?;
        let p_vocab = tape.softmax(logits, 0)?;

        let gen_in = tape.concat(&[context, h, input])?;
        let gen = tape.matmul(b.gen.0, gen_in)?;
        let gen = tape.add(gen, b.gen.1)?;
        let p_gen = tape.sigmoid(gen);

        let vocab_part = tape.pad_to(p_vocab, enc.extended_size)?;
        let vocab_part = tape.scale_by(vocab_part, p_gen)?;
        let copy = tape.scatter_add(attention, &enc.source_ext, enc.extended_size)?;
        let copy_gate = tape.one_minus(p_gen);
        let copy = tape.scale_by(copy, copy_gate)?;
        let dist = tape.add(vocab_part, copy)?;
        Ok(Step {
            dist,
            p_gen,
            attention,
            state: DecoderState { h, c },
        })
    }

    /// Teacher-forced mean negative log-likelihood of the reference plus EOS.
    pub fn sequence_nll_on(
        &self,
        tape: &mut Tape,
        b: &Bound,
        enc: &Encoded,
        ex: &Example,
        mut dropout: Option<Dropout<'_>>,
    ) -> Result<Var> {
        if ex.target.is_empty() {
            return Err(Error::Contract("reference summary is empty".into()));
        }
        let mut state = enc.init;
        let mut prev = BOS_ID;
        let mut logps = Vec::with_capacity(ex.target.len() + 1);
        for &gold in ex.target.iter().chain(std::iter::once(&EOS_ID)) {
            let step = self.decode_step(tape, b, enc, state, prev, &mut dropout)?;
            let p = tape.pick(step.dist, gold)?;
            logps.push(tape.log(p));
            state = step.state;
            prev = gold;
        }
        let all = tape.concat(&logps)?;
        let total = tape.sum(all);
        Ok(tape.scale(total, -1.0 / logps.len() as f64))
    }

    /// Builds the full teacher-forced loss for one example on a fresh binding.
    pub fn sequence_nll(&self, tape: &mut Tape, ex: &Example, dropout_rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let b = self.bind(tape);
        let rate = self.config.dropout_rate;
        match dropout_rng {
            Some(rng) => {
                let enc = self.encode(tape, &b, ex, Some(Dropout { rate, rng: &mut *rng }))?;
                self.sequence_nll_on(tape, &b, &enc, ex, Some(Dropout { rate, rng }))
            }
            None => {
                let enc = self.encode(tape, &b, ex, None)?;
                self.sequence_nll_on(tape, &b, &enc, ex, None)
            }
        }
    }

    /// Evaluation-mode loss value.
    pub fn eval_nll(&self, ex: &Example) -> Result<f64> {
        let mut tape = Tape::new();
        let l = self.sequence_nll(&mut tape, ex, None)?;
        Ok(tape.scalar_value(l))
    }

    /// Teacher-forced step distributions for `prefix` (one per prefix token plus one).
    pub fn step_distributions(&self, ex: &Example, prefix: &[usize]) -> Result<Vec<StepDistribution>> {
        let mut tape = Tape::new();
        let b = self.bind(&mut tape);
        let enc = self.encode(&mut tape, &b, ex, None)?;
        let mut state = enc.init;
        let mut prev = BOS_ID;
        let mut out = Vec::new();
        for i in 0..=prefix.len() {
            let step = self.decode_step(&mut tape, &b, &enc, state, prev, &mut None)?;
            let p_gen = tape.scalar_value(step.p_gen);
            // Recover P_vocab from the padded, scaled part: dist − copy part.
            let attention = tape.value(step.attention).data().to_vec();
            let final_dist = tape.value(step.dist).data().to_vec();
            let mut copy = vec![0.0; final_dist.len()];
            for (&id, &a) in ex.findings_ext.iter().zip(&attention) {
                copy[id] += a;
            }
            let vocab_dist = if p_gen > 0.0 {
                final_dist[..self.vocab.len()]
                    .iter()
                    .zip(&copy)
                    .map(|(f, c)| (f - (1.0 - p_gen) * c) / p_gen)
                    .collect()
            } else {
                Vec::new()
            };
            out.push(StepDistribution {
                final_dist,
                vocab_dist,
                p_gen,
                attention,
            });
            if i < prefix.len() {
                prev = prefix[i];
                state = step.state;
            }
        }
        Ok(out)
    }

    /// Writes `params.bin`, `model.conf` and `vocab.txt` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.params.save(&dir.join("params.bin"))?;
        self.vocab.write(&dir.join("vocab.txt"))?;
        let mut pairs = vec![
            ("format_version".to_string(), MODEL_FORMAT_VERSION.to_string()),
            ("params".to_string(), "params.bin".to_string()),
            ("vocab".to_string(), "vocab.txt".to_string()),
        ];
        pairs.extend(self.config.to_pairs().into_iter().map(|(k, v)| (format!("model.{k}"), v)));
        let path = dir.join("model.conf");
        std::fs::write(&path, kv::render_flat(&pairs)).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let doc = kv::parse_file(&dir.join("model.conf"))?;
        let scalar = |key: &str| match doc.root().get(key).map(|e| &e.value) {
            Some(Value::Scalar(s)) => Ok(s.clone()),
            _ => Err(Error::Config(format!("model.conf missing {key}"))),
        };
        let version: u32 = scalar("format_version")?
            .parse()
            .map_err(|_| Error::Config("bad format_version".into()))?;
        if version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model format version {version}")));
        }
        let mut config = ModelConfig::default();
        let section = doc
            .section("model")
            .ok_or_else(|| Error::Config("model.conf missing [model]".into()))?;
        for e in &section.entries {
            if let Value::Scalar(v) = &e.value {
                config.set(&e.key, v)?;
            }
        }
        let params = ParamStore::load(&dir.join(scalar("params")?))?;
        let vocab = Vocab::read(&dir.join(scalar("vocab")?))?;
        Self::from_parts(config, params, vocab)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckConfig};
    use crate::factext::FactVector;

    fn tiny_vocab() -> Vocab {
        Vocab::new(["a", "b", "c", "d", "."].map(String::from))
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            embedding_dim: 4,
            encoder_hidden: 6,
            decoder_hidden: 6,
            background_hidden: 6,
            max_decode_len: 10,
            dropout_rate: 0.0,
            vocab_size: 0,
        }
    }

    fn report(findings: &str, summary: &str, background: &str) -> Report {
        let t = |s: &str| s.split_whitespace().map(String::from).collect();
        Report {
            id: "r".into(),
            background: t(background),
            findings: t(findings),
            summary: t(summary),
            facts: FactVector::default(),
        }
    }

    #[test]
    fn one_state_per_findings_token() {
        let m = Summarizer::new(tiny_config(), tiny_vocab(), 1).unwrap();
        let ex = m.example(&report("a b c d a b c", "a b", "c")).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let enc = m.encode(&mut tape, &b, &ex, None).unwrap();
        assert_eq!(enc.states.len(), 7);
        assert_eq!(tape.shape(enc.states[0]), &[12]);
    }

    #[test]
    fn empty_findings_is_an_error() {
        let m = Summarizer::new(tiny_config(), tiny_vocab(), 1).unwrap();
        assert!(m.example(&report("", "a b", "c")).is_err());
    }

    #[test]
    fn background_order_matters() {
        let m = Summarizer::new(tiny_config(), tiny_vocab(), 2).unwrap();
        let bg = |s: &str| {
            let ex = m.example(&report("a b c", "a", s)).unwrap();
            let mut tape = Tape::new();
            let b = m.bind(&mut tape);
            let enc = m.encode(&mut tape, &b, &ex, None).unwrap();
            tape.value(enc.background).data().to_vec()
        };
        assert_ne!(bg("a b c d"), bg("d c b a"));
    }

    #[test]
    fn zero_params_give_zero_background() {
        let m = Summarizer::zeroed(tiny_config(), tiny_vocab()).unwrap();
        let ex = m.example(&report("a b c", "a", "a b")).unwrap();
        let mut tape = Tape::new();
        let b = m.bind(&mut tape);
        let enc = m.encode(&mut tape, &b, &ex, None).unwrap();
        assert!(tape.value(enc.background).data().iter().all(|&x| x == 0.0));
    }

    fn set_gate_bias(m: &mut Summarizer, bias: f64) {
        let id = m.param_id("gen.b").unwrap();
        m.params.get_mut(id).data_mut()[0] = bias;
        let w = m.param_id("gen.w").unwrap();
        m.params.get_mut(w).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }

    #[test]
    fn gate_one_is_pure_vocabulary() {
        let mut m = Summarizer::new(tiny_config(), tiny_vocab(), 3).unwrap();
        set_gate_bias(&mut m, 1000.0);
        let ex = m.example(&report("a b zebra c", "a", "b")).unwrap();
        for s in m.step_distributions(&ex, &[3, 4]).unwrap() {
            assert_eq!(s.p_gen, 1.0);
            assert_eq!(&s.final_dist[..m.vocab.len()], &s.vocab_dist[..]);
            assert_eq!(s.final_dist[m.vocab.len()], 0.0);
        }
    }

    #[test]
    fn gate_zero_only_copies() {
        let mut m = Summarizer::new(tiny_config(), tiny_vocab(), 3).unwrap();
        set_gate_bias(&mut m, -1000.0);
        let ex = m.example(&report("a b zebra", "a", "b")).unwrap();
        let s = &m.step_distributions(&ex, &[]).unwrap()[0];
        assert_eq!(s.p_gen, 0.0);
        for (id, p) in s.final_dist.iter().enumerate() {
            if !ex.findings_ext.contains(&id) {
                assert_eq!(*p, 0.0, "id {id}");
            }
        }
        assert!((s.final_dist.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn source_only_token_needs_copy_mass() {
        // Source "a zebra b": zebra is outside the vocabulary.
        let mut m = Summarizer::new(tiny_config(), tiny_vocab(), 4).unwrap();
        let ex = m.example(&report("a zebra b", "zebra", "c")).unwrap();
        let zebra = m.vocab.len();
        assert_eq!(ex.findings_ext[1], zebra);
        assert_eq!(ex.target, vec![zebra]);
        let s = &m.step_distributions(&ex, &[]).unwrap()[0];
        assert!(s.p_gen < 1.0 && s.attention[1] > 0.0);
        assert!((s.final_dist[zebra] - (1.0 - s.p_gen) * s.attention[1]).abs() < 1e-15);
        set_gate_bias(&mut m, 1000.0);
        let s = &m.step_distributions(&ex, &[]).unwrap()[0];
        assert_eq!(s.final_dist[zebra], 0.0);
    }

    #[test]
    fn nll_gradient_matches_finite_differences() {
        let m = Summarizer::new(tiny_config(), tiny_vocab(), 5).unwrap();
        let exs = [
            m.example(&report("a b c d . a", "a b", "c d")).unwrap(),
            m.example(&report("d c zebra b", "zebra c", "a")).unwrap(),
        ];
        let f = |tape: &mut Tape, store: &ParamStore| -> Result<Var> {
            let mm = Summarizer::from_parts(m.config, store.clone(), m.vocab.clone())?;
            let l0 = mm.sequence_nll(tape, &exs[0], None)?;
            let l1 = mm.sequence_nll(tape, &exs[1], None)?;
            tape.add(l0, l1)
        };
        let report = grad_check(&m.params, f, GradCheckConfig { samples: 200, ..Default::default() }).unwrap();
        assert!(report.passed, "{report:?}");
    }

    #[test]
    fn eval_loss_is_deterministic() {
        let m = Summarizer::new(
            ModelConfig {
                dropout_rate: 0.5,
                ..tiny_config()
            },
            tiny_vocab(),
            6,
        )
        .unwrap();
        let ex = m.example(&report("a b c d", "a b", "c")).unwrap();
        assert_eq!(m.eval_nll(&ex).unwrap().to_bits(), m.eval_nll(&ex).unwrap().to_bits());
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = Summarizer::new(tiny_config(), tiny_vocab(), 7).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = Summarizer::load(dir.path()).unwrap();
        assert_eq!(back.params, m.params);
        assert_eq!(back.vocab, m.vocab);
        assert_eq!(back.config, m.config);
    }
}
