//! Shared fixtures for integration tests.
#![allow(dead_code)]

use factsum::autodiff::{ParamStore, Tape, Tensor, Var};
use factsum::corpus::Report;
use factsum::vocab::Vocab;
use factsum::{FactVector, ModelConfig, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LossFn = Box<dyn Fn(&mut Tape, &ParamStore) -> Result<Var>>;

pub const OP_NAMES: &[&str] = &[
    "matmul_mm",
    "matmul_mv",
    "matmul_vm",
    "add",
    "sub",
    "mul",
    "add_row_broadcast",
    "scale",
    "scale_by",
    "one_minus",
    "concat",
    "stack",
    "slice",
    "tanh",
    "sigmoid",
    "log",
    "softmax_vector",
    "softmax_rows",
    "softmax_cols",
    "sum",
    "pick",
    "embedding",
    "scatter_add",
    "pad_to",
    "cross_entropy",
    "lstm_cell",
];

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

fn tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), uniform(rng, n, -1.0, 1.0)).unwrap()
}

/// Reduces any output to a scalar with fixed random weights so every output
/// coordinate contributes a distinct gradient.
fn weigh(tape: &mut Tape, out: Var, weights: &[f64]) -> Result<Var> {
    let shape = tape.shape(out).to_vec();
    let n = shape.iter().product();
    let w = tape.constant(Tensor::new(shape, weights[..n].to_vec())?);
    let m = tape.mul(out, w)?;
    Ok(tape.sum(m))
}

/// Parameters and loss exercising one tape operation.
pub fn op_case(name: &str, seed: u64) -> (ParamStore, LossFn) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let mut add = |name: &str, t: Tensor| store.insert(name, t).unwrap();
    let shapes: Vec<(&str, Vec<usize>)> = match name {
        "matmul_mm" => vec![("a", vec![3, 4]), ("b", vec![4, 2])],
        "matmul_mv" => vec![("a", vec![3, 4]), ("b", vec![4])],
        "matmul_vm" => vec![("a", vec![3]), ("b", vec![3, 4])],
        "add" | "sub" => vec![("a", vec![5]), ("b", vec![5])],
        "mul" => vec![("a", vec![2, 3]), ("b", vec![2, 3])],
        "add_row_broadcast" => vec![("a", vec![3, 4]), ("b", vec![4])],
        "scale_by" => vec![("a", vec![4]), ("b", vec![1])],
        "concat" => vec![("a", vec![2]), ("b", vec![3])],
        "stack" => vec![("a", vec![3]), ("b", vec![3])],
        "slice" => vec![("a", vec![6])],
        "softmax_rows" | "softmax_cols" | "sum" => vec![("a", vec![2, 3])],
        "embedding" => vec![("a", vec![4, 3])],
        "scatter_add" => vec![("a", vec![4])],
        "pad_to" => vec![("a", vec![3])],
        "cross_entropy" => vec![("a", vec![5])],
        "lstm_cell" => vec![
            ("x", vec![3]),
            ("h", vec![2]),
            ("c", vec![2]),
            ("w", vec![8, 5]),
            ("b", vec![8]),
        ],
        _ => vec![("a", vec![5])],
    };
    for (n, s) in &shapes {
        let t = if name == "log" {
            let len = s.iter().product();
            Tensor::new(s.clone(), uniform(&mut rng, len, 0.5, 2.0)).unwrap()
        } else {
            tensor(&mut rng, s)
        };
        add(n, t);
    }
    // Enough weights for the largest output; each case uses a prefix.
    let weights = uniform(&mut rng, 16, -1.0, 1.0);
    let name = name.to_string();
    let loss: LossFn = Box::new(move |tape: &mut Tape, store: &ParamStore| {
        let p = |tape: &mut Tape, n: &str| tape.param(store, store.id(n).unwrap());
        let a = p(tape, if name == "lstm_cell" { "x" } else { "a" });
        let out = match name.as_str() {
            "matmul_mm" | "matmul_mv" | "matmul_vm" => {
                let b = p(tape, "b");
                tape.matmul(a, b)?
            }
            "add" => {
                let b = p(tape, "b");
                tape.add(a, b)?
            }
            "sub" => {
                let b = p(tape, "b");
                tape.sub(a, b)?
            }
            "mul" => {
                let b = p(tape, "b");
                tape.mul(a, b)?
            }
            "add_row_broadcast" => {
                let b = p(tape, "b");
                tape.add_row_broadcast(a, b)?
            }
            "scale" => tape.scale(a, 1.7),
            "scale_by" => {
                let b = p(tape, "b");
                tape.scale_by(a, b)?
            }
            "one_minus" => tape.one_minus(a),
            "concat" => {
                let b = p(tape, "b");
                let s = tape.pick(b, 1)?;
                tape.concat(&[a, b, s])?
            }
            "stack" => {
                let b = p(tape, "b");
                tape.stack(&[a, b])?
            }
            "slice" => tape.slice(a, 1, 3)?,
            "tanh" => tape.tanh(a),
            "sigmoid" => tape.sigmoid(a),
            "log" => tape.log(a),
            "softmax_vector" => tape.softmax(a, 0)?,
            "softmax_rows" => tape.softmax(a, 1)?,
            "softmax_cols" => tape.softmax(a, 0)?,
            "sum" => tape.sum(a),
            "pick" => tape.pick(a, 2)?,
            "embedding" => tape.embedding(a, 2)?,
            "scatter_add" => tape.scatter_add(a, &[0, 2, 2, 5], 6)?,
            "pad_to" => tape.pad_to(a, 5)?,
            "cross_entropy" => tape.cross_entropy(a, 3)?,
            "lstm_cell" => {
                let (h, c, w, b) = (p(tape, "h"), p(tape, "c"), p(tape, "w"), p(tape, "b"));
                tape.lstm_cell(a, h, c, w, b)?
            }
            other => panic!("unknown op case {other}"),
        };
        if tape.value(out).rank() == 0 {
            let w = tape.constant(Tensor::scalar(weights[0]));
            return tape.mul(out, w);
        }
        weigh(tape, out, &weights)
    });
    (store, loss)
}

pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        vocab_size: 0,
        embedding_dim: 4,
        encoder_hidden: 6,
        decoder_hidden: 6,
        background_hidden: 6,
        max_decode_len: 12,
        dropout_rate: 0.0,
    }
}

pub fn report(id: &str, background: &str, findings: &str, summary: &str) -> Report {
    let t = |s: &str| s.split_whitespace().map(String::from).collect();
    Report {
        id: id.into(),
        background: t(background),
        findings: t(findings),
        summary: t(summary),
        facts: FactVector::default(),
    }
}

pub fn tiny_vocab() -> Vocab {
    Vocab::new(
        ["no", "pleural", "effusion", "is", "seen", "heart", "size", "normal", ".", "mild", "edema", "chest"]
            .map(String::from),
    )
}

/// Two reports for micro-batch checks; the second holds an out-of-vocabulary token.
pub fn micro_batch() -> [Report; 2] {
    [
        report(
            "a",
            "chest",
            "heart size is normal . mild edema is seen .",
            "mild edema",
        ),
        report(
            "b",
            "chest pa",
            "no pleural effusion . small opacity is seen",
            "opacity is seen",
        ),
    ]
}
