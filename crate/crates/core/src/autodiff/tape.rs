use std::collections::HashMap;

use super::params::{ParamGrads, ParamId, ParamStore};
use super::tensor::{kernels, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Probabilities below this are clamped inside `log`.
pub const LOG_FLOOR: f64 = 1e-30;

#[derive(Debug)]
struct LstmCache {
    /// Activated gates (i, f, g, o), each of length `hidden`.
    gates: Vec<f64>,
    /// tanh of the new cell state.
    tanh_c: Vec<f64>,
    /// Concatenated [x; h] input.
    input: Vec<f64>,
}

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRowBroadcast(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    ScaleBy(Var, Var),
    OneMinus(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    Softmax(Var, usize),
    Sum(Var),
    Pick(Var, usize),
    Embedding(Var, usize),
    ScatterAdd(Var, Vec<usize>),
    PadTo(Var),
    CrossEntropy(Var, usize, Vec<f64>),
    LstmCell {
        x: Var,
        h: Var,
        c: Var,
        w: Var,
        b: Var,
        cache: Box<LstmCache>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Record of forward operations for reverse-mode differentiation.
///
/// A tape is single-threaded and append-only; `backward` visits every node
/// once in reverse insertion order, which is a valid topological order
/// because operands always precede their results.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> Error {
    Error::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    /// A leaf whose gradient can be read back but which is not a parameter.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// Same as [`Tape::input`]; reads better where no gradient is wanted.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Input)
    }

    /// A copy of `v` that blocks gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    /// Binds a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.get(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (va, vb) = (self.value(a).data(), self.value(b).data());
        let value = match (sa.as_slice(), sb.as_slice()) {
            (&[m, k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; m * n];
                kernels::matmul(va, vb, m, k, n, &mut out);
                Tensor::from_parts(vec![m, n], out)
            }
            (&[m, k], &[k2]) if k == k2 => {
                let mut out = vec![0.0; m];
                kernels::matvec(va, m, k, vb, &mut out);
                Tensor::from_parts(vec![m], out)
            }
            (&[k], &[k2, n]) if k == k2 => {
                let mut out = vec![0.0; n];
                kernels::vecmat_acc(va, vb, k, n, &mut out);
                Tensor::from_parts(vec![n], out)
            }
            _ => return Err(shape_err("matmul", &sa, &sb)),
        };
        Ok(self.push(value, Op::MatMul(a, b)))
    }

    fn zip_same(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(shape_err(name, ta.shape(), tb.shape()));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| f(*x, *y)).collect();
        Ok(Tensor::from_parts(ta.shape().to_vec(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "add", |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t = self.zip_same(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b)))
    }

    /// `a[m,n] + b[n]` with `b` added to every row.
    pub fn add_row_broadcast(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        match (ta.shape(), tb.shape()) {
            (&[m, n], &[n2]) if n == n2 => {
                let mut data = ta.data().to_vec();
                for r in 0..m {
                    for (x, y) in data[r * n..(r + 1) * n].iter_mut().zip(tb.data()) {
                        *x += y;
                    }
                }
                let t = Tensor::from_parts(vec![m, n], data);
                Ok(self.push(t, Op::AddRowBroadcast(a, b)))
            }
            (sa, sb) => Err(shape_err("add_row_broadcast", sa, sb)),
        }
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x * k).collect());
        self.push(t, Op::Scale(a, k))
    }

    /// Multiplies every element of `a` by the one-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("scale_by", self.shape(a), self.shape(s)));
        }
        let k = self.scalar_value(s);
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| x * k).collect());
        Ok(self.push(t, Op::ScaleBy(a, s)))
    }

    pub fn one_minus(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let t = Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|x| 1.0 - x).collect());
        self.push(t, Op::OneMinus(a))
    }

    /// Concatenates vectors; scalars count as length-1 vectors.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut data = Vec::new();
        for &p in parts {
            let t = self.value(p);
            if t.rank() > 1 {
                return Err(shape_err("concat", t.shape(), &[]));
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::vector(data);
        Ok(self.push(t, Op::Concat(parts.to_vec())))
    }

    /// Stacks equal-length vectors into the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        let Some(&first) = rows.first() else {
            return Err(Error::Contract("stack of zero rows".into()));
        };
        let n = self.value(first).len();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            let t = self.value(r);
            if t.rank() != 1 || t.len() != n {
                return Err(shape_err("stack", self.value(first).shape(), t.shape()));
            }
            data.extend_from_slice(t.data());
        }
        let t = Tensor::from_parts(vec![rows.len(), n], data);
        Ok(self.push(t, Op::Stack(rows.to_vec())))
    }

    /// `a[start..start + len]` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || start + len > ta.len() {
            return Err(shape_err("slice", ta.shape(), &[start, len]));
        }
        let t = Tensor::vector(ta.data()[start..start + len].to_vec());
        Ok(self.push(t, Op::Slice(a, start)))
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::from_parts(ta.shape().to_vec(), ta.data().iter().map(|&x| f(x)).collect())
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::tanh);
        self.push(t, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, kernels::sigmoid);
        self.push(t, Op::Sigmoid(a))
    }

    /// Natural log with inputs clamped to [`LOG_FLOOR`]; clamped entries get zero gradient.
    pub fn log(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(LOG_FLOOR).ln());
        self.push(t, Op::Log(a))
    }

    /// Softmax along `axis` (0 for vectors; 0 or 1 for matrices).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var> {
        let ta = self.value(a);
        let shape = ta.shape().to_vec();
        let mut data = ta.data().to_vec();
        match (shape.as_slice(), axis) {
            (&[_], 0) => kernels::softmax_in_place(&mut data),
            (&[m, n], 1) => {
                for r in 0..m {
                    kernels::softmax_in_place(&mut data[r * n..(r + 1) * n]);
                }
            }
            (&[m, n], 0) => {
                let mut col = vec![0.0; m];
                for c in 0..n {
                    for r in 0..m {
                        col[r] = data[r * n + c];
                    }
                    kernels::softmax_in_place(&mut col);
                    for r in 0..m {
                        data[r * n + c] = col[r];
                    }
                }
            }
            _ => return Err(shape_err("softmax", &shape, &[axis])),
        }
        let t = Tensor::from_parts(shape, data);
        Ok(self.push(t, Op::Softmax(a, axis)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a))
    }

    /// Element `idx` of a vector as a scalar.
    pub fn pick(&mut self, a: Var, idx: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || idx >= ta.len() {
            return Err(shape_err("pick", ta.shape(), &[idx]));
        }
        let t = Tensor::scalar(ta.data()[idx]);
        Ok(self.push(t, Op::Pick(a, idx)))
    }

    /// Row `row` of an embedding table.
    pub fn embedding(&mut self, table: Var, row: usize) -> Result<Var> {
        let tt = self.value(table);
        match tt.shape() {
            &[v, e] if row < v => {
                let t = Tensor::vector(tt.data()[row * e..(row + 1) * e].to_vec());
                Ok(self.push(t, Op::Embedding(table, row)))
            }
            s => Err(shape_err("embedding", s, &[row])),
        }
    }

    /// `out[index[i]] += a[i]` into a zero vector of length `size`.
    pub fn scatter_add(&mut self, a: Var, index: &[usize], size: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || ta.len() != index.len() || index.iter().any(|&i| i >= size) {
            return Err(shape_err("scatter_add", ta.shape(), &[index.len(), size]));
        }
        let mut out = vec![0.0; size];
        for (&i, &x) in index.iter().zip(ta.data()) {
            out[i] += x;
        }
        Ok(self.push(Tensor::vector(out), Op::ScatterAdd(a, index.to_vec())))
    }

    /// Zero-pads a vector to length `size`.
    pub fn pad_to(&mut self, a: Var, size: usize) -> Result<Var> {
        let ta = self.value(a);
        if ta.rank() != 1 || ta.len() > size {
            return Err(shape_err("pad_to", ta.shape(), &[size]));
        }
        let mut out = ta.data().to_vec();
        out.resize(size, 0.0);
        Ok(self.push(Tensor::vector(out), Op::PadTo(a)))
    }

    /// `-log softmax(logits)[target]`, stabilized with log-sum-exp.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let tl = self.value(logits);
        if tl.rank() != 1 || target >= tl.len() {
            return Err(shape_err("cross_entropy", tl.shape(), &[target]));
        }
        let lse = kernels::log_sum_exp(tl.data());
        let loss = lse - tl.data()[target];
        let mut probs = tl.data().to_vec();
        kernels::softmax_in_place(&mut probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy(logits, target, probs)))
    }

    /// One LSTM step. Gates are laid out (input, forget, cell, output) in the
    /// rows of `w[4H, X+H]` and `b[4H]`. Returns `[h'; c']`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, th, tc, tw, tb) = (self.value(x), self.value(h), self.value(c), self.value(w), self.value(b));
        let hidden = th.len();
        let in_dim = tx.len() + hidden;
        if tx.rank() != 1 || th.rank() != 1 || tc.shape() != th.shape() {
            return Err(shape_err("lstm_cell", tx.shape(), th.shape()));
        }
        if tw.shape() != [4 * hidden, in_dim] {
            return Err(shape_err("lstm_cell", tw.shape(), &[4 * hidden, in_dim]));
        }
        if tb.shape() != [4 * hidden] {
            return Err(shape_err("lstm_cell", tb.shape(), &[4 * hidden]));
        }
        let mut input = Vec::with_capacity(in_dim);
        input.extend_from_slice(tx.data());
        input.extend_from_slice(th.data());
        let mut gates = vec![0.0; 4 * hidden];
        kernels::matvec(tw.data(), 4 * hidden, in_dim, &input, &mut gates);
        for (g, bias) in gates.iter_mut().zip(tb.data()) {
            *g += bias;
        }
        for (k, g) in gates.iter_mut().enumerate() {
            *g = if (2 * hidden..3 * hidden).contains(&k) {
                g.tanh()
            } else {
                kernels::sigmoid(*g)
            };
        }
        let mut out = vec![0.0; 2 * hidden];
        let mut tanh_c = vec![0.0; hidden];
        let c_prev = tc.data();
        for j in 0..hidden {
            let (i, f, g, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
            let c_new = f * c_prev[j] + i * g;
            tanh_c[j] = c_new.tanh();
            out[j] = o * tanh_c[j];
            out[hidden + j] = c_new;
        }
        let cache = Box::new(LstmCache { gates, tanh_c, input });
        Ok(self.push(Tensor::vector(out), Op::LstmCell { x, h, c, w, b, cache }))
    }

    /// Reverse pass from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if matches!(node.op, Op::Input | Op::Param) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        Ok(Grads { grads })
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| self.nodes[v.0].value.data();
        let shp = |v: Var| self.nodes[v.0].value.shape();
        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                match (shp(a), shp(b)) {
                    (&[m, k], &[_, n]) => {
                        let (va, vb) = (val(a), val(b));
                        // dA = G · Bᵀ
                        let ga = acc(grads, a, m * k);
                        for i in 0..m {
                            for p in 0..k {
                                ga[i * k + p] += kernels::dot(&g[i * n..(i + 1) * n], &vb[p * n..(p + 1) * n]);
                            }
                        }
                        // dB = Aᵀ · G
                        let gb = acc(grads, b, k * n);
                        for i in 0..m {
                            for p in 0..k {
                                let av = va[i * k + p];
                                if av != 0.0 {
                                    kernels::axpy(av, &g[i * n..(i + 1) * n], &mut gb[p * n..(p + 1) * n]);
                                }
                            }
                        }
                    }
                    (&[m, k], &[_]) => {
                        let (va, vb) = (val(a), val(b));
                        kernels::outer_acc(g, vb, acc(grads, a, m * k));
                        kernels::vecmat_acc(g, va, m, k, acc(grads, b, k));
                    }
                    (&[k], &[_, n]) => {
                        let (va, vb) = (val(a), val(b));
                        let ga = acc(grads, a, k);
                        for p in 0..k {
                            ga[p] += kernels::dot(&vb[p * n..(p + 1) * n], g);
                        }
                        kernels::outer_acc(va, g, acc(grads, b, k * n));
                    }
                    _ => unreachable!("matmul shapes validated in forward"),
                }
            }
            Op::Add(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                add_into(acc(grads, *b, g.len()), g);
            }
            Op::Sub(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                kernels::axpy(-1.0, g, acc(grads, *b, g.len()));
            }
            Op::AddRowBroadcast(a, b) => {
                add_into(acc(grads, *a, g.len()), g);
                let n = shp(*b)[0];
                let gb = acc(grads, *b, n);
                for row in g.chunks_exact(n) {
                    add_into(gb, row);
                }
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let vb = val(b).to_vec();
                let ga = acc(grads, a, g.len());
                for ((x, gi), y) in ga.iter_mut().zip(g).zip(&vb) {
                    *x += gi * y;
                }
                let va = val(a).to_vec();
                let gb = acc(grads, b, g.len());
                for ((x, gi), y) in gb.iter_mut().zip(g).zip(&va) {
                    *x += gi * y;
                }
            }
            Op::Scale(a, k) => kernels::axpy(*k, g, acc(grads, *a, g.len())),
            Op::ScaleBy(a, s) => {
                let k = val(*s)[0];
                let ds = kernels::dot(g, val(*a));
                kernels::axpy(k, g, acc(grads, *a, g.len()));
                acc(grads, *s, 1)[0] += ds;
            }
            Op::OneMinus(a) => kernels::axpy(-1.0, g, acc(grads, *a, g.len())),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.nodes[p.0].value.len();
                    add_into(acc(grads, p, n), &g[off..off + n]);
                    off += n;
                }
            }
            Op::Stack(rows) => {
                let n = g.len() / rows.len();
                for (r, &p) in rows.iter().enumerate() {
                    add_into(acc(grads, p, n), &g[r * n..(r + 1) * n]);
                }
            }
            Op::Slice(a, start) => {
                let n = self.nodes[a.0].value.len();
                add_into(&mut acc(grads, *a, n)[*start..start + g.len()], g);
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * (1.0 - yi * yi);
                }
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                let ga = acc(grads, *a, g.len());
                for ((x, gi), yi) in ga.iter_mut().zip(g).zip(y) {
                    *x += gi * yi * (1.0 - yi);
                }
            }
            Op::Log(a) => {
                let xa = val(*a).to_vec();
                let ga = acc(grads, *a, g.len());
                for ((x, gi), xi) in ga.iter_mut().zip(g).zip(&xa) {
                    if *xi > LOG_FLOOR {
                        *x += gi / xi;
                    }
                }
            }
            Op::Softmax(a, axis) => {
                let y = node.value.data();
                let shape = node.value.shape();
                let ga = acc(grads, *a, g.len());
                // dx = y ⊙ (g - <g, y>) per softmax group.
                let mut group = |idx: &mut dyn Iterator<Item = usize>| {
                    let idx: Vec<usize> = idx.collect();
                    let s: f64 = idx.iter().map(|&i| g[i] * y[i]).sum();
                    for &i in &idx {
                        ga[i] += y[i] * (g[i] - s);
                    }
                };
                match (shape, *axis) {
                    (&[n], _) => group(&mut (0..n)),
                    (&[m, n], 1) => {
                        for r in 0..m {
                            group(&mut (r * n..(r + 1) * n));
                        }
                    }
                    (&[m, n], _) => {
                        for c in 0..n {
                            group(&mut (0..m).map(|r| r * n + c));
                        }
                    }
                    _ => unreachable!(),
                }
            }
            Op::Sum(a) => {
                let n = self.nodes[a.0].value.len();
                acc(grads, *a, n).iter_mut().for_each(|x| *x += g[0]);
            }
            Op::Pick(a, idx) => {
                let n = self.nodes[a.0].value.len();
                acc(grads, *a, n)[*idx] += g[0];
            }
            Op::Embedding(table, row) => {
                let n = self.nodes[table.0].value.len();
                let e = g.len();
                add_into(&mut acc(grads, *table, n)[row * e..(row + 1) * e], g);
            }
            Op::ScatterAdd(a, index) => {
                let ga = acc(grads, *a, index.len());
                for (x, &i) in ga.iter_mut().zip(index) {
                    *x += g[i];
                }
            }
            Op::PadTo(a) => {
                let n = self.nodes[a.0].value.len();
                add_into(acc(grads, *a, n), &g[..n]);
            }
            Op::CrossEntropy(logits, target, probs) => {
                let ga = acc(grads, *logits, probs.len());
                for (k, (x, p)) in ga.iter_mut().zip(probs).enumerate() {
                    let onehot = if k == *target { 1.0 } else { 0.0 };
                    *x += g[0] * (p - onehot);
                }
            }
            Op::LstmCell { x, h, c, w, b, cache } => {
                let hidden = self.nodes[h.0].value.len();
                let x_len = self.nodes[x.0].value.len();
                let (dh, dc_out) = g.split_at(hidden);
                let gates = &cache.gates;
                let c_prev = val(*c);
                let mut dz = vec![0.0; 4 * hidden];
                let mut dc_prev = vec![0.0; hidden];
                for j in 0..hidden {
                    let (i, f, gg, o) = (gates[j], gates[hidden + j], gates[2 * hidden + j], gates[3 * hidden + j]);
                    let tc = cache.tanh_c[j];
                    let dc = dc_out[j] + dh[j] * o * (1.0 - tc * tc);
                    dz[j] = dc * gg * i * (1.0 - i);
                    dz[hidden + j] = dc * c_prev[j] * f * (1.0 - f);
                    dz[2 * hidden + j] = dc * i * (1.0 - gg * gg);
                    dz[3 * hidden + j] = dh[j] * tc * o * (1.0 - o);
                    dc_prev[j] = dc * f;
                }
                let in_dim = cache.input.len();
                kernels::outer_acc(&dz, &cache.input, acc(grads, *w, 4 * hidden * in_dim));
                add_into(acc(grads, *b, 4 * hidden), &dz);
                let mut dinput = vec![0.0; in_dim];
                kernels::vecmat_acc(&dz, val(*w), 4 * hidden, in_dim, &mut dinput);
                add_into(acc(grads, *x, x_len), &dinput[..x_len]);
                add_into(acc(grads, *h, hidden), &dinput[x_len..]);
                add_into(acc(grads, *c, hidden), &dc_prev);
            }
        }
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Grads {
    grads: Vec<Option<Vec<f64>>>,
}

impl Grads {
    /// Gradient with respect to a leaf; `None` if the loss does not depend on it.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Collects parameter gradients; unreached parameters get zeros.
    pub fn params(&self, tape: &Tape, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        self.accumulate_into(tape, &mut out, 1.0);
        out
    }

    /// `out += scale * dLoss/dθ`.
    pub fn accumulate_into(&self, tape: &Tape, out: &mut ParamGrads, scale: f64) {
        for (&id, &v) in &tape.params {
            if let Some(g) = self.wrt(v) {
                kernels::axpy(scale, g, out.get_mut(id).data_mut());
            }
        }
    }
}
