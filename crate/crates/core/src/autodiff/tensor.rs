use std::fmt;

use crate::{Error, Result};

/// Dense row-major `f64` tensor of rank 0, 1 or 2.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 8 {
            write!(f, "{:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Contract(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        if shape.len() > 2 {
            return Err(Error::Contract(format!("rank {} tensors are not supported", shape.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(x: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![x],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn norm_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }
}

/// Dense kernels. Written so the inner loops vectorize.
pub(crate) mod kernels {
    #[inline]
    pub fn dot(a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        let mut acc = [0.0f64; 4];
        let chunks = a.len() / 4;
        for c in 0..chunks {
            let i = c * 4;
            acc[0] += a[i] * b[i];
            acc[1] += a[i + 1] * b[i + 1];
            acc[2] += a[i + 2] * b[i + 2];
            acc[3] += a[i + 3] * b[i + 3];
        }
        let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
        for i in chunks * 4..a.len() {
            s += a[i] * b[i];
        }
        s
    }

    /// y += alpha * x
    #[inline]
    pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), y.len());
        for (yi, xi) in y.iter_mut().zip(x) {
            *yi += alpha * xi;
        }
    }

    /// out[m] = W[m,k] · x[k]
    pub fn matvec(w: &[f64], rows: usize, cols: usize, x: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate().take(rows) {
            *o = dot(&w[r * cols..(r + 1) * cols], x);
        }
    }

    /// out[n] += x[k] · W[k,n]
    pub fn vecmat_acc(x: &[f64], w: &[f64], rows: usize, cols: usize, out: &mut [f64]) {
        for r in 0..rows {
            if x[r] != 0.0 {
                axpy(x[r], &w[r * cols..(r + 1) * cols], out);
            }
        }
    }

    /// C[m,n] = A[m,k] · B[k,n]
    pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|x| *x = 0.0);
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = a[i * k + p];
                if av != 0.0 {
                    axpy(av, &b[p * n..(p + 1) * n], row);
                }
            }
        }
    }

    /// G[m,k] += g[m] ⊗ x[k]
    pub fn outer_acc(g: &[f64], x: &[f64], out: &mut [f64]) {
        let k = x.len();
        for (r, &gr) in g.iter().enumerate() {
            if gr != 0.0 {
                axpy(gr, x, &mut out[r * k..(r + 1) * k]);
            }
        }
    }

    pub fn sigmoid(x: f64) -> f64 {
        if x >= 0.0 {
            1.0 / (1.0 + (-x).exp())
        } else {
            let e = x.exp();
            e / (1.0 + e)
        }
    }

    /// Numerically stable in-place softmax.
    pub fn softmax_in_place(xs: &mut [f64]) {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in xs.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in xs.iter_mut() {
            *x /= sum;
        }
    }

    pub fn log_sum_exp(xs: &[f64]) -> f64 {
        let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
    }
}
