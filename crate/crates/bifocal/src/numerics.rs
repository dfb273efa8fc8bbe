//! Dense row-major matrices, numerically safe activations, and a seeded RNG.
//!
//! Everything is generic over [`Scalar`] so the same forward/backward code
//! runs in f32 for training and in f64 for finite-difference gradient checks.
//! There is deliberately no BLAS here; the models are desk-scale and the
//! gradients are hand-derived against exactly these loops.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Float precision the model code is generic over. f32 is the working
/// precision; f64 exists for gradient checking headroom.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + Serialize
    + serde::de::DeserializeOwned
    + 'static
{
    fn from_real(v: f64) -> Self;
    fn into_real(self) -> f64;
}

impl Scalar for f32 {
    fn from_real(v: f64) -> Self {
        v as f32
    }
    fn into_real(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_real(v: f64) -> Self {
        v
    }
    fn into_real(self) -> f64 {
        self
    }
}

/// Dense row-major matrix. `data[r * cols + c]` is entry (r, c).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<F> {
    rows: usize,
    cols: usize,
    data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("Matrix::from_vec: data length", rows * cols, data.len()));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Test convenience; every row must have the same length.
    pub fn from_rows(rows: &[Vec<F>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            if row.len() != c {
                return Err(Error::dim("Matrix::from_rows: ragged row", c, row.len()));
            }
            data.extend_from_slice(row);
        }
        Ok(Matrix { rows: r, cols: c, data })
    }

    /// Glorot/Xavier uniform init on ±sqrt(6 / (rows + cols)).
    pub fn glorot(rows: usize, cols: usize, rng: &mut SeededRng) -> Self {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| F::from_real(rng.uniform_in(-limit, limit)))
            .collect();
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: F) {
        debug_assert!(r < self.rows && c < self.cols);
        self.data[r * self.cols + c] = v;
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// y = self * x
    pub fn matvec(&self, x: &[F]) -> Result<Vec<F>> {
        if x.len() != self.cols {
            return Err(Error::dim("matvec: input len", self.cols, x.len()));
        }
        let mut y = Vec::with_capacity(self.rows);
        for r in 0..self.rows {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            let mut acc = F::zero();
            for (w, xi) in row.iter().zip(x) {
                acc = acc + *w * *xi;
            }
            y.push(acc);
        }
        Ok(y)
    }

    /// y = self^T * g. Used by every backward pass.
    pub fn matvec_t(&self, g: &[F]) -> Result<Vec<F>> {
        if g.len() != self.rows {
            return Err(Error::dim("matvec_t: input len", self.rows, g.len()));
        }
        let mut y = vec![F::zero(); self.cols];
        for r in 0..self.rows {
            let gr = g[r];
            if gr == F::zero() {
                continue;
            }
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            for (yi, w) in y.iter_mut().zip(row) {
                *yi = *yi + *w * gr;
            }
        }
        Ok(y)
    }

    /// self += g x^T. Gradient accumulation for y = W x.
    pub fn add_outer(&mut self, g: &[F], x: &[F]) -> Result<()> {
        if g.len() != self.rows {
            return Err(Error::dim("add_outer: row grad len", self.rows, g.len()));
        }
        if x.len() != self.cols {
            return Err(Error::dim("add_outer: col input len", self.cols, x.len()));
        }
        for r in 0..self.rows {
            let gr = g[r];
            if gr == F::zero() {
                continue;
            }
            let row = &mut self.data[r * self.cols..(r + 1) * self.cols];
            for (w, xi) in row.iter_mut().zip(x) {
                *w = *w + gr * *xi;
            }
        }
        Ok(())
    }

    pub fn cast<G: Scalar>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| G::from_real(v.into_real())).collect(),
        }
    }
}

/// y = W x + b. The bias is optional so the same op serves the no-bias
/// state projections.
pub fn affine<F: Scalar>(w: &Matrix<F>, x: &[F], b: Option<&[F]>) -> Result<Vec<F>> {
    let mut y = w.matvec(x)?;
    if let Some(b) = b {
        if b.len() != y.len() {
            return Err(Error::dim("affine: bias len", y.len(), b.len()));
        }
        for (yi, bi) in y.iter_mut().zip(b) {
            *yi = *yi + *bi;
        }
    }
    Ok(y)
}

pub fn sigmoid<F: Scalar>(x: F) -> F {
    // Split on sign so neither branch exponentiates a large positive number.
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

pub fn sigmoid_vec<F: Scalar>(xs: &[F]) -> Vec<F> {
    xs.iter().map(|&x| sigmoid(x)).collect()
}

pub fn tanh_vec<F: Scalar>(xs: &[F]) -> Vec<F> {
    xs.iter().map(|x| x.tanh()).collect()
}

/// Max-subtracted softmax. Errors on empty input; NaN and ±inf logits are
/// rejected rather than silently propagated.
pub fn softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>> {
    if logits.is_empty() {
        return Err(Error::Empty { context: "softmax" });
    }
    let mut m = logits[0];
    for &x in logits {
        if !x.is_finite() {
            return Err(Error::Empty {
                context: "softmax: non-finite input",
            });
        }
        if x > m {
            m = x;
        }
    }
    let mut p: Vec<F> = logits.iter().map(|&x| (x - m).exp()).collect();
    let total: F = p.iter().copied().sum();
    for v in p.iter_mut() {
        *v = *v / total;
    }
    Ok(p)
}

pub fn log_softmax<F: Scalar>(logits: &[F]) -> Result<Vec<F>> {
    let lse = logsumexp(logits)?;
    Ok(logits.iter().map(|&x| x - lse).collect())
}

pub fn logsumexp<F: Scalar>(xs: &[F]) -> Result<F> {
    if xs.is_empty() {
        return Err(Error::Empty { context: "logsumexp" });
    }
    let mut m = xs[0];
    for &x in xs {
        if !x.is_finite() {
            return Err(Error::Empty {
                context: "logsumexp: non-finite input",
            });
        }
        if x > m {
            m = x;
        }
    }
    let sum: F = xs.iter().map(|&x| (x - m).exp()).sum();
    Ok(m + sum.ln())
}

/// Log-sum-exp of two log-space values; tolerates -inf (an impossible path).
pub fn logaddexp<F: Scalar>(a: F, b: F) -> F {
    if a == F::neg_infinity() {
        return b;
    }
    if b == F::neg_infinity() {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (F::one() + (lo - hi).exp()).ln()
}

/// Seeded, platform-independent RNG. ChaCha8 keyed by (seed, stream); streams
/// let one experiment seed drive independent draw sequences (weights, data,
/// batch order) that don't perturb each other when one consumer draws more.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    stream: u64,
    inner: rand_chacha::ChaCha8Rng,
    spare_normal: Option<f64>,
}

impl SeededRng {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream: u64) -> Self {
        use rand::SeedableRng;
        let mut inner = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream);
        SeededRng {
            seed,
            stream,
            inner,
            spare_normal: None,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }

    /// Uniform in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        use rand::Rng;
        self.inner.gen::<f64>()
    }

    /// Uniform in [lo, hi).
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// Box-Muller; the spare draw is cached so consecutive calls cost one
    /// transform per pair.
    pub fn normal(&mut self, mean: f64, std: f64) -> f64 {
        let z = match self.spare_normal.take() {
            Some(z) => z,
            None => {
                let u1 = 1.0 - self.uniform(); // (0, 1]
                let u2 = self.uniform();
                let r = (-2.0 * u1.ln()).sqrt();
                let theta = 2.0 * std::f64::consts::PI * u2;
                self.spare_normal = Some(r * theta.sin());
                r * theta.cos()
            }
        };
        mean + std * z
    }

    /// Uniform integer in 0..n.
    pub fn below(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.inner.gen_range(0..n)
    }

    pub fn chance(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}
