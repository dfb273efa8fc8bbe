//! Single LSTM cell: one-step forward with a tape, and the matching
//! hand-derived backward. Stacking across time/layers is the caller's job
//! (see `cell`, `encoder`, and the prediction network in `transducer`).
//!
//! Gates, with x the input and h the previous hidden state:
//!   f = sigmoid(W_f x + U_f h + b_f)       forget
//!   i = sigmoid(W_i x + U_i h + b_i)       input
//!   o = sigmoid(W_o x + U_o h + b_o)       output
//!   g = tanh   (W_c x + U_c h + b_c)       candidate
//!   c' = f * c + i * g
//!   h' = o * act(c')
//!
//! `act` is tanh by default. A sigmoid variant is kept behind
//! [`CellOutputActivation`] for experiments that want the cell state squashed
//! to (0, 1) instead; forward and backward honor whichever is configured.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{affine, sigmoid, Matrix, Scalar, SeededRng};

/// Nonlinearity applied to the new cell state when forming the hidden output.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOutputActivation {
    #[default]
    Tanh,
    Sigmoid,
}

impl CellOutputActivation {
    fn apply<F: Scalar>(self, c: F) -> F {
        match self {
            CellOutputActivation::Tanh => c.tanh(),
            CellOutputActivation::Sigmoid => sigmoid(c),
        }
    }

    /// Derivative expressed in terms of the activated value a = act(c).
    fn derivative_from_value<F: Scalar>(self, a: F) -> F {
        match self {
            CellOutputActivation::Tanh => F::one() - a * a,
            CellOutputActivation::Sigmoid => a * (F::one() - a),
        }
    }
}

/// Weights for one cell. Biases are always present; the forget-gate bias is
/// initialized to 1 so fresh cells start out remembering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmParams<F> {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub w_f: Matrix<F>,
    pub w_i: Matrix<F>,
    pub w_o: Matrix<F>,
    pub w_c: Matrix<F>,
    pub u_f: Matrix<F>,
    pub u_i: Matrix<F>,
    pub u_o: Matrix<F>,
    pub u_c: Matrix<F>,
    pub b_f: Vec<F>,
    pub b_i: Vec<F>,
    pub b_o: Vec<F>,
    pub b_c: Vec<F>,
    pub output_activation: CellOutputActivation,
}

impl<F: Scalar> LstmParams<F> {
    pub fn init(input_dim: usize, hidden_dim: usize, rng: &mut SeededRng) -> Self {
        let w = |rng: &mut SeededRng| Matrix::glorot(hidden_dim, input_dim, rng);
        let u = |rng: &mut SeededRng| Matrix::glorot(hidden_dim, hidden_dim, rng);
        LstmParams {
            input_dim,
            hidden_dim,
            w_f: w(rng),
            w_i: w(rng),
            w_o: w(rng),
            w_c: w(rng),
            u_f: u(rng),
            u_i: u(rng),
            u_o: u(rng),
            u_c: u(rng),
            b_f: vec![F::one(); hidden_dim],
            b_i: vec![F::zero(); hidden_dim],
            b_o: vec![F::zero(); hidden_dim],
            b_c: vec![F::zero(); hidden_dim],
            output_activation: CellOutputActivation::Tanh,
        }
    }

    pub fn zeros(input_dim: usize, hidden_dim: usize) -> Self {
        LstmParams {
            input_dim,
            hidden_dim,
            w_f: Matrix::zeros(hidden_dim, input_dim),
            w_i: Matrix::zeros(hidden_dim, input_dim),
            w_o: Matrix::zeros(hidden_dim, input_dim),
            w_c: Matrix::zeros(hidden_dim, input_dim),
            u_f: Matrix::zeros(hidden_dim, hidden_dim),
            u_i: Matrix::zeros(hidden_dim, hidden_dim),
            u_o: Matrix::zeros(hidden_dim, hidden_dim),
            u_c: Matrix::zeros(hidden_dim, hidden_dim),
            b_f: vec![F::zero(); hidden_dim],
            b_i: vec![F::zero(); hidden_dim],
            b_o: vec![F::zero(); hidden_dim],
            b_c: vec![F::zero(); hidden_dim],
            output_activation: CellOutputActivation::Tanh,
        }
    }

    /// Zero-valued gradient accumulator with matching shapes.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.input_dim, self.hidden_dim);
        z.output_activation = self.output_activation;
        z
    }

    /// Canonical flattening order shared by the optimizer, checkpoint checks,
    /// and the finite-difference harness.
    pub fn flat(&self) -> Vec<&[F]> {
        vec![
            self.w_f.data(),
            self.w_i.data(),
            self.w_o.data(),
            self.w_c.data(),
            self.u_f.data(),
            self.u_i.data(),
            self.u_o.data(),
            self.u_c.data(),
            &self.b_f,
            &self.b_i,
            &self.b_o,
            &self.b_c,
        ]
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        vec![
            self.w_f.data_mut(),
            self.w_i.data_mut(),
            self.w_o.data_mut(),
            self.w_c.data_mut(),
            self.u_f.data_mut(),
            self.u_i.data_mut(),
            self.u_o.data_mut(),
            self.u_c.data_mut(),
            &mut self.b_f,
            &mut self.b_i,
            &mut self.b_o,
            &mut self.b_c,
        ]
    }

    pub fn cast<G: Scalar>(&self) -> LstmParams<G> {
        let cv = |v: &[F]| v.iter().map(|x| G::from_real(x.into_real())).collect();
        LstmParams {
            input_dim: self.input_dim,
            hidden_dim: self.hidden_dim,
            w_f: self.w_f.cast(),
            w_i: self.w_i.cast(),
            w_o: self.w_o.cast(),
            w_c: self.w_c.cast(),
            u_f: self.u_f.cast(),
            u_i: self.u_i.cast(),
            u_o: self.u_o.cast(),
            u_c: self.u_c.cast(),
            b_f: cv(&self.b_f),
            b_i: cv(&self.b_i),
            b_o: cv(&self.b_o),
            b_c: cv(&self.b_c),
            output_activation: self.output_activation,
        }
    }
}

/// Carried (cell, hidden) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState<F> {
    pub c: Vec<F>,
    pub h: Vec<F>,
}

impl<F: Scalar> LstmState<F> {
    pub fn zeros(hidden_dim: usize) -> Self {
        LstmState {
            c: vec![F::zero(); hidden_dim],
            h: vec![F::zero(); hidden_dim],
        }
    }
}

/// Everything the backward pass needs about one forward step.
#[derive(Debug, Clone)]
pub struct LstmTape<F> {
    pub x: Vec<F>,
    pub c_prev: Vec<F>,
    pub h_prev: Vec<F>,
    pub f: Vec<F>,
    pub i: Vec<F>,
    pub o: Vec<F>,
    pub g: Vec<F>,
    pub c: Vec<F>,
}

/// Gradients flowing out of one backward step: into the parameters (caller
/// accumulates), the input, and the previous state.
#[derive(Debug, Clone)]
pub struct LstmStepGrads<F> {
    pub dx: Vec<F>,
    pub dc_prev: Vec<F>,
    pub dh_prev: Vec<F>,
}

pub fn lstm_step<F: Scalar>(
    p: &LstmParams<F>,
    x: &[F],
    state: &LstmState<F>,
) -> Result<(LstmState<F>, LstmTape<F>)> {
    if x.len() != p.input_dim {
        return Err(Error::dim("lstm_step: input len", p.input_dim, x.len()));
    }
    if state.c.len() != p.hidden_dim {
        return Err(Error::dim("lstm_step: state c len", p.hidden_dim, state.c.len()));
    }
    if state.h.len() != p.hidden_dim {
        return Err(Error::dim("lstm_step: state h len", p.hidden_dim, state.h.len()));
    }

    let pre = |w: &Matrix<F>, u: &Matrix<F>, b: &[F]| -> Result<Vec<F>> {
        let mut a = affine(w, x, Some(b))?;
        let uh = u.matvec(&state.h)?;
        for (ai, ui) in a.iter_mut().zip(&uh) {
            *ai = *ai + *ui;
        }
        Ok(a)
    };

    let f: Vec<F> = pre(&p.w_f, &p.u_f, &p.b_f)?.iter().map(|&a| sigmoid(a)).collect();
    let i: Vec<F> = pre(&p.w_i, &p.u_i, &p.b_i)?.iter().map(|&a| sigmoid(a)).collect();
    let o: Vec<F> = pre(&p.w_o, &p.u_o, &p.b_o)?.iter().map(|&a| sigmoid(a)).collect();
    let g: Vec<F> = pre(&p.w_c, &p.u_c, &p.b_c)?.iter().map(|a| a.tanh()).collect();

    let mut c = Vec::with_capacity(p.hidden_dim);
    let mut h = Vec::with_capacity(p.hidden_dim);
    for k in 0..p.hidden_dim {
        let ck = f[k] * state.c[k] + i[k] * g[k];
        c.push(ck);
        h.push(o[k] * p.output_activation.apply(ck));
    }

    let tape = LstmTape {
        x: x.to_vec(),
        c_prev: state.c.clone(),
        h_prev: state.h.clone(),
        f,
        i,
        o,
        g,
        c: c.clone(),
    };
    Ok((LstmState { c, h }, tape))
}

/// One-step backward. `dc` and `dh` are the loss gradients w.r.t. this step's
/// new cell and hidden state; parameter gradients are accumulated into
/// `grads` so a BPTT loop can reuse one accumulator.
pub fn lstm_backward<F: Scalar>(
    p: &LstmParams<F>,
    tape: &LstmTape<F>,
    dc: &[F],
    dh: &[F],
    grads: &mut LstmParams<F>,
) -> Result<LstmStepGrads<F>> {
    let n = p.hidden_dim;
    if dc.len() != n {
        return Err(Error::dim("lstm_backward: dc len", n, dc.len()));
    }
    if dh.len() != n {
        return Err(Error::dim("lstm_backward: dh len", n, dh.len()));
    }

    let mut da_f = vec![F::zero(); n];
    let mut da_i = vec![F::zero(); n];
    let mut da_o = vec![F::zero(); n];
    let mut da_g = vec![F::zero(); n];
    let mut dc_prev = vec![F::zero(); n];

    for k in 0..n {
        let a = p.output_activation.apply(tape.c[k]);
        let d_o = dh[k] * a;
        let dc_total = dc[k] + dh[k] * tape.o[k] * p.output_activation.derivative_from_value(a);

        let d_f = dc_total * tape.c_prev[k];
        let d_i = dc_total * tape.g[k];
        let d_g = dc_total * tape.i[k];
        dc_prev[k] = dc_total * tape.f[k];

        da_f[k] = d_f * tape.f[k] * (F::one() - tape.f[k]);
        da_i[k] = d_i * tape.i[k] * (F::one() - tape.i[k]);
        da_o[k] = d_o * tape.o[k] * (F::one() - tape.o[k]);
        da_g[k] = d_g * (F::one() - tape.g[k] * tape.g[k]);
    }

    let mut dx = vec![F::zero(); p.input_dim];
    let mut dh_prev = vec![F::zero(); n];
    for (w, u, b, da) in [
        (&p.w_f, &p.u_f, 0, &da_f),
        (&p.w_i, &p.u_i, 1, &da_i),
        (&p.w_o, &p.u_o, 2, &da_o),
        (&p.w_c, &p.u_c, 3, &da_g),
    ] {
        let dxg = w.matvec_t(da)?;
        for (a, b) in dx.iter_mut().zip(&dxg) {
            *a = *a + *b;
        }
        let dhg = u.matvec_t(da)?;
        for (a, b) in dh_prev.iter_mut().zip(&dhg) {
            *a = *a + *b;
        }
        let (gw, gu, gb) = match b {
            0 => (&mut grads.w_f, &mut grads.u_f, &mut grads.b_f),
            1 => (&mut grads.w_i, &mut grads.u_i, &mut grads.b_i),
            2 => (&mut grads.w_o, &mut grads.u_o, &mut grads.b_o),
            _ => (&mut grads.w_c, &mut grads.u_c, &mut grads.b_c),
        };
        gw.add_outer(da, &tape.x)?;
        gu.add_outer(da, &tape.h_prev)?;
        for (acc, d) in gb.iter_mut().zip(da) {
            *acc = *acc + *d;
        }
    }

    Ok(LstmStepGrads { dx, dc_prev, dh_prev })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Independent scalar-loop reference: same equations, written entry by
    /// entry with explicit indexing and no shared helper code.
    fn reference_step(p: &LstmParams<f64>, x: &[f64], c0: &[f64], h0: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = p.hidden_dim;
        let m = p.input_dim;
        let gate = |w: &Matrix<f64>, u: &Matrix<f64>, b: &[f64], k: usize| {
            let mut a = b[k];
            for j in 0..m {
                a += w.get(k, j) * x[j];
            }
            for j in 0..n {
                a += u.get(k, j) * h0[j];
            }
            a
        };
        let mut c = vec![0.0; n];
        let mut h = vec![0.0; n];
        for k in 0..n {
            let f = 1.0 / (1.0 + (-gate(&p.w_f, &p.u_f, &p.b_f, k)).exp());
            let i = 1.0 / (1.0 + (-gate(&p.w_i, &p.u_i, &p.b_i, k)).exp());
            let o = 1.0 / (1.0 + (-gate(&p.w_o, &p.u_o, &p.b_o, k)).exp());
            let g = gate(&p.w_c, &p.u_c, &p.b_c, k).tanh();
            c[k] = f * c0[k] + i * g;
            h[k] = match p.output_activation {
                CellOutputActivation::Tanh => o * c[k].tanh(),
                CellOutputActivation::Sigmoid => o * (1.0 / (1.0 + (-c[k]).exp())),
            };
        }
        (c, h)
    }

    #[test]
    fn zero_params_zero_state_stays_zero() {
        let p = LstmParams::<f64>::zeros(3, 2);
        let (s, _) = lstm_step(&p, &[0.7, -0.3, 1.1], &LstmState::zeros(2)).unwrap();
        assert_eq!(s.c, vec![0.0, 0.0]);
        assert_eq!(s.h, vec![0.0, 0.0]);
    }

    #[test]
    fn saturated_forget_gate_preserves_cell_state() {
        // Huge forget bias, hugely negative input gate: c' ~= c.
        let mut p = LstmParams::<f64>::zeros(1, 2);
        p.b_f = vec![50.0, 50.0];
        p.b_i = vec![-50.0, -50.0];
        let state = LstmState {
            c: vec![0.8, -1.4],
            h: vec![0.0, 0.0],
        };
        let (s, _) = lstm_step(&p, &[0.5], &state).unwrap();
        assert_relative_eq!(s.c[0], 0.8, max_relative = 1e-12);
        assert_relative_eq!(s.c[1], -1.4, max_relative = 1e-12);
    }

    // Captured from `reference_step` on the seed-42 cell below.
    const FROZEN_C: [f64; 2] = [0.13451964563876512, -0.45270200822267037];
    const FROZEN_H: [f64; 2] = [0.06893862035759893, -0.1683174183681897];

    #[test]
    fn matches_scalar_reference_on_seeded_cell() {
        let mut rng = SeededRng::new(42);
        let p = LstmParams::<f64>::init(3, 2, &mut rng);
        let x = [0.3, -0.8, 0.5];
        let state = LstmState {
            c: vec![0.1, -0.2],
            h: vec![0.4, 0.05],
        };
        let (s, _) = lstm_step(&p, &x, &state).unwrap();
        let (rc, rh) = reference_step(&p, &x, &state.c, &state.h);
        for k in 0..2 {
            assert_relative_eq!(s.c[k], rc[k], max_relative = 1e-12);
            assert_relative_eq!(s.h[k], rh[k], max_relative = 1e-12);
        }
        // Frozen values from the scalar reference guard against the two
        // implementations (or the RNG) drifting together.
        assert_relative_eq!(s.c[0], FROZEN_C[0], max_relative = 1e-10);
        assert_relative_eq!(s.c[1], FROZEN_C[1], max_relative = 1e-10);
        assert_relative_eq!(s.h[0], FROZEN_H[0], max_relative = 1e-10);
        assert_relative_eq!(s.h[1], FROZEN_H[1], max_relative = 1e-10);
    }

    #[test]
    fn sigmoid_output_mode_changes_h_not_c() {
        let mut rng = SeededRng::new(13);
        let mut p = LstmParams::<f64>::init(2, 3, &mut rng);
        let x = [0.9, -1.3];
        let state = LstmState {
            c: vec![0.3, 0.0, -0.6],
            h: vec![0.1, -0.1, 0.2],
        };
        let (tanh_out, _) = lstm_step(&p, &x, &state).unwrap();
        p.output_activation = CellOutputActivation::Sigmoid;
        let (sig_out, _) = lstm_step(&p, &x, &state).unwrap();
        assert_eq!(tanh_out.c, sig_out.c);
        let (rc, rh) = reference_step(&p, &x, &state.c, &state.h);
        for k in 0..3 {
            assert_relative_eq!(sig_out.c[k], rc[k], max_relative = 1e-12);
            assert_relative_eq!(sig_out.h[k], rh[k], max_relative = 1e-12);
        }
    }

    #[test]
    fn rejects_mismatched_input() {
        let p = LstmParams::<f32>::zeros(3, 2);
        assert!(lstm_step(&p, &[1.0, 2.0], &LstmState::zeros(2)).is_err());
        assert!(lstm_step(&p, &[1.0, 2.0, 3.0], &LstmState::zeros(5)).is_err());
    }

    #[test]
    fn gates_stay_in_range_under_extreme_inputs() {
        let mut rng = SeededRng::new(99);
        let p = LstmParams::<f32>::init(2, 4, &mut rng);
        let state = LstmState {
            c: vec![1e4, -1e4, 0.0, 3.0],
            h: vec![100.0, -100.0, 0.0, 1.0],
        };
        let (s, tape) = lstm_step(&p, &[1e6, -1e6], &state).unwrap();
        for gate in [&tape.f, &tape.i, &tape.o] {
            for &v in gate.iter() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        for &v in &s.h {
            assert!(v.is_finite());
            assert!(v.abs() <= 1.0 + 1e-6);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        // Scalar loss: fixed random projections of (c', h') after one step.
        let mut rng = SeededRng::new(4242);
        let p = LstmParams::<f64>::init(3, 4, &mut rng);
        let x: Vec<f64> = (0..3).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let state = LstmState {
            c: (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
            h: (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect(),
        };
        let wc: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let wh: Vec<f64> = (0..4).map(|_| rng.uniform_in(-1.0, 1.0)).collect();
        let loss = |p: &LstmParams<f64>, x: &[f64], state: &LstmState<f64>| -> f64 {
            let (s, _) = lstm_step(p, x, state).unwrap();
            s.c.iter().zip(&wc).map(|(a, b)| a * b).sum::<f64>()
                + s.h.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>()
        };

        let (_, tape) = lstm_step(&p, &x, &state).unwrap();
        let mut grads = p.zeros_like();
        let step = lstm_backward(&p, &tape, &wc, &wh, &mut grads).unwrap();

        let eps = 1e-5;
        let rel = |a: f64, n: f64| (a - n).abs() / a.abs().max(n.abs()).max(1e-6);

        // Parameters.
        let mut p_mut = p.clone();
        let analytic = grads.flat().iter().flat_map(|s| s.to_vec()).collect::<Vec<_>>();
        let mut idx = 0;
        let n_slices = p_mut.flat().len();
        for si in 0..n_slices {
            let len = p_mut.flat()[si].len();
            for j in 0..len {
                let orig = p_mut.flat()[si][j];
                p_mut.flat_mut()[si][j] = orig + eps;
                let up = loss(&p_mut, &x, &state);
                p_mut.flat_mut()[si][j] = orig - eps;
                let dn = loss(&p_mut, &x, &state);
                p_mut.flat_mut()[si][j] = orig;
                let fd = (up - dn) / (2.0 * eps);
                assert!(
                    rel(analytic[idx], fd) < 1e-6,
                    "param slice {si} entry {j}: analytic {} vs fd {}",
                    analytic[idx],
                    fd
                );
                idx += 1;
            }
        }

        // Input and previous state.
        for j in 0..x.len() {
            let mut xp = x.clone();
            xp[j] += eps;
            let up = loss(&p, &xp, &state);
            xp[j] -= 2.0 * eps;
            let dn = loss(&p, &xp, &state);
            let fd = (up - dn) / (2.0 * eps);
            assert!(rel(step.dx[j], fd) < 1e-6, "dx[{j}]");
        }
        for j in 0..4 {
            let mut sp = state.clone();
            sp.c[j] += eps;
            let up = loss(&p, &x, &sp);
            sp.c[j] -= 2.0 * eps;
            let dn = loss(&p, &x, &sp);
            let fd = (up - dn) / (2.0 * eps);
            assert!(rel(step.dc_prev[j], fd) < 1e-6, "dc_prev[{j}]");

            let mut sp = state.clone();
            sp.h[j] += eps;
            let up = loss(&p, &x, &sp);
            sp.h[j] -= 2.0 * eps;
            let dn = loss(&p, &x, &sp);
            let fd = (up - dn) / (2.0 * eps);
            assert!(rel(step.dh_prev[j], fd) < 1e-6, "dh_prev[{j}]");
        }
    }

    #[test]
    fn backward_with_zero_upstream_grad_is_zero() {
        let mut rng = SeededRng::new(8);
        let p = LstmParams::<f64>::init(2, 3, &mut rng);
        let (_, tape) = lstm_step(&p, &[0.5, -0.5], &LstmState::zeros(3)).unwrap();
        let mut grads = p.zeros_like();
        let step = lstm_backward(&p, &tape, &[0.0; 3], &[0.0; 3], &mut grads).unwrap();
        assert!(step.dx.iter().all(|&v| v == 0.0));
        assert!(grads.flat().iter().all(|s| s.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn sigmoid_output_backward_matches_finite_differences() {
        let mut rng = SeededRng::new(77);
        let mut p = LstmParams::<f64>::init(2, 2, &mut rng);
        p.output_activation = CellOutputActivation::Sigmoid;
        let x = [0.4, -0.9];
        let state = LstmState {
            c: vec![0.2, -0.5],
            h: vec![-0.1, 0.3],
        };
        let wh = [0.7, -1.1];
        let loss = |p: &LstmParams<f64>| {
            let (s, _) = lstm_step(p, &x, &state).unwrap();
            s.h.iter().zip(&wh).map(|(a, b)| a * b).sum::<f64>()
        };
        let (_, tape) = lstm_step(&p, &x, &state).unwrap();
        let mut grads = p.zeros_like();
        lstm_backward(&p, &tape, &[0.0, 0.0], &wh, &mut grads).unwrap();

        let eps = 1e-5;
        let orig = p.b_o[0];
        p.b_o[0] = orig + eps;
        let up = loss(&p);
        p.b_o[0] = orig - eps;
        let dn = loss(&p);
        p.b_o[0] = orig;
        let fd = (up - dn) / (2.0 * eps);
        assert_relative_eq!(grads.b_o[0], fd, max_relative = 1e-6);
    }
}
