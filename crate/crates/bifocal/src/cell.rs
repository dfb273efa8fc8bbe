//! The switching cell: K LSTM branches of (usually) different widths share
//! one timeline, and a per-frame signal `z_t` names the branch whose output
//! is trusted at frame t. Learned projection pairs carry (c, h) across branch
//! boundaries so a switch does not reset context.
//!
//! Two execution modes, numerically interchangeable:
//!
//! * **Eager** (training): every branch steps every frame, then the states of
//!   all inactive branches are overwritten with projections of the active
//!   branch's fresh state. Fully differentiable; used for BPTT.
//! * **Lazy** (inference): only the active branch steps. When `z` changes,
//!   the carried state is projected once into the incoming branch. One
//!   sub-cell evaluation per frame, projections only at switch frames.
//!
//! The active branch's trajectory is identical in both modes because the
//! eager rewrite stores, at frame t, exactly the value a lazy switch at t+1
//! would compute.
//!
//! A missing projection direction is treated differently per mode. The eager
//! rewrite writes zeros there: the write is speculative, and a schedule that
//! never reads the state back cannot tell. A lazy switch through a missing
//! direction is a hard error unless the cell is configured for zero-init
//! switching, because the transferred state is consumed immediately.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{lstm_backward, lstm_step, LstmParams, LstmState, LstmTape};
use crate::numerics::{Matrix, Scalar, SeededRng};

/// Per-frame branch selection for a whole utterance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchSignal(pub Vec<usize>);

impl SwitchSignal {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Number of frames whose branch differs from the previous frame's.
    pub fn transitions(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] != w[1]).count()
    }

    pub fn validate(&self, branches: usize) -> Result<()> {
        for &z in &self.0 {
            if z >= branches {
                return Err(Error::BadBranch { branch: z, branches });
            }
        }
        Ok(())
    }
}

/// One direction of state transfer: both carried vectors get their own
/// matrix, shaped target_hidden x source_hidden, no bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateProjection<F> {
    pub proj_c: Matrix<F>,
    pub proj_h: Matrix<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionEntry<F> {
    pub from: usize,
    pub to: usize,
    #[serde(flatten)]
    pub proj: StateProjection<F>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BifocalCellParams<F> {
    pub branches: Vec<LstmParams<F>>,
    /// Sorted by (from, to), at most one entry per direction.
    pub projections: Vec<ProjectionEntry<F>>,
    /// When true, a switch through a direction with no projection starts the
    /// incoming branch from zeros instead of erroring ("no projection"
    /// ablation).
    pub zero_init_on_switch: bool,
}

impl<F: Scalar> BifocalCellParams<F> {
    /// Learned projections for exactly the given directions.
    pub fn init(
        input_dims: &[usize],
        hidden_dims: &[usize],
        directions: &[(usize, usize)],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if input_dims.len() != hidden_dims.len() {
            return Err(Error::dim(
                "BifocalCellParams::init: input_dims vs hidden_dims",
                hidden_dims.len(),
                input_dims.len(),
            ));
        }
        let k = hidden_dims.len();
        let branches = input_dims
            .iter()
            .zip(hidden_dims)
            .map(|(&i, &h)| LstmParams::init(i, h, rng))
            .collect();
        let mut dirs: Vec<(usize, usize)> = directions.to_vec();
        dirs.sort_unstable();
        dirs.dedup();
        let mut projections = Vec::with_capacity(dirs.len());
        for (from, to) in dirs {
            if from >= k {
                return Err(Error::BadBranch { branch: from, branches: k });
            }
            if to >= k {
                return Err(Error::BadBranch { branch: to, branches: k });
            }
            if from == to {
                return Err(Error::config(
                    "projections",
                    format!("self-projection {from} -> {to} is meaningless"),
                ));
            }
            projections.push(ProjectionEntry {
                from,
                to,
                proj: StateProjection {
                    proj_c: Matrix::glorot(hidden_dims[to], hidden_dims[from], rng),
                    proj_h: Matrix::glorot(hidden_dims[to], hidden_dims[from], rng),
                },
            });
        }
        Ok(BifocalCellParams {
            branches,
            projections,
            zero_init_on_switch: false,
        })
    }

    /// The ablation variant: no projections anywhere; switches zero-init.
    pub fn init_zero_switch(
        input_dims: &[usize],
        hidden_dims: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let mut p = Self::init(input_dims, hidden_dims, &[], rng)?;
        p.zero_init_on_switch = true;
        Ok(p)
    }

    pub fn num_branches(&self) -> usize {
        self.branches.len()
    }

    pub fn hidden_dim(&self, branch: usize) -> usize {
        self.branches[branch].hidden_dim
    }

    pub fn projection(&self, from: usize, to: usize) -> Option<&StateProjection<F>> {
        self.projections
            .iter()
            .find(|e| e.from == from && e.to == to)
            .map(|e| &e.proj)
    }

    /// Check that every transition a schedule can produce is serviceable.
    pub fn supports_transitions(&self, transitions: &[(usize, usize)]) -> Result<()> {
        for &(from, to) in transitions {
            if from >= self.branches.len() {
                return Err(Error::BadBranch {
                    branch: from,
                    branches: self.branches.len(),
                });
            }
            if to >= self.branches.len() {
                return Err(Error::BadBranch {
                    branch: to,
                    branches: self.branches.len(),
                });
            }
            if !self.zero_init_on_switch && self.projection(from, to).is_none() {
                return Err(Error::MissingProjection { from, to });
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        BifocalCellParams {
            branches: self.branches.iter().map(LstmParams::zeros_like).collect(),
            projections: self
                .projections
                .iter()
                .map(|e| ProjectionEntry {
                    from: e.from,
                    to: e.to,
                    proj: StateProjection {
                        proj_c: Matrix::zeros(e.proj.proj_c.rows(), e.proj.proj_c.cols()),
                        proj_h: Matrix::zeros(e.proj.proj_h.rows(), e.proj.proj_h.cols()),
                    },
                })
                .collect(),
            zero_init_on_switch: self.zero_init_on_switch,
        }
    }

    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for b in &self.branches {
            out.extend(b.flat());
        }
        for e in &self.projections {
            out.push(e.proj.proj_c.data());
            out.push(e.proj.proj_h.data());
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for b in &mut self.branches {
            out.extend(b.flat_mut());
        }
        for e in &mut self.projections {
            out.push(e.proj.proj_c.data_mut());
            out.push(e.proj.proj_h.data_mut());
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> BifocalCellParams<G> {
        BifocalCellParams {
            branches: self.branches.iter().map(LstmParams::cast).collect(),
            projections: self
                .projections
                .iter()
                .map(|e| ProjectionEntry {
                    from: e.from,
                    to: e.to,
                    proj: StateProjection {
                        proj_c: e.proj.proj_c.cast(),
                        proj_h: e.proj.proj_h.cast(),
                    },
                })
                .collect(),
            zero_init_on_switch: self.zero_init_on_switch,
        }
    }
}

/// Eager-mode state: one (c, h) pair per branch.
#[derive(Debug, Clone, PartialEq)]
pub struct BifocalState<F> {
    pub branches: Vec<LstmState<F>>,
}

impl<F: Scalar> BifocalState<F> {
    pub fn zeros(p: &BifocalCellParams<F>) -> Self {
        BifocalState {
            branches: p.branches.iter().map(|b| LstmState::zeros(b.hidden_dim)).collect(),
        }
    }
}

/// Tape for one eager frame. Inactive-branch tapes are kept for shape
/// bookkeeping but never walked in backward: their outputs are overwritten,
/// so no gradient reaches them.
#[derive(Debug, Clone)]
pub struct BifocalTape<F> {
    pub z: usize,
    pub active_tape: LstmTape<F>,
    /// Active branch's freshly computed state, the projection source.
    pub active_c: Vec<F>,
    pub active_h: Vec<F>,
}

/// One eager frame: all branches step, inactive branches are rewritten.
///
/// `xs` holds one input per branch (layer 0 of an encoder passes the same
/// frame K times; upper layers pass each branch its own input).
pub fn eager_step<F: Scalar>(
    p: &BifocalCellParams<F>,
    xs: &[Vec<F>],
    state: &BifocalState<F>,
    z: usize,
) -> Result<(BifocalState<F>, BifocalTape<F>)> {
    let k = p.branches.len();
    if z >= k {
        return Err(Error::BadBranch { branch: z, branches: k });
    }
    if xs.len() != k {
        return Err(Error::dim("eager_step: inputs per branch", k, xs.len()));
    }
    if state.branches.len() != k {
        return Err(Error::dim("eager_step: state branches", k, state.branches.len()));
    }

    let mut new_states = Vec::with_capacity(k);
    let mut active_tape = None;
    for b in 0..k {
        let (s, tape) = lstm_step(&p.branches[b], &xs[b], &state.branches[b])?;
        if b == z {
            active_tape = Some(tape);
        }
        new_states.push(s);
    }
    let active_tape = active_tape.expect("z checked above");
    let active_c = new_states[z].c.clone();
    let active_h = new_states[z].h.clone();

    for b in 0..k {
        if b == z {
            continue;
        }
        match p.projection(z, b) {
            Some(proj) => {
                new_states[b] = LstmState {
                    c: proj.proj_c.matvec(&active_c)?,
                    h: proj.proj_h.matvec(&active_h)?,
                };
            }
            None => {
                // Speculative write with nothing to write: zeros. A schedule
                // that consumes this direction is rejected up front by
                // `supports_transitions`.
                new_states[b] = LstmState::zeros(p.branches[b].hidden_dim);
            }
        }
    }

    Ok((
        BifocalState { branches: new_states },
        BifocalTape {
            z,
            active_tape,
            active_c,
            active_h,
        },
    ))
}

/// Lazy-mode carried state: which branch owns it, and its (c, h).
/// `branch == None` before the first frame.
#[derive(Debug, Clone)]
pub struct LazyState<F> {
    pub branch: Option<usize>,
    pub state: LstmState<F>,
}

impl<F: Scalar> LazyState<F> {
    pub fn fresh() -> Self {
        LazyState {
            branch: None,
            state: LstmState { c: vec![], h: vec![] },
        }
    }
}

/// Outcome bookkeeping for one lazy frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LazyStepInfo {
    pub switched: bool,
    /// True only when projection matrices were actually applied (a zero-init
    /// switch flips `switched` but not this).
    pub projected: bool,
}

/// One lazy frame: project the carried state if the branch changed, then step
/// only branch `z`.
pub fn lazy_step<F: Scalar>(
    p: &BifocalCellParams<F>,
    x: &[F],
    prev: &LazyState<F>,
    z: usize,
) -> Result<(LazyState<F>, LazyStepInfo)> {
    let k = p.branches.len();
    if z >= k {
        return Err(Error::BadBranch { branch: z, branches: k });
    }

    let (start, info) = match prev.branch {
        None => (
            LstmState::zeros(p.branches[z].hidden_dim),
            LazyStepInfo {
                switched: false,
                projected: false,
            },
        ),
        Some(a) if a == z => (
            prev.state.clone(),
            LazyStepInfo {
                switched: false,
                projected: false,
            },
        ),
        Some(a) => match p.projection(a, z) {
            Some(proj) => (
                LstmState {
                    c: proj.proj_c.matvec(&prev.state.c)?,
                    h: proj.proj_h.matvec(&prev.state.h)?,
                },
                LazyStepInfo {
                    switched: true,
                    projected: true,
                },
            ),
            None if p.zero_init_on_switch => (
                LstmState::zeros(p.branches[z].hidden_dim),
                LazyStepInfo {
                    switched: true,
                    projected: false,
                },
            ),
            None => return Err(Error::MissingProjection { from: a, to: z }),
        },
    };

    let (state, _) = lstm_step(&p.branches[z], x, &start)?;
    Ok((
        LazyState {
            branch: Some(z),
            state,
        },
        info,
    ))
}

/// BPTT over a sequence of eager frames.
///
/// `dh_ext[t][b]` is the loss gradient w.r.t. branch b's post-rewrite hidden
/// state at frame t (what downstream consumers saw). Parameter gradients
/// accumulate into `grads`; the return value is the gradient w.r.t. each
/// branch's input at each frame.
///
/// Only the active branch's step is walked per frame: inactive branches'
/// computed states are overwritten before anyone reads them, so their
/// in-frame gradient is identically zero. Gradient arriving at an inactive
/// slot flows through the projection into the active branch instead.
pub fn eager_backward<F: Scalar>(
    p: &BifocalCellParams<F>,
    tapes: &[BifocalTape<F>],
    dh_ext: &[Vec<Vec<F>>],
    grads: &mut BifocalCellParams<F>,
) -> Result<Vec<Vec<Vec<F>>>> {
    let k = p.branches.len();
    let t_len = tapes.len();
    if dh_ext.len() != t_len {
        return Err(Error::dim("eager_backward: dh_ext frames", t_len, dh_ext.len()));
    }

    let mut dc_carry: Vec<Vec<F>> = (0..k).map(|b| vec![F::zero(); p.branches[b].hidden_dim]).collect();
    let mut dh_carry: Vec<Vec<F>> = (0..k).map(|b| vec![F::zero(); p.branches[b].hidden_dim]).collect();
    let mut dx_out: Vec<Vec<Vec<F>>> = (0..t_len)
        .map(|_| (0..k).map(|b| vec![F::zero(); p.branches[b].input_dim]).collect())
        .collect();

    for t in (0..t_len).rev() {
        let tape = &tapes[t];
        let z = tape.z;
        if dh_ext[t].len() != k {
            return Err(Error::dim("eager_backward: dh_ext branches", k, dh_ext[t].len()));
        }

        // Gradients w.r.t. post-rewrite states at frame t.
        let mut dc_active = std::mem::take(&mut dc_carry[z]);
        let mut dh_active = std::mem::take(&mut dh_carry[z]);
        for (a, e) in dh_active.iter_mut().zip(&dh_ext[t][z]) {
            *a = *a + *e;
        }

        // Inactive slots hold projections of the active state: route their
        // gradient through the projection matrices.
        for b in 0..k {
            if b == z {
                continue;
            }
            let dc_b = std::mem::take(&mut dc_carry[b]);
            let mut dh_b = std::mem::take(&mut dh_carry[b]);
            for (a, e) in dh_b.iter_mut().zip(&dh_ext[t][b]) {
                *a = *a + *e;
            }
            let nonzero = dc_b.iter().chain(&dh_b).any(|&v| v != F::zero());
            dc_carry[b] = vec![F::zero(); p.branches[b].hidden_dim];
            dh_carry[b] = vec![F::zero(); p.branches[b].hidden_dim];
            if !nonzero {
                continue;
            }
            if let Some(proj) = p.projection(z, b) {
                let gproj = grads
                    .projections
                    .iter_mut()
                    .find(|e| e.from == z && e.to == b)
                    .ok_or(Error::MissingProjection { from: z, to: b })?;
                gproj.proj.proj_c.add_outer(&dc_b, &tape.active_c)?;
                gproj.proj.proj_h.add_outer(&dh_b, &tape.active_h)?;
                let back_c = proj.proj_c.matvec_t(&dc_b)?;
                let back_h = proj.proj_h.matvec_t(&dh_b)?;
                for (a, v) in dc_active.iter_mut().zip(&back_c) {
                    *a = *a + *v;
                }
                for (a, v) in dh_active.iter_mut().zip(&back_h) {
                    *a = *a + *v;
                }
            }
            // Missing projection: the slot held zeros, gradient dies here.
        }

        let step = lstm_backward(
            &p.branches[z],
            &tape.active_tape,
            &dc_active,
            &dh_active,
            &mut grads.branches[z],
        )?;
        dx_out[t][z] = step.dx;
        dc_carry[z] = step.dc_prev;
        dh_carry[z] = step.dh_prev;
    }

    Ok(dx_out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn all_pairs(k: usize) -> Vec<(usize, usize)> {
        let mut v = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    v.push((a, b));
                }
            }
        }
        v
    }

    /// Scalar-loop eager reference: explicit per-entry arithmetic, including
    /// the inactive-branch rewrite.
    fn reference_eager(
        p: &BifocalCellParams<f64>,
        frames: &[Vec<Vec<f64>>],
        z: &[usize],
    ) -> Vec<LstmState<f64>> {
        let k = p.branches.len();
        let mut states: Vec<LstmState<f64>> = p
            .branches
            .iter()
            .map(|b| LstmState::zeros(b.hidden_dim))
            .collect();
        for (t, xs) in frames.iter().enumerate() {
            let mut fresh = Vec::with_capacity(k);
            for b in 0..k {
                let prm = &p.branches[b];
                let n = prm.hidden_dim;
                let mut c = vec![0.0; n];
                let mut h = vec![0.0; n];
                for kk in 0..n {
                    let mut af = prm.b_f[kk];
                    let mut ai = prm.b_i[kk];
                    let mut ao = prm.b_o[kk];
                    let mut ag = prm.b_c[kk];
                    for j in 0..prm.input_dim {
                        af += prm.w_f.get(kk, j) * xs[b][j];
                        ai += prm.w_i.get(kk, j) * xs[b][j];
                        ao += prm.w_o.get(kk, j) * xs[b][j];
                        ag += prm.w_c.get(kk, j) * xs[b][j];
                    }
                    for j in 0..n {
                        af += prm.u_f.get(kk, j) * states[b].h[j];
                        ai += prm.u_i.get(kk, j) * states[b].h[j];
                        ao += prm.u_o.get(kk, j) * states[b].h[j];
                        ag += prm.u_c.get(kk, j) * states[b].h[j];
                    }
                    let f = 1.0 / (1.0 + (-af).exp());
                    let i = 1.0 / (1.0 + (-ai).exp());
                    let o = 1.0 / (1.0 + (-ao).exp());
                    let g = ag.tanh();
                    c[kk] = f * states[b].c[kk] + i * g;
                    h[kk] = o * c[kk].tanh();
                }
                fresh.push(LstmState { c, h });
            }
            let active = z[t];
            for b in 0..k {
                if b == active {
                    states[b] = fresh[b].clone();
                } else if let Some(proj) = p.projection(active, b) {
                    let n = p.branches[b].hidden_dim;
                    let m = p.branches[active].hidden_dim;
                    let mut c = vec![0.0; n];
                    let mut h = vec![0.0; n];
                    for r in 0..n {
                        for cc in 0..m {
                            c[r] += proj.proj_c.get(r, cc) * fresh[active].c[cc];
                            h[r] += proj.proj_h.get(r, cc) * fresh[active].h[cc];
                        }
                    }
                    states[b] = LstmState { c, h };
                } else {
                    states[b] = LstmState::zeros(p.branches[b].hidden_dim);
                }
            }
        }
        states
    }

    // Captured from `reference_eager` on the seed-7 cell in
    // `matches_scalar_reference`.
    const FROZEN_LARGE_C: [f64; 3] = [-0.1956729208315146, 0.2043598023346298, 0.21126327596468888];
    const FROZEN_LARGE_H: [f64; 3] = [-0.09584291726589692, 0.08291545310576118, 0.11892365303364696];

    #[test]
    fn constant_small_branch_keeps_projecting_into_large() {
        // z == 0 everywhere: after each frame the large branch's state must
        // be exactly P(0->1) applied to the small branch's fresh state.
        let mut rng = SeededRng::new(21);
        let p = BifocalCellParams::<f64>::init(&[2, 2], &[2, 3], &[(0, 1)], &mut rng).unwrap();
        let mut state = BifocalState::zeros(&p);
        for t in 0..4 {
            let x = vec![
                vec![0.3 * (t as f64 + 1.0), -0.2],
                vec![0.3 * (t as f64 + 1.0), -0.2],
            ];
            let (next, _) = eager_step(&p, &x, &state, 0).unwrap();
            let proj = p.projection(0, 1).unwrap();
            let want_c = proj.proj_c.matvec(&next.branches[0].c).unwrap();
            let want_h = proj.proj_h.matvec(&next.branches[0].h).unwrap();
            assert_eq!(next.branches[1].c, want_c);
            assert_eq!(next.branches[1].h, want_h);
            state = next;
        }
    }

    #[test]
    fn zero_projection_matrices_give_zero_state_at_switch() {
        let mut rng = SeededRng::new(3);
        let mut p = BifocalCellParams::<f64>::init(&[2, 2], &[2, 2], &[(0, 1)], &mut rng).unwrap();
        for e in p.projections.iter_mut() {
            e.proj.proj_c = Matrix::zeros(2, 2);
            e.proj.proj_h = Matrix::zeros(2, 2);
        }
        let mut lazy = LazyState::fresh();
        let xs = [vec![0.4, 0.1], vec![-0.3, 0.9], vec![0.2, 0.2]];
        let z = [0usize, 0, 1];
        let mut projected_frames = 0;
        for (t, x) in xs.iter().enumerate() {
            let (next, info) = lazy_step(&p, x, &lazy, z[t]).unwrap();
            if info.projected {
                projected_frames += 1;
                // Branch 1 starts this frame from zeros, i.e. the state it
                // steps from matches the ablation's zero-init.
                let (from_zero, _) =
                    lstm_step(&p.branches[1], x, &LstmState::zeros(2)).unwrap();
                assert_eq!(next.state, from_zero);
            }
            lazy = next;
        }
        assert_eq!(projected_frames, 1);
    }

    #[test]
    fn matches_scalar_reference() {
        let mut rng = SeededRng::new(7);
        let p = BifocalCellParams::<f64>::init(&[2, 2], &[2, 3], &all_pairs(2), &mut rng).unwrap();
        let frames: Vec<Vec<Vec<f64>>> = (0..3)
            .map(|t| {
                let x = vec![0.5 - 0.3 * t as f64, 0.1 * t as f64 + 0.2];
                vec![x.clone(), x]
            })
            .collect();
        let z = [0usize, 0, 1];

        let mut state = BifocalState::zeros(&p);
        for t in 0..3 {
            let (next, _) = eager_step(&p, &frames[t], &state, z[t]).unwrap();
            state = next;
        }
        let want = reference_eager(&p, &frames, &z);
        for b in 0..2 {
            for k in 0..p.branches[b].hidden_dim {
                assert_relative_eq!(state.branches[b].c[k], want[b].c[k], max_relative = 1e-12);
                assert_relative_eq!(state.branches[b].h[k], want[b].h[k], max_relative = 1e-12);
            }
        }
        for k in 0..3 {
            assert_relative_eq!(state.branches[1].c[k], FROZEN_LARGE_C[k], max_relative = 1e-10);
            assert_relative_eq!(state.branches[1].h[k], FROZEN_LARGE_H[k], max_relative = 1e-10);
        }
    }

    #[test]
    fn lazy_constant_z_equals_plain_lstm_bitwise() {
        let mut rng = SeededRng::new(15);
        let p = BifocalCellParams::<f32>::init(&[3, 3], &[4, 2], &all_pairs(2), &mut rng).unwrap();
        let frames: Vec<Vec<f32>> = (0..6)
            .map(|t| vec![0.1 * t as f32, -0.4, 0.25 * t as f32])
            .collect();

        let mut lazy = LazyState::fresh();
        let mut plain = LstmState::zeros(4);
        for x in &frames {
            let (next, info) = lazy_step(&p, x, &lazy, 0).unwrap();
            let (pnext, _) = lstm_step(&p.branches[0], x, &plain).unwrap();
            assert!(!info.switched);
            assert_eq!(next.state.c, pnext.c);
            assert_eq!(next.state.h, pnext.h);
            lazy = next;
            plain = pnext;
        }
    }

    #[test]
    fn single_branch_cell_degenerates_to_plain_lstm_bitwise() {
        let mut rng = SeededRng::new(31);
        let p = BifocalCellParams::<f32>::init(&[2], &[3], &[], &mut rng).unwrap();
        let mut eager = BifocalState::zeros(&p);
        let mut plain = LstmState::zeros(3);
        for t in 0..5 {
            let x = vec![0.2 * t as f32, -0.7];
            let (next, _) = eager_step(&p, std::slice::from_ref(&x), &eager, 0).unwrap();
            let (pnext, _) = lstm_step(&p.branches[0], &x, &plain).unwrap();
            assert_eq!(next.branches[0].c, pnext.c);
            assert_eq!(next.branches[0].h, pnext.h);
            eager = next;
            plain = pnext;
        }
    }

    #[test]
    fn eager_and_lazy_agree_on_random_switching() {
        for trial in 0..50u64 {
            let mut rng = SeededRng::new(1000 + trial);
            let k = 2 + (trial % 2) as usize;
            let dims: Vec<usize> = (0..k).map(|_| 1 + rng.below(8)).collect();
            let in_dim = 1 + rng.below(4);
            let p = BifocalCellParams::<f32>::init(
                &vec![in_dim; k],
                &dims,
                &all_pairs(k),
                &mut rng,
            )
            .unwrap();
            let t_len = 1 + rng.below(20);
            let z: Vec<usize> = (0..t_len).map(|_| rng.below(k)).collect();
            let frames: Vec<Vec<f32>> = (0..t_len)
                .map(|_| (0..in_dim).map(|_| rng.uniform_in(-1.0, 1.0) as f32).collect())
                .collect();

            let mut eager = BifocalState::zeros(&p);
            let mut lazy = LazyState::fresh();
            let mut projections = 0usize;
            for t in 0..t_len {
                let xs: Vec<Vec<f32>> = (0..k).map(|_| frames[t].clone()).collect();
                let (enext, _) = eager_step(&p, &xs, &eager, z[t]).unwrap();
                let (lnext, info) = lazy_step(&p, &frames[t], &lazy, z[t]).unwrap();
                if info.projected {
                    projections += 1;
                }
                let active = &enext.branches[z[t]];
                for j in 0..dims[z[t]] {
                    assert!(
                        (active.h[j] - lnext.state.h[j]).abs() <= 1e-5,
                        "trial {trial} frame {t} h[{j}]: eager {} lazy {}",
                        active.h[j],
                        lnext.state.h[j]
                    );
                    assert!((active.c[j] - lnext.state.c[j]).abs() <= 1e-5);
                }
                eager = enext;
                lazy = lnext;
            }
            let signal = SwitchSignal(z);
            assert_eq!(projections, signal.transitions(), "trial {trial}");
        }
    }

    #[test]
    fn lazy_missing_projection_errors_unless_zero_init() {
        let mut rng = SeededRng::new(5);
        let p = BifocalCellParams::<f64>::init(&[1, 1], &[2, 2], &[(0, 1)], &mut rng).unwrap();
        let mut lazy = LazyState::fresh();
        let (next, _) = lazy_step(&p, &[0.5], &lazy, 1).unwrap();
        lazy = next;
        let err = lazy_step(&p, &[0.5], &lazy, 0).unwrap_err();
        assert!(matches!(err, Error::MissingProjection { from: 1, to: 0 }));

        let mut rng = SeededRng::new(5);
        let pz = BifocalCellParams::<f64>::init_zero_switch(&[1, 1], &[2, 2], &mut rng).unwrap();
        let mut lazy = LazyState::fresh();
        let (next, _) = lazy_step(&pz, &[0.5], &lazy, 1).unwrap();
        lazy = next;
        let (next, info) = lazy_step(&pz, &[0.5], &lazy, 0).unwrap();
        assert!(info.switched && !info.projected);
        let (want, _) = lstm_step(&pz.branches[0], &[0.5], &LstmState::zeros(2)).unwrap();
        assert_eq!(next.state, want);
    }

    #[test]
    fn supports_transitions_checks_directions() {
        let mut rng = SeededRng::new(1);
        let p = BifocalCellParams::<f32>::init(&[1, 1], &[2, 3], &[(0, 1)], &mut rng).unwrap();
        assert!(p.supports_transitions(&[(0, 1)]).is_ok());
        assert!(matches!(
            p.supports_transitions(&[(0, 1), (1, 0)]).unwrap_err(),
            Error::MissingProjection { from: 1, to: 0 }
        ));
        assert!(p.supports_transitions(&[(0, 5)]).is_err());
    }

    #[test]
    fn dead_branch_receives_zero_gradient() {
        // z == 0 always and the loss only reads branch 0: branch 1's weights
        // must end with exactly zero gradient even though projections into it
        // fire every frame.
        let mut rng = SeededRng::new(17);
        let p = BifocalCellParams::<f64>::init(&[2, 2], &[3, 2], &all_pairs(2), &mut rng).unwrap();
        let t_len = 4;
        let mut state = BifocalState::zeros(&p);
        let mut tapes = Vec::new();
        for t in 0..t_len {
            let x = vec![0.3 - 0.1 * t as f64, 0.4];
            let (next, tape) = eager_step(&p, &[x.clone(), x], &state, 0).unwrap();
            tapes.push(tape);
            state = next;
        }
        let dh_ext: Vec<Vec<Vec<f64>>> = (0..t_len)
            .map(|_| vec![vec![1.0, -0.5, 0.25], vec![0.0, 0.0]])
            .collect();
        let mut grads = p.zeros_like();
        eager_backward(&p, &tapes, &dh_ext, &mut grads).unwrap();
        assert!(grads.branches[1].flat().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        // Projections into the dead branch also see no gradient: nothing
        // downstream read the projected state.
        let gp = grads.projection(0, 1).unwrap();
        assert!(gp.proj_c.data().iter().all(|&v| v == 0.0));
        // But branch 0 itself trained.
        assert!(grads.branches[0].flat().iter().any(|s| s.iter().any(|&v| v != 0.0)));
    }

    #[test]
    fn eager_backward_matches_finite_differences() {
        // Loss reads every branch's post-rewrite hidden state every frame, so
        // the projection paths carry gradient at every frame, not only at
        // switches.
        let mut rng = SeededRng::new(4100);
        let dims = [2usize, 3];
        let p = BifocalCellParams::<f64>::init(&[2, 2], &dims, &all_pairs(2), &mut rng).unwrap();
        let t_len = 4;
        let z = [0usize, 1, 1, 0];
        let frames: Vec<Vec<f64>> = (0..t_len)
            .map(|_| (0..2).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
            .collect();
        let w: Vec<Vec<Vec<f64>>> = (0..t_len)
            .map(|_| {
                dims.iter()
                    .map(|&d| (0..d).map(|_| rng.uniform_in(-1.0, 1.0)).collect())
                    .collect()
            })
            .collect();

        let loss = |p: &BifocalCellParams<f64>| -> f64 {
            let mut state = BifocalState::zeros(p);
            let mut acc = 0.0;
            for t in 0..t_len {
                let xs = vec![frames[t].clone(), frames[t].clone()];
                let (next, _) = eager_step(p, &xs, &state, z[t]).unwrap();
                for b in 0..2 {
                    acc += next.branches[b]
                        .h
                        .iter()
                        .zip(&w[t][b])
                        .map(|(a, b)| a * b)
                        .sum::<f64>();
                }
                state = next;
            }
            acc
        };

        let mut state = BifocalState::zeros(&p);
        let mut tapes = Vec::new();
        for t in 0..t_len {
            let xs = vec![frames[t].clone(), frames[t].clone()];
            let (next, tape) = eager_step(&p, &xs, &state, z[t]).unwrap();
            tapes.push(tape);
            state = next;
        }
        let mut grads = p.zeros_like();
        eager_backward(&p, &tapes, &w, &mut grads).unwrap();

        let analytic: Vec<f64> = grads.flat().iter().flat_map(|s| s.to_vec()).collect();
        let mut p_mut = p.clone();
        let eps = 1e-5;
        let mut idx = 0;
        let n_slices = p_mut.flat().len();
        for si in 0..n_slices {
            let len = p_mut.flat()[si].len();
            for j in 0..len {
                let orig = p_mut.flat()[si][j];
                p_mut.flat_mut()[si][j] = orig + eps;
                let up = loss(&p_mut);
                p_mut.flat_mut()[si][j] = orig - eps;
                let dn = loss(&p_mut);
                p_mut.flat_mut()[si][j] = orig;
                let fd = (up - dn) / (2.0 * eps);
                let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
                assert!(
                    (analytic[idx] - fd).abs() / denom < 1e-6,
                    "slice {si} entry {j}: analytic {} vs fd {}",
                    analytic[idx],
                    fd
                );
                idx += 1;
            }
        }
        assert_eq!(idx, analytic.len());
    }

    #[test]
    fn eager_backward_zero_trajectory_gives_zero_grads() {
        let mut rng = SeededRng::new(6);
        let p = BifocalCellParams::<f64>::init(&[1, 1], &[2, 2], &all_pairs(2), &mut rng).unwrap();
        let mut state = BifocalState::zeros(&p);
        let mut tapes = Vec::new();
        for t in 0..3 {
            let x = vec![vec![0.5 - t as f64 * 0.2], vec![0.5 - t as f64 * 0.2]];
            let (next, tape) = eager_step(&p, &x, &state, t % 2).unwrap();
            tapes.push(tape);
            state = next;
        }
        let dh_ext = vec![vec![vec![0.0; 2], vec![0.0; 2]]; 3];
        let mut grads = p.zeros_like();
        let dx = eager_backward(&p, &tapes, &dh_ext, &mut grads).unwrap();
        assert!(grads.flat().iter().all(|s| s.iter().all(|&v| v == 0.0)));
        assert!(dx.iter().flatten().flatten().all(|&v| v == 0.0));
    }
}
