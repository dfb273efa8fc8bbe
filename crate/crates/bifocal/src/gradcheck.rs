//! Central finite-difference verification of every hand-derived gradient,
//! run in f64 where the scheme has ~1e-10 headroom. Each component gets a
//! scalar readout loss with fixed random weights; analytic parameter
//! gradients are compared entry-by-entry against (L(p+e) - L(p-e)) / 2e.

use serde::{Deserialize, Serialize};

use crate::cell::{eager_backward, eager_step, BifocalCellParams, BifocalState, SwitchSignal};
use crate::encoder::{encode_backward, encode_eager, EncoderParams};
use crate::error::Result;
use crate::lstm::{lstm_backward, lstm_step, LstmParams, LstmState};
use crate::numerics::SeededRng;
use crate::transducer::{
    transducer_nll, transducer_nll_and_grads, JointActivation, JointNet, NodeLogits,
};

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 20;

/// Relative error with an absolute floor so near-zero pairs compare sanely.
pub fn rel_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentReport {
    pub name: String,
    pub trials: usize,
    pub params_checked: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub epsilon: f64,
    pub tolerance: f64,
    pub trials: usize,
    pub components: Vec<ComponentReport>,
    pub passed: bool,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.components.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }
}

/// Sweep every parameter of `$p` (via flat/flat_mut), comparing `$grads`
/// against central differences of `$loss`. Accumulates into
/// (`$max`, `$count`).
macro_rules! fd_sweep {
    ($p:expr, $grads:expr, $eps:expr, $loss:expr, $max:expr, $count:expr) => {{
        let n_slices = $p.flat().len();
        for s in 0..n_slices {
            let len = $p.flat()[s].len();
            for i in 0..len {
                let orig = $p.flat()[s][i];
                $p.flat_mut()[s][i] = orig + $eps;
                let lp: f64 = $loss(&$p)?;
                $p.flat_mut()[s][i] = orig - $eps;
                let lm: f64 = $loss(&$p)?;
                $p.flat_mut()[s][i] = orig;
                let fd = (lp - lm) / (2.0 * $eps);
                let an = $grads.flat()[s][i];
                $max = f64::max($max, rel_error(an, fd));
                $count += 1;
            }
        }
    }};
}

fn random_vec(n: usize, rng: &mut SeededRng) -> Vec<f64> {
    (0..n).map(|_| rng.uniform_in(-1.0, 1.0)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Three-step BPTT through a single LSTM.
fn check_lstm(trials: usize, eps: f64) -> Result<(f64, usize)> {
    let mut max_rel = 0.0;
    let mut count = 0;
    for trial in 0..trials {
        let mut rng = SeededRng::with_stream(0x15731, trial as u64);
        let input_dim = 1 + rng.below(4);
        let hidden_dim = 1 + rng.below(4);
        let mut p = LstmParams::<f64>::init(input_dim, hidden_dim, &mut rng);
        let xs: Vec<Vec<f64>> = (0..3).map(|_| random_vec(input_dim, &mut rng)).collect();
        let w: Vec<Vec<f64>> = (0..3).map(|_| random_vec(hidden_dim, &mut rng)).collect();

        let loss = |p: &LstmParams<f64>| -> Result<f64> {
            let mut state = LstmState::zeros(hidden_dim);
            let mut l = 0.0;
            for (x, wt) in xs.iter().zip(&w) {
                state = lstm_step(p, x, &state)?.0;
                l += dot(wt, &state.h);
            }
            Ok(l)
        };

        let mut grads = p.zeros_like();
        let mut state = LstmState::zeros(hidden_dim);
        let mut tapes = Vec::new();
        for x in &xs {
            let (next, tape) = lstm_step(&p, x, &state)?;
            state = next;
            tapes.push(tape);
        }
        let mut dc = vec![0.0; hidden_dim];
        let mut dh = vec![0.0; hidden_dim];
        for t in (0..3).rev() {
            for (a, b) in dh.iter_mut().zip(&w[t]) {
                *a += *b;
            }
            let step = lstm_backward(&p, &tapes[t], &dc, &dh, &mut grads)?;
            dc = step.dc_prev;
            dh = step.dh_prev;
        }

        fd_sweep!(p, grads, eps, loss, max_rel, count);
    }
    Ok((max_rel, count))
}

/// Switching cell with every projection direction live; the readout covers
/// all branches' post-rewrite hidden states so cross-branch writes matter.
fn check_bifocal_cell(trials: usize, eps: f64) -> Result<(f64, usize)> {
    let mut max_rel = 0.0;
    let mut count = 0;
    for trial in 0..trials {
        let mut rng = SeededRng::with_stream(0xb1f0, trial as u64);
        let k = 2 + rng.below(2);
        let input_dims: Vec<usize> = (0..k).map(|_| 1 + rng.below(3)).collect();
        let hidden_dims: Vec<usize> = (0..k).map(|_| 1 + rng.below(3)).collect();
        let mut directions = Vec::new();
        for a in 0..k {
            for b in 0..k {
                if a != b {
                    directions.push((a, b));
                }
            }
        }
        let mut p = BifocalCellParams::<f64>::init(&input_dims, &hidden_dims, &directions, &mut rng)?;

        let t_len = 5;
        let mut z: Vec<usize> = (0..t_len).map(|_| rng.below(k)).collect();
        z[0] = 0;
        z[1] = 1;
        let xs: Vec<Vec<Vec<f64>>> = (0..t_len)
            .map(|_| input_dims.iter().map(|&d| random_vec(d, &mut rng)).collect())
            .collect();
        let w: Vec<Vec<Vec<f64>>> = (0..t_len)
            .map(|_| hidden_dims.iter().map(|&d| random_vec(d, &mut rng)).collect())
            .collect();

        let loss = |p: &BifocalCellParams<f64>| -> Result<f64> {
            let mut state = BifocalState::zeros(p);
            let mut l = 0.0;
            for t in 0..t_len {
                state = eager_step(p, &xs[t], &state, z[t])?.0;
                for b in 0..p.num_branches() {
                    l += dot(&w[t][b], &state.branches[b].h);
                }
            }
            Ok(l)
        };

        let mut grads = p.zeros_like();
        let mut state = BifocalState::zeros(&p);
        let mut tapes = Vec::new();
        for t in 0..t_len {
            let (next, tape) = eager_step(&p, &xs[t], &state, z[t])?;
            state = next;
            tapes.push(tape);
        }
        eager_backward(&p, &tapes, &w, &mut grads)?;

        fd_sweep!(p, grads, eps, loss, max_rel, count);
    }
    Ok((max_rel, count))
}

/// Two stacked switching layers plus the shared output head.
fn check_encoder(trials: usize, eps: f64) -> Result<(f64, usize)> {
    let mut max_rel = 0.0;
    let mut count = 0;
    for trial in 0..trials {
        let mut rng = SeededRng::with_stream(0xe2c, trial as u64);
        let feature_dim = 1 + rng.below(3);
        let branch_dims = [1 + rng.below(3), 1 + rng.below(3)];
        let shared_out = 1 + rng.below(3);
        let mut p = EncoderParams::<f64>::init(
            feature_dim,
            2,
            &branch_dims,
            shared_out,
            &[(0, 1), (1, 0)],
            false,
            &mut rng,
        )?;

        let t_len = 6;
        let mut z: Vec<usize> = (0..t_len).map(|_| rng.below(2)).collect();
        z[0] = 0;
        z[1] = 1;
        let z = SwitchSignal(z);
        let frames: Vec<Vec<f64>> = (0..t_len).map(|_| random_vec(feature_dim, &mut rng)).collect();
        let w: Vec<Vec<f64>> = (0..t_len).map(|_| random_vec(shared_out, &mut rng)).collect();

        let loss = |p: &EncoderParams<f64>| -> Result<f64> {
            let (out, _) = encode_eager(p, &frames, &z)?;
            Ok(out.iter().zip(&w).map(|(o, wt)| dot(wt, o)).sum())
        };

        let mut grads = p.zeros_like();
        let (_, tape) = encode_eager(&p, &frames, &z)?;
        encode_backward(&p, &tape, &w, &mut grads)?;

        fd_sweep!(p, grads, eps, loss, max_rel, count);
    }
    Ok((max_rel, count))
}

/// Both joint variants, checked over a small grid of (enc, dec) pairs.
fn check_joint(trials: usize, eps: f64) -> Result<(f64, usize)> {
    let mut max_rel = 0.0;
    let mut count = 0;
    for trial in 0..trials {
        let mut rng = SeededRng::with_stream(0x101f, trial as u64);
        let vocab = 2 + rng.below(3);
        let enc_dim = 1 + rng.below(3);
        let dec_dim = 1 + rng.below(3);
        let variants = [
            JointNet::<f64>::init_additive(vocab, enc_dim, dec_dim, &mut rng),
            JointNet::<f64>::init_feedforward(
                vocab,
                enc_dim,
                dec_dim,
                1 + rng.below(3),
                JointActivation::Tanh,
                &mut rng,
            ),
        ];
        for mut joint in variants {
            let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..3)
                .map(|_| (random_vec(enc_dim, &mut rng), random_vec(dec_dim, &mut rng)))
                .collect();
            let w: Vec<Vec<f64>> = (0..3).map(|_| random_vec(vocab, &mut rng)).collect();

            let loss = |j: &JointNet<f64>| -> Result<f64> {
                let mut l = 0.0;
                for ((he, hd), wt) in pairs.iter().zip(&w) {
                    l += dot(wt, &j.logits(he, hd)?);
                }
                Ok(l)
            };

            let mut grads = joint.zeros_like();
            for ((he, hd), wt) in pairs.iter().zip(&w) {
                joint.backward(he, hd, wt, &mut grads)?;
            }

            fd_sweep!(joint, grads, eps, loss, max_rel, count);
        }
    }
    Ok((max_rel, count))
}

/// Lattice loss gradient w.r.t. every node logit.
fn check_loss_logits(trials: usize, eps: f64) -> Result<(f64, usize)> {
    let mut max_rel = 0.0;
    let mut count = 0;
    for trial in 0..trials {
        let mut rng = SeededRng::with_stream(0x10559, trial as u64);
        let t_len = 1 + rng.below(4);
        let u_labels = rng.below(3);
        let vocab = 2 + rng.below(3);
        let labels: Vec<usize> = (0..u_labels).map(|_| 1 + rng.below(vocab - 1)).collect();
        let mut logits = NodeLogits::<f64>::zeros(t_len, u_labels + 1, vocab);
        for v in logits.data_mut() {
            *v = rng.uniform_in(-2.0, 2.0);
        }

        let (_, dlogits, _) = transducer_nll_and_grads(&logits, &labels)?;
        for idx in 0..logits.data().len() {
            let orig = logits.data()[idx];
            logits.data_mut()[idx] = orig + eps;
            let (lp, _) = transducer_nll(&logits, &labels)?;
            logits.data_mut()[idx] = orig - eps;
            let (lm, _) = transducer_nll(&logits, &labels)?;
            logits.data_mut()[idx] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            max_rel = f64::max(max_rel, rel_error(dlogits.data()[idx], fd));
            count += 1;
        }
    }
    Ok((max_rel, count))
}

pub fn run(trials: usize, epsilon: f64, tolerance: f64) -> Result<GradCheckReport> {
    let checks: [(&str, fn(usize, f64) -> Result<(f64, usize)>); 5] = [
        ("lstm_cell", check_lstm),
        ("bifocal_cell", check_bifocal_cell),
        ("stacked_encoder", check_encoder),
        ("joint_variants", check_joint),
        ("loss_logits", check_loss_logits),
    ];
    let mut components = Vec::with_capacity(checks.len());
    for (name, f) in checks {
        let (max_rel_error, params_checked) = f(trials, epsilon)?;
        components.push(ComponentReport {
            name: name.to_string(),
            trials,
            params_checked,
            max_rel_error,
            passed: max_rel_error < tolerance,
        });
    }
    let passed = components.iter().all(|c| c.passed);
    Ok(GradCheckReport { epsilon, tolerance, trials, components, passed })
}

pub fn run_default() -> Result<GradCheckReport> {
    run(DEFAULT_TRIALS, DEFAULT_EPSILON, DEFAULT_TOLERANCE)
}
