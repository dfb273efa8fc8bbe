//! Transducer negative log-likelihood over the frame/label lattice, with
//! exact gradients via the forward/backward recursions.
//!
//! Node (t, u) means "t frames consumed, u labels emitted". From a node the
//! path either emits blank (advance t) or the next reference label (advance
//! u); the path ends with the blank at (T-1, U). Lattice arithmetic runs in
//! f64 regardless of the model scalar so the forward/backward agreement
//! invariant is meaningful for f32 models too.

use crate::error::{Error, Result};
use crate::numerics::{logaddexp, Scalar};
use crate::transducer::Vocab;

/// Dense (t, u, k) grid of joint outputs; also used for their gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLogits<F> {
    t_len: usize,
    u_len: usize,
    vocab_size: usize,
    data: Vec<F>,
}

impl<F: Scalar> NodeLogits<F> {
    pub fn zeros(t_len: usize, u_len: usize, vocab_size: usize) -> Self {
        NodeLogits {
            t_len,
            u_len,
            vocab_size,
            data: vec![F::zero(); t_len * u_len * vocab_size],
        }
    }

    pub fn t_len(&self) -> usize {
        self.t_len
    }

    pub fn u_len(&self) -> usize {
        self.u_len
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn node(&self, t: usize, u: usize) -> &[F] {
        let base = (t * self.u_len + u) * self.vocab_size;
        &self.data[base..base + self.vocab_size]
    }

    pub fn node_mut(&mut self, t: usize, u: usize) -> &mut [F] {
        let base = (t * self.u_len + u) * self.vocab_size;
        &mut self.data[base..base + self.vocab_size]
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }
}

/// Forward and backward total log-likelihoods; these must agree to fine
/// tolerance on every call, which makes a good built-in self check.
#[derive(Debug, Clone, Copy)]
pub struct LatticeDiag {
    pub log_like_forward: f64,
    pub log_like_backward: f64,
}

impl LatticeDiag {
    pub fn disagreement(&self) -> f64 {
        (self.log_like_forward - self.log_like_backward).abs()
    }
}

struct Lattice {
    t_len: usize,
    u_len: usize,
    vocab: usize,
    /// Normalized log-probabilities, f64.
    lp: Vec<f64>,
    alpha: Vec<f64>,
    beta: Vec<f64>,
}

impl Lattice {
    fn lp(&self, t: usize, u: usize, k: usize) -> f64 {
        self.lp[(t * self.u_len + u) * self.vocab + k]
    }

    fn a(&self, t: usize, u: usize) -> f64 {
        self.alpha[t * self.u_len + u]
    }

    fn b(&self, t: usize, u: usize) -> f64 {
        self.beta[t * self.u_len + u]
    }
}

fn build_lattice<F: Scalar>(logits: &NodeLogits<F>, labels: &[usize]) -> Result<Lattice> {
    let t_len = logits.t_len;
    let u_len = logits.u_len;
    let vocab = logits.vocab_size;
    if t_len == 0 {
        return Err(Error::Empty { context: "transducer loss: zero frames" });
    }
    if u_len != labels.len() + 1 {
        return Err(Error::dim("transducer loss: label grid", labels.len() + 1, u_len));
    }
    Vocab::new(vocab)?.validate_labels(labels)?;

    let mut lp = vec![0.0f64; t_len * u_len * vocab];
    for t in 0..t_len {
        for u in 0..u_len {
            let node = logits.node(t, u);
            let max = node
                .iter()
                .map(|v| v.into_real())
                .fold(f64::NEG_INFINITY, f64::max);
            if !max.is_finite() {
                return Err(Error::Empty { context: "transducer loss: non-finite logits" });
            }
            let mut z = 0.0f64;
            for v in node {
                z += (v.into_real() - max).exp();
            }
            let log_z = max + z.ln();
            let base = (t * u_len + u) * vocab;
            for k in 0..vocab {
                lp[base + k] = node[k].into_real() - log_z;
            }
        }
    }

    let mut lat = Lattice {
        t_len,
        u_len,
        vocab,
        lp,
        alpha: vec![f64::NEG_INFINITY; t_len * u_len],
        beta: vec![f64::NEG_INFINITY; t_len * u_len],
    };
    let blank = Vocab::BLANK;
    let last_u = u_len - 1;

    lat.alpha[0] = 0.0;
    for t in 1..t_len {
        lat.alpha[t * u_len] = lat.a(t - 1, 0) + lat.lp(t - 1, 0, blank);
    }
    for u in 1..u_len {
        lat.alpha[u] = lat.a(0, u - 1) + lat.lp(0, u - 1, labels[u - 1]);
    }
    for t in 1..t_len {
        for u in 1..u_len {
            let via_blank = lat.a(t - 1, u) + lat.lp(t - 1, u, blank);
            let via_label = lat.a(t, u - 1) + lat.lp(t, u - 1, labels[u - 1]);
            lat.alpha[t * u_len + u] = logaddexp(via_blank, via_label);
        }
    }

    lat.beta[(t_len - 1) * u_len + last_u] = lat.lp(t_len - 1, last_u, blank);
    for t in (0..t_len).rev() {
        for u in (0..u_len).rev() {
            if t == t_len - 1 && u == last_u {
                continue;
            }
            let mut acc = f64::NEG_INFINITY;
            if t + 1 < t_len {
                acc = logaddexp(acc, lat.lp(t, u, blank) + lat.b(t + 1, u));
            }
            if u < last_u {
                acc = logaddexp(acc, lat.lp(t, u, labels[u]) + lat.b(t, u + 1));
            }
            lat.beta[t * u_len + u] = acc;
        }
    }

    Ok(lat)
}

/// Negative log-likelihood only.
pub fn transducer_nll<F: Scalar>(logits: &NodeLogits<F>, labels: &[usize]) -> Result<(F, LatticeDiag)> {
    let lat = build_lattice(logits, labels)?;
    let last_u = lat.u_len - 1;
    let fwd = lat.a(lat.t_len - 1, last_u) + lat.lp(lat.t_len - 1, last_u, Vocab::BLANK);
    let diag = LatticeDiag {
        log_like_forward: fwd,
        log_like_backward: lat.b(0, 0),
    };
    Ok((F::from_real(-fwd), diag))
}

/// Negative log-likelihood and its gradient w.r.t. every logit.
pub fn transducer_nll_and_grads<F: Scalar>(
    logits: &NodeLogits<F>,
    labels: &[usize],
) -> Result<(F, NodeLogits<F>, LatticeDiag)> {
    let lat = build_lattice(logits, labels)?;
    let (t_len, u_len, vocab) = (lat.t_len, lat.u_len, lat.vocab);
    let last_u = u_len - 1;
    let blank = Vocab::BLANK;
    let log_like = lat.a(t_len - 1, last_u) + lat.lp(t_len - 1, last_u, blank);
    let diag = LatticeDiag {
        log_like_forward: log_like,
        log_like_backward: lat.b(0, 0),
    };

    let mut dlogits = NodeLogits::zeros(t_len, u_len, vocab);
    for t in 0..t_len {
        for u in 0..u_len {
            // Posterior mass of taking the blank / label arc out of (t, u).
            let g_blank = if t == t_len - 1 && u == last_u {
                (lat.a(t, u) + lat.lp(t, u, blank) - log_like).exp()
            } else if t + 1 < t_len {
                (lat.a(t, u) + lat.lp(t, u, blank) + lat.b(t + 1, u) - log_like).exp()
            } else {
                0.0
            };
            let g_label = if u < last_u {
                (lat.a(t, u) + lat.lp(t, u, labels[u]) + lat.b(t, u + 1) - log_like).exp()
            } else {
                0.0
            };
            let through = g_blank + g_label;
            let base = (t * u_len + u) * vocab;
            let out = dlogits.node_mut(t, u);
            for k in 0..vocab {
                let p = lat.lp[base + k].exp();
                let mut g = p * through;
                if k == blank {
                    g -= g_blank;
                }
                if u < last_u && k == labels[u] {
                    g -= g_label;
                }
                out[k] = F::from_real(g);
            }
        }
    }

    Ok((F::from_real(-log_like), dlogits, diag))
}
