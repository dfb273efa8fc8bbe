//! Joint network: combines one encoder frame with one prediction state and
//! produces a logit per output token. Two shapes are supported:
//!
//! - additive: each side gets its own affine map onto the vocabulary and the
//!   logits are the elementwise sum;
//! - feedforward: both sides are mapped into a shared hidden space, passed
//!   through a pointwise nonlinearity, then projected onto the vocabulary.
//!
//! The backward pass recomputes the cheap intermediates instead of taping
//! them, so callers only ever hold the two input vectors.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLayer<F> {
    pub w: Matrix<F>,
    pub b: Vec<F>,
}

impl<F: Scalar> LinearLayer<F> {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut SeededRng) -> Self {
        LinearLayer {
            w: Matrix::glorot(out_dim, in_dim, rng),
            b: vec![F::zero(); out_dim],
        }
    }

    pub fn zeros_like(&self) -> Self {
        LinearLayer {
            w: Matrix::zeros(self.w.rows(), self.w.cols()),
            b: vec![F::zero(); self.b.len()],
        }
    }

    pub fn apply(&self, x: &[F]) -> Result<Vec<F>> {
        let mut y = self.w.matvec(x)?;
        for (a, b) in y.iter_mut().zip(&self.b) {
            *a = *a + *b;
        }
        Ok(y)
    }

    /// Accumulates parameter grads and returns dx.
    pub fn backward(&self, x: &[F], dy: &[F], grads: &mut LinearLayer<F>) -> Result<Vec<F>> {
        grads.w.add_outer(dy, x)?;
        for (a, v) in grads.b.iter_mut().zip(dy) {
            *a = *a + *v;
        }
        self.w.matvec_t(dy)
    }

    pub fn cast<G: Scalar>(&self) -> LinearLayer<G> {
        LinearLayer {
            w: self.w.cast(),
            b: self.b.iter().map(|v| G::from_real(v.into_real())).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JointActivation {
    #[default]
    Tanh,
    Relu,
}

impl JointActivation {
    fn apply<F: Scalar>(self, a: F) -> F {
        match self {
            JointActivation::Tanh => a.tanh(),
            JointActivation::Relu => {
                if a > F::zero() {
                    a
                } else {
                    F::zero()
                }
            }
        }
    }

    fn derivative<F: Scalar>(self, a: F) -> F {
        match self {
            JointActivation::Tanh => {
                let t = a.tanh();
                F::one() - t * t
            }
            JointActivation::Relu => {
                if a > F::zero() {
                    F::one()
                } else {
                    F::zero()
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JointNet<F> {
    Additive {
        enc: LinearLayer<F>,
        dec: LinearLayer<F>,
    },
    Feedforward {
        enc_w: Matrix<F>,
        dec_w: Matrix<F>,
        bias: Vec<F>,
        activation: JointActivation,
        out: LinearLayer<F>,
    },
}

impl<F: Scalar> JointNet<F> {
    pub fn init_additive(vocab_size: usize, enc_dim: usize, dec_dim: usize, rng: &mut SeededRng) -> Self {
        JointNet::Additive {
            enc: LinearLayer::init(vocab_size, enc_dim, rng),
            dec: LinearLayer::init(vocab_size, dec_dim, rng),
        }
    }

    pub fn init_feedforward(
        vocab_size: usize,
        enc_dim: usize,
        dec_dim: usize,
        joint_dim: usize,
        activation: JointActivation,
        rng: &mut SeededRng,
    ) -> Self {
        JointNet::Feedforward {
            enc_w: Matrix::glorot(joint_dim, enc_dim, rng),
            dec_w: Matrix::glorot(joint_dim, dec_dim, rng),
            bias: vec![F::zero(); joint_dim],
            activation,
            out: LinearLayer::init(vocab_size, joint_dim, rng),
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            JointNet::Additive { enc, .. } => enc.w.rows(),
            JointNet::Feedforward { out, .. } => out.w.rows(),
        }
    }

    pub fn enc_dim(&self) -> usize {
        match self {
            JointNet::Additive { enc, .. } => enc.w.cols(),
            JointNet::Feedforward { enc_w, .. } => enc_w.cols(),
        }
    }

    pub fn dec_dim(&self) -> usize {
        match self {
            JointNet::Additive { dec, .. } => dec.w.cols(),
            JointNet::Feedforward { dec_w, .. } => dec_w.cols(),
        }
    }

    pub fn logits(&self, h_enc: &[F], h_dec: &[F]) -> Result<Vec<F>> {
        match self {
            JointNet::Additive { enc, dec } => {
                let mut y = enc.apply(h_enc)?;
                let d = dec.apply(h_dec)?;
                for (a, v) in y.iter_mut().zip(&d) {
                    *a = *a + *v;
                }
                Ok(y)
            }
            JointNet::Feedforward { enc_w, dec_w, bias, activation, out } => {
                let mut a = enc_w.matvec(h_enc)?;
                let d = dec_w.matvec(h_dec)?;
                if a.len() != d.len() {
                    return Err(Error::dim("joint: hidden sizes", a.len(), d.len()));
                }
                for ((av, dv), bv) in a.iter_mut().zip(&d).zip(bias) {
                    *av = *av + *dv + *bv;
                }
                let v: Vec<F> = a.iter().map(|&x| activation.apply(x)).collect();
                out.apply(&v)
            }
        }
    }

    /// Accumulates parameter grads; returns (d_h_enc, d_h_dec).
    pub fn backward(
        &self,
        h_enc: &[F],
        h_dec: &[F],
        d_logits: &[F],
        grads: &mut JointNet<F>,
    ) -> Result<(Vec<F>, Vec<F>)> {
        match (self, grads) {
            (JointNet::Additive { enc, dec }, JointNet::Additive { enc: genc, dec: gdec }) => {
                let de = enc.backward(h_enc, d_logits, genc)?;
                let dd = dec.backward(h_dec, d_logits, gdec)?;
                Ok((de, dd))
            }
            (
                JointNet::Feedforward { enc_w, dec_w, bias, activation, out },
                JointNet::Feedforward {
                    enc_w: genc_w,
                    dec_w: gdec_w,
                    bias: gbias,
                    out: gout,
                    ..
                },
            ) => {
                let mut a = enc_w.matvec(h_enc)?;
                let d = dec_w.matvec(h_dec)?;
                for ((av, dv), bv) in a.iter_mut().zip(&d).zip(bias.iter()) {
                    *av = *av + *dv + *bv;
                }
                let v: Vec<F> = a.iter().map(|&x| activation.apply(x)).collect();
                let dv = out.backward(&v, d_logits, gout)?;
                let da: Vec<F> = dv
                    .iter()
                    .zip(&a)
                    .map(|(&g, &x)| g * activation.derivative(x))
                    .collect();
                genc_w.add_outer(&da, h_enc)?;
                gdec_w.add_outer(&da, h_dec)?;
                for (gb, g) in gbias.iter_mut().zip(&da) {
                    *gb = *gb + *g;
                }
                Ok((enc_w.matvec_t(&da)?, dec_w.matvec_t(&da)?))
            }
            _ => Err(Error::dim("joint backward: grads variant", 0, 1)),
        }
    }

    pub fn zeros_like(&self) -> Self {
        match self {
            JointNet::Additive { enc, dec } => JointNet::Additive {
                enc: enc.zeros_like(),
                dec: dec.zeros_like(),
            },
            JointNet::Feedforward { enc_w, dec_w, bias, activation, out } => JointNet::Feedforward {
                enc_w: Matrix::zeros(enc_w.rows(), enc_w.cols()),
                dec_w: Matrix::zeros(dec_w.rows(), dec_w.cols()),
                bias: vec![F::zero(); bias.len()],
                activation: *activation,
                out: out.zeros_like(),
            },
        }
    }

    pub fn flat(&self) -> Vec<&[F]> {
        match self {
            JointNet::Additive { enc, dec } => {
                vec![enc.w.data(), &enc.b, dec.w.data(), &dec.b]
            }
            JointNet::Feedforward { enc_w, dec_w, bias, out, .. } => {
                vec![enc_w.data(), dec_w.data(), bias, out.w.data(), &out.b]
            }
        }
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        match self {
            JointNet::Additive { enc, dec } => {
                vec![enc.w.data_mut(), &mut enc.b, dec.w.data_mut(), &mut dec.b]
            }
            JointNet::Feedforward { enc_w, dec_w, bias, out, .. } => vec![
                enc_w.data_mut(),
                dec_w.data_mut(),
                bias,
                out.w.data_mut(),
                &mut out.b,
            ],
        }
    }

    pub fn cast<G: Scalar>(&self) -> JointNet<G> {
        match self {
            JointNet::Additive { enc, dec } => JointNet::Additive {
                enc: enc.cast(),
                dec: dec.cast(),
            },
            JointNet::Feedforward { enc_w, dec_w, bias, activation, out } => JointNet::Feedforward {
                enc_w: enc_w.cast(),
                dec_w: dec_w.cast(),
                bias: bias.iter().map(|v| G::from_real(v.into_real())).collect(),
                activation: *activation,
                out: out.cast(),
            },
        }
    }
}
