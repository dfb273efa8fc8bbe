//! Autoregressive prediction network: a token embedding feeding a stack of
//! recurrent layers. State u is the top hidden vector after consuming the
//! first u labels; state 0 is the all-zero start vector (no start-of-sequence
//! token is consumed).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lstm::{lstm_backward, lstm_step, LstmParams, LstmState, LstmTape};
use crate::numerics::{Matrix, Scalar, SeededRng};
use crate::transducer::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionNet<F> {
    pub vocab: Vocab,
    pub embed_dim: usize,
    /// embed_dim x vocab_size; one column per token. Column 0 (blank) exists
    /// but is never consumed, so its gradient stays zero.
    pub embedding: Matrix<F>,
    pub layers: Vec<LstmParams<F>>,
}

#[derive(Debug, Clone)]
pub struct PredState<F> {
    pub layers: Vec<LstmState<F>>,
}

impl<F: Scalar> PredState<F> {
    pub fn top_h(&self) -> &[F] {
        &self.layers.last().expect("at least one layer").h
    }
}

#[derive(Debug, Clone)]
pub struct PredStepTape<F> {
    pub token: usize,
    pub layers: Vec<LstmTape<F>>,
}

impl<F: Scalar> PredictionNet<F> {
    pub fn init(
        vocab: Vocab,
        embed_dim: usize,
        hidden_dims: &[usize],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if hidden_dims.is_empty() {
            return Err(Error::config("prediction.hidden_dims", "need at least one layer"));
        }
        let mut layers = Vec::with_capacity(hidden_dims.len());
        let mut input = embed_dim;
        for &h in hidden_dims {
            layers.push(LstmParams::init(input, h, rng));
            input = h;
        }
        Ok(PredictionNet {
            vocab,
            embed_dim,
            embedding: Matrix::glorot(embed_dim, vocab.vocab_size, rng),
            layers,
        })
    }

    pub fn hidden_dim(&self) -> usize {
        self.layers.last().expect("at least one layer").hidden_dim
    }

    pub fn start_state(&self) -> PredState<F> {
        PredState {
            layers: self.layers.iter().map(|l| LstmState::zeros(l.hidden_dim)).collect(),
        }
    }

    fn embed(&self, token: usize) -> Vec<F> {
        (0..self.embed_dim).map(|r| self.embedding.get(r, token)).collect()
    }

    /// Consume one label token.
    pub fn step(&self, state: &PredState<F>, token: usize) -> Result<(PredState<F>, PredStepTape<F>)> {
        self.vocab.validate_labels(&[token])?;
        let mut x = self.embed(token);
        let mut next_layers = Vec::with_capacity(self.layers.len());
        let mut tapes = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate() {
            let (next, tape) = lstm_step(layer, &x, &state.layers[l])?;
            x = next.h.clone();
            next_layers.push(next);
            tapes.push(tape);
        }
        Ok((PredState { layers: next_layers }, PredStepTape { token, layers: tapes }))
    }

    /// Run the whole label sequence. Returns the U+1 joint-side states
    /// (index u = after u labels; index 0 is the zero start vector) plus the
    /// per-step tapes for [`PredictionNet::backward`].
    pub fn run(&self, labels: &[usize]) -> Result<(Vec<Vec<F>>, Vec<PredStepTape<F>>)> {
        let mut state = self.start_state();
        let mut states = Vec::with_capacity(labels.len() + 1);
        states.push(state.top_h().to_vec());
        let mut tapes = Vec::with_capacity(labels.len());
        for &y in labels {
            let (next, tape) = self.step(&state, y)?;
            states.push(next.top_h().to_vec());
            tapes.push(tape);
            state = next;
        }
        Ok((states, tapes))
    }

    /// BPTT over a taped run. `d_states[u]` is the loss gradient w.r.t. the
    /// joint-side state u; entry 0 belongs to the constant start vector and
    /// is ignored.
    pub fn backward(
        &self,
        tapes: &[PredStepTape<F>],
        d_states: &[Vec<F>],
        grads: &mut PredictionNet<F>,
    ) -> Result<()> {
        if d_states.len() != tapes.len() + 1 {
            return Err(Error::dim(
                "prediction backward: d_states",
                tapes.len() + 1,
                d_states.len(),
            ));
        }
        let n = self.layers.len();
        let mut dc: Vec<Vec<F>> = self.layers.iter().map(|l| vec![F::zero(); l.hidden_dim]).collect();
        let mut dh: Vec<Vec<F>> = self.layers.iter().map(|l| vec![F::zero(); l.hidden_dim]).collect();
        for (u, tape) in tapes.iter().enumerate().rev() {
            for (a, v) in dh[n - 1].iter_mut().zip(&d_states[u + 1]) {
                *a = *a + *v;
            }
            let mut dx_below: Option<Vec<F>> = None;
            for l in (0..n).rev() {
                if let Some(dx) = dx_below.take() {
                    for (a, v) in dh[l].iter_mut().zip(&dx) {
                        *a = *a + *v;
                    }
                }
                let step = lstm_backward(&self.layers[l], &tape.layers[l], &dc[l], &dh[l], &mut grads.layers[l])?;
                dc[l] = step.dc_prev;
                dh[l] = step.dh_prev;
                if l > 0 {
                    dx_below = Some(step.dx);
                } else {
                    for (r, v) in step.dx.iter().enumerate() {
                        let cur = grads.embedding.get(r, tape.token);
                        grads.embedding.set(r, tape.token, cur + *v);
                    }
                }
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        PredictionNet {
            vocab: self.vocab,
            embed_dim: self.embed_dim,
            embedding: Matrix::zeros(self.embedding.rows(), self.embedding.cols()),
            layers: self.layers.iter().map(LstmParams::zeros_like).collect(),
        }
    }

    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = vec![self.embedding.data()];
        for l in &self.layers {
            out.extend(l.flat());
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = vec![self.embedding.data_mut()];
        for l in &mut self.layers {
            out.extend(l.flat_mut());
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> PredictionNet<G> {
        PredictionNet {
            vocab: self.vocab,
            embed_dim: self.embed_dim,
            embedding: self.embedding.cast(),
            layers: self.layers.iter().map(LstmParams::cast).collect(),
        }
    }
}
