//! End-to-end transducer model: switching encoder, prediction network, and
//! joint, with a single entry point for loss plus parameter gradients.

use serde::{Deserialize, Serialize};

use crate::cell::SwitchSignal;
use crate::encoder::{encode_backward, encode_eager, encode_lazy, EncoderParams};
use crate::error::{Error, Result};
use crate::numerics::{Scalar, SeededRng};
use crate::transducer::decode::{beam_decode, greedy_decode, BeamHyp, DecodeLimits};
use crate::transducer::joint::{JointActivation, JointNet};
use crate::transducer::loss::{transducer_nll, transducer_nll_and_grads, LatticeDiag, NodeLogits};
use crate::transducer::prediction::PredictionNet;
use crate::transducer::Vocab;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JointSpec {
    Additive,
    Feedforward {
        joint_dim: usize,
        #[serde(default)]
        activation: JointActivation,
    },
}

/// Architecture description; weights are drawn separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Includes the blank symbol.
    pub vocab_size: usize,
    pub feature_dim: usize,
    pub encoder_layers: usize,
    pub branch_dims: Vec<usize>,
    pub shared_output_dim: usize,
    /// Replace cross-branch state transfer with zero re-initialization
    /// (the "no projections" ablation).
    #[serde(default)]
    pub zero_init_on_switch: bool,
    pub embed_dim: usize,
    pub decoder_hidden_dims: Vec<usize>,
    pub joint: JointSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransducerModel<F> {
    pub vocab: Vocab,
    pub encoder: EncoderParams<F>,
    pub prediction: PredictionNet<F>,
    pub joint: JointNet<F>,
}

impl<F: Scalar> TransducerModel<F> {
    /// `directions` lists the (from, to) switches the schedule can take;
    /// projection matrices are allocated exactly for those (none when the
    /// spec asks for zero re-initialization).
    pub fn init(
        spec: &ModelSpec,
        directions: &[(usize, usize)],
        rng: &mut SeededRng,
    ) -> Result<Self> {
        let vocab = Vocab::new(spec.vocab_size)?;
        let proj_dirs: &[(usize, usize)] = if spec.zero_init_on_switch { &[] } else { directions };
        let encoder = EncoderParams::init(
            spec.feature_dim,
            spec.encoder_layers,
            &spec.branch_dims,
            spec.shared_output_dim,
            proj_dirs,
            spec.zero_init_on_switch,
            rng,
        )?;
        let prediction = PredictionNet::init(vocab, spec.embed_dim, &spec.decoder_hidden_dims, rng)?;
        let joint = match spec.joint {
            JointSpec::Additive => JointNet::init_additive(
                spec.vocab_size,
                spec.shared_output_dim,
                prediction.hidden_dim(),
                rng,
            ),
            JointSpec::Feedforward { joint_dim, activation } => JointNet::init_feedforward(
                spec.vocab_size,
                spec.shared_output_dim,
                prediction.hidden_dim(),
                joint_dim,
                activation,
                rng,
            ),
        };
        let model = TransducerModel { vocab, encoder, prediction, joint };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if self.joint.enc_dim() != self.encoder.shared_output_dim {
            return Err(Error::dim(
                "model: joint encoder side",
                self.encoder.shared_output_dim,
                self.joint.enc_dim(),
            ));
        }
        if self.joint.dec_dim() != self.prediction.hidden_dim() {
            return Err(Error::dim(
                "model: joint decoder side",
                self.prediction.hidden_dim(),
                self.joint.dec_dim(),
            ));
        }
        if self.joint.vocab_size() != self.vocab.vocab_size {
            return Err(Error::dim(
                "model: joint vocabulary",
                self.vocab.vocab_size,
                self.joint.vocab_size(),
            ));
        }
        Ok(())
    }

    fn logit_grid(&self, enc_out: &[Vec<F>], dec_states: &[Vec<F>]) -> Result<NodeLogits<F>> {
        let mut logits = NodeLogits::zeros(enc_out.len(), dec_states.len(), self.vocab.vocab_size);
        for (t, he) in enc_out.iter().enumerate() {
            for (u, hd) in dec_states.iter().enumerate() {
                let l = self.joint.logits(he, hd)?;
                logits.node_mut(t, u).copy_from_slice(&l);
            }
        }
        Ok(logits)
    }

    /// Forward-only loss.
    pub fn loss(&self, frames: &[Vec<F>], z: &SwitchSignal, labels: &[usize]) -> Result<(F, LatticeDiag)> {
        let (enc_out, _) = encode_eager(&self.encoder, frames, z)?;
        let (dec_states, _) = self.prediction.run(labels)?;
        let logits = self.logit_grid(&enc_out, &dec_states)?;
        transducer_nll(&logits, labels)
    }

    /// Loss plus gradients, accumulated into `grads` (same shape as the
    /// model, typically from [`TransducerModel::zeros_like`]).
    pub fn loss_and_grads(
        &self,
        frames: &[Vec<F>],
        z: &SwitchSignal,
        labels: &[usize],
        grads: &mut TransducerModel<F>,
    ) -> Result<(F, LatticeDiag)> {
        let (enc_out, enc_tape) = encode_eager(&self.encoder, frames, z)?;
        let (dec_states, pred_tapes) = self.prediction.run(labels)?;
        let logits = self.logit_grid(&enc_out, &dec_states)?;
        let (nll, dlogits, diag) = transducer_nll_and_grads(&logits, labels)?;

        let mut d_enc: Vec<Vec<F>> = enc_out.iter().map(|v| vec![F::zero(); v.len()]).collect();
        let mut d_dec: Vec<Vec<F>> = dec_states.iter().map(|v| vec![F::zero(); v.len()]).collect();
        for (t, he) in enc_out.iter().enumerate() {
            for (u, hd) in dec_states.iter().enumerate() {
                let (de, dd) = self.joint.backward(he, hd, dlogits.node(t, u), &mut grads.joint)?;
                for (a, v) in d_enc[t].iter_mut().zip(&de) {
                    *a = *a + *v;
                }
                for (a, v) in d_dec[u].iter_mut().zip(&dd) {
                    *a = *a + *v;
                }
            }
        }
        self.prediction.backward(&pred_tapes, &d_dec, &mut grads.prediction)?;
        encode_backward(&self.encoder, &enc_tape, &d_enc, &mut grads.encoder)?;
        Ok((nll, diag))
    }

    /// Greedy decode using the inference (lazy) encoder path.
    pub fn greedy(&self, frames: &[Vec<F>], z: &SwitchSignal, limits: DecodeLimits) -> Result<Vec<usize>> {
        let (enc_out, _) = encode_lazy(&self.encoder, frames, z)?;
        greedy_decode(&self.prediction, &self.joint, &enc_out, limits)
    }

    /// Beam decode using the inference (lazy) encoder path.
    pub fn beam(
        &self,
        frames: &[Vec<F>],
        z: &SwitchSignal,
        beam_size: usize,
        limits: DecodeLimits,
    ) -> Result<Vec<BeamHyp>> {
        let (enc_out, _) = encode_lazy(&self.encoder, frames, z)?;
        beam_decode(&self.prediction, &self.joint, &enc_out, beam_size, limits)
    }

    pub fn zeros_like(&self) -> Self {
        TransducerModel {
            vocab: self.vocab,
            encoder: self.encoder.zeros_like(),
            prediction: self.prediction.zeros_like(),
            joint: self.joint.zeros_like(),
        }
    }

    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = self.encoder.flat();
        out.extend(self.prediction.flat());
        out.extend(self.joint.flat());
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = self.encoder.flat_mut();
        out.extend(self.prediction.flat_mut());
        out.extend(self.joint.flat_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.flat().iter().map(|s| s.len()).sum()
    }

    pub fn cast<G: Scalar>(&self) -> TransducerModel<G> {
        TransducerModel {
            vocab: self.vocab,
            encoder: self.encoder.cast(),
            prediction: self.prediction.cast(),
            joint: self.joint.cast(),
        }
    }
}
