//! Sequence transducer: prediction network, joint network, lattice loss,
//! and decoding, tied together by [`model::TransducerModel`].
//!
//! Conventions used throughout:
//! - token 0 is blank and never appears in a label sequence;
//! - lattice nodes are (t, u) with t over frames and u over emitted labels;
//! - decoding scores are kept in f64 regardless of the model scalar type.

pub mod decode;
pub mod joint;
pub mod loss;
pub mod model;
pub mod prediction;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use decode::{beam_decode, greedy_decode, BeamHyp, DecodeLimits};
pub use joint::{JointActivation, JointNet, LinearLayer};
pub use loss::{transducer_nll, transducer_nll_and_grads, LatticeDiag, NodeLogits};
pub use model::{JointSpec, ModelSpec, TransducerModel};
pub use prediction::{PredState, PredStepTape, PredictionNet};

/// Output alphabet. Slot 0 is the blank symbol; real labels are 1..vocab_size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub vocab_size: usize,
}

impl Vocab {
    pub const BLANK: usize = 0;

    pub fn new(vocab_size: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::config(
                "vocab_size",
                "needs blank plus at least one real label",
            ));
        }
        Ok(Vocab { vocab_size })
    }

    /// Number of non-blank labels.
    pub fn num_labels(&self) -> usize {
        self.vocab_size - 1
    }

    pub fn validate_labels(&self, labels: &[usize]) -> Result<()> {
        for &y in labels {
            if y == Self::BLANK || y >= self.vocab_size {
                return Err(Error::BadLabel {
                    label: y,
                    vocab: self.vocab_size,
                    blank: Self::BLANK,
                });
            }
        }
        Ok(())
    }
}
