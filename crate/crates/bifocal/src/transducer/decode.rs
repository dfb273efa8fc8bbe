//! Greedy and beam decoding over precomputed encoder frames.
//!
//! The beam search is frame-synchronous: within a frame, every live
//! hypothesis either takes blank (parking it for the next frame) or extends
//! by one label and re-enters the expansion loop. Hypotheses with identical
//! label histories are merged by log-sum-exp, the parked and extended sets
//! are pruned jointly to the beam width, and a per-frame emission cap bounds
//! the loop. With a beam of one and the tie-breaking used here (blank first,
//! then smaller labels) the search reproduces greedy decoding exactly.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::numerics::{logaddexp, Scalar};
use crate::transducer::joint::JointNet;
use crate::transducer::prediction::{PredState, PredictionNet};
use crate::transducer::Vocab;

#[derive(Debug, Clone, Copy)]
pub struct DecodeLimits {
    pub max_symbols_per_frame: usize,
}

impl Default for DecodeLimits {
    fn default() -> Self {
        DecodeLimits { max_symbols_per_frame: 5 }
    }
}

/// One n-best entry. `log_prob` is the merged log-probability of every
/// surviving alignment with this label history.
#[derive(Debug, Clone, PartialEq)]
pub struct BeamHyp {
    pub labels: Vec<usize>,
    pub log_prob: f64,
}

fn log_softmax_f64<F: Scalar>(logits: &[F]) -> Vec<f64> {
    let xs: Vec<f64> = logits.iter().map(|v| v.into_real()).collect();
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + xs.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    xs.iter().map(|v| v - lse).collect()
}

/// Emit the argmax token per step, advancing on blank; at most
/// `max_symbols_per_frame` labels per frame.
pub fn greedy_decode<F: Scalar>(
    pred: &PredictionNet<F>,
    joint: &JointNet<F>,
    enc: &[Vec<F>],
    limits: DecodeLimits,
) -> Result<Vec<usize>> {
    if limits.max_symbols_per_frame == 0 {
        return Err(Error::config("max_symbols_per_frame", "must be positive"));
    }
    let mut state = pred.start_state();
    let mut labels = Vec::new();
    for frame in enc {
        let mut emitted = 0;
        while emitted < limits.max_symbols_per_frame {
            let logits = joint.logits(frame, state.top_h())?;
            let mut best = 0usize;
            for (k, v) in logits.iter().enumerate() {
                if *v > logits[best] {
                    best = k;
                }
            }
            if best == Vocab::BLANK {
                break;
            }
            let (next, _) = pred.step(&state, best)?;
            state = next;
            labels.push(best);
            emitted += 1;
        }
    }
    Ok(labels)
}

/// Hypothesis set with log-sum-exp merging and deterministic insertion
/// order (used for tie-breaking during pruning).
struct HypSet {
    order: Vec<Vec<usize>>,
    score: HashMap<Vec<usize>, f64>,
}

impl HypSet {
    fn new() -> Self {
        HypSet { order: Vec::new(), score: HashMap::new() }
    }

    fn merge(&mut self, labels: Vec<usize>, score: f64) {
        match self.score.get_mut(&labels) {
            Some(s) => *s = logaddexp(*s, score),
            None => {
                self.score.insert(labels.clone(), score);
                self.order.push(labels);
            }
        }
    }

    fn items(&self) -> Vec<(Vec<usize>, f64)> {
        self.order
            .iter()
            .map(|l| (l.clone(), self.score[l]))
            .collect()
    }
}

/// Frame-synchronous beam search; returns up to `beam_size` hypotheses,
/// best first.
pub fn beam_decode<F: Scalar>(
    pred: &PredictionNet<F>,
    joint: &JointNet<F>,
    enc: &[Vec<F>],
    beam_size: usize,
    limits: DecodeLimits,
) -> Result<Vec<BeamHyp>> {
    if beam_size == 0 {
        return Err(Error::config("beam_size", "must be positive"));
    }
    if limits.max_symbols_per_frame == 0 {
        return Err(Error::config("max_symbols_per_frame", "must be positive"));
    }
    let vocab = joint.vocab_size();
    let mut cache: HashMap<Vec<usize>, PredState<F>> = HashMap::new();
    cache.insert(Vec::new(), pred.start_state());

    let mut current: Vec<(Vec<usize>, f64)> = vec![(Vec::new(), 0.0)];
    for frame in enc {
        let mut parked = HypSet::new();
        let mut active = current.clone();
        let mut rounds = 0;
        while !active.is_empty() {
            let force_blank = rounds >= limits.max_symbols_per_frame;
            let mut extended = HypSet::new();
            for (labels, score) in &active {
                let state = cache.get(labels).expect("hypothesis state cached");
                let lp = log_softmax_f64(&joint.logits(frame, state.top_h())?);
                parked.merge(labels.clone(), score + lp[Vocab::BLANK]);
                if !force_blank {
                    for k in 1..vocab {
                        let mut ext = labels.clone();
                        ext.push(k);
                        extended.merge(ext, score + lp[k]);
                    }
                }
            }
            if force_blank {
                break;
            }
            // Joint prune across parked and extended; parked entries come
            // first so blank wins score ties, as in greedy.
            let mut pool: Vec<(Vec<usize>, f64, bool)> = Vec::new();
            for (l, s) in parked.items() {
                pool.push((l, s, false));
            }
            for (l, s) in extended.items() {
                pool.push((l, s, true));
            }
            pool.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite decode scores"));
            pool.truncate(beam_size);

            let mut next_parked = HypSet::new();
            let mut next_active = Vec::new();
            for (labels, score, is_ext) in pool {
                if is_ext {
                    if !cache.contains_key(&labels) {
                        let parent = &labels[..labels.len() - 1];
                        let parent_state = cache.get(parent).expect("parent state cached").clone();
                        let (state, _) = pred.step(&parent_state, *labels.last().unwrap())?;
                        cache.insert(labels.clone(), state);
                    }
                    next_active.push((labels, score));
                } else {
                    next_parked.merge(labels, score);
                }
            }
            parked = next_parked;
            active = next_active;
            rounds += 1;
        }
        let mut done = parked.items();
        done.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite decode scores"));
        done.truncate(beam_size);
        current = done;
    }

    Ok(current
        .into_iter()
        .map(|(labels, log_prob)| BeamHyp { labels, log_prob })
        .collect())
}
