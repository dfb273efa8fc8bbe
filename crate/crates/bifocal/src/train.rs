//! Adam training loop over the transducer loss, plus decoding-based
//! evaluation.
//!
//! Determinism contract: given the same seed, corpus, and config, training
//! produces bit-identical parameters. Per-item gradients inside a batch may
//! be computed in parallel, but they are always reduced in item order, so
//! the parallel and sequential paths give the same floats.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cell::SwitchSignal;
use crate::data::Utterance;
use crate::error::{Error, Result};
use crate::numerics::{Scalar, SeededRng};
use crate::schedule::ScheduleSpec;
use crate::transducer::{DecodeLimits, TransducerModel};

fn default_steps() -> usize {
    200
}
fn default_batch_size() -> usize {
    8
}
fn default_learning_rate() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_clip_norm() -> f64 {
    5.0
}
fn default_parallel() -> bool {
    true
}
fn default_beam_size() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Global gradient-norm ceiling; 0 disables clipping.
    #[serde(default = "default_clip_norm")]
    pub clip_norm: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_parallel")]
    pub parallel: bool,
    /// Beam width used by evaluation.
    #[serde(default = "default_beam_size")]
    pub beam_size: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            steps: default_steps(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            clip_norm: default_clip_norm(),
            seed: 0,
            parallel: default_parallel(),
            beam_size: default_beam_size(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("training.batch_size", "must be positive"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::config("training.learning_rate", "must be positive"));
        }
        for (path, b) in [("training.beta1", self.beta1), ("training.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(path, "must lie in [0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::config("training.epsilon", "must be positive"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("training.clip_norm", "must be non-negative"));
        }
        if self.beam_size == 0 {
            return Err(Error::config("training.beam_size", "must be at least 1"));
        }
        Ok(())
    }
}

/// One utterance prepared for the model: frames cast to the working scalar
/// and the branch schedule materialized against its wake-word index.
#[derive(Debug, Clone)]
pub struct TrainItem<F> {
    pub frames: Vec<Vec<F>>,
    pub z: SwitchSignal,
    pub labels: Vec<usize>,
}

pub fn prepare<F: Scalar>(corpus: &[Utterance], schedule: &ScheduleSpec) -> Result<Vec<TrainItem<F>>> {
    corpus
        .iter()
        .map(|u| {
            let z = schedule.with_ww(u.ww_frame_index).build_z(u.num_frames())?;
            Ok(TrainItem { frames: u.frames_cast(), z, labels: u.labels.clone() })
        })
        .collect()
}

/// Sum of squares across every parameter slice.
pub fn global_norm<F: Scalar>(m: &TransducerModel<F>) -> f64 {
    m.flat()
        .iter()
        .flat_map(|s| s.iter())
        .map(|v| v.into_real() * v.into_real())
        .sum::<f64>()
        .sqrt()
}

/// Scale gradients in place so their global norm is at most `max_norm`
/// (no-op when `max_norm` is 0). Returns the pre-clip norm.
pub fn clip_global_norm<F: Scalar>(grads: &mut TransducerModel<F>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if max_norm > 0.0 && norm > max_norm {
        let s = F::from_real(max_norm / norm);
        for slice in grads.flat_mut() {
            for v in slice.iter_mut() {
                *v = *v * s;
            }
        }
    }
    norm
}

/// Adam with bias correction; moments are kept in f64 so the update rule is
/// identical whichever scalar the model trains in.
pub struct Adam {
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new<F: Scalar>(model: &TransducerModel<F>) -> Self {
        let shapes: Vec<Vec<f64>> = model.flat().iter().map(|s| vec![0.0; s.len()]).collect();
        Adam { t: 0, m: shapes.clone(), v: shapes }
    }

    pub fn step<F: Scalar>(
        &mut self,
        model: &mut TransducerModel<F>,
        grads: &TransducerModel<F>,
        cfg: &TrainingConfig,
    ) -> Result<()> {
        let mut params = model.flat_mut();
        let gs = grads.flat();
        if params.len() != gs.len() {
            return Err(Error::dim("adam: parameter groups", params.len(), gs.len()));
        }
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let bc2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(&gs).enumerate() {
            if p.len() != g.len() {
                return Err(Error::dim("adam: parameter slice", p.len(), g.len()));
            }
            for (i, (pv, gv)) in p.iter_mut().zip(g.iter()).enumerate() {
                let g = gv.into_real();
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                let update = cfg.learning_rate * (*m / bc1) / ((*v / bc2).sqrt() + cfg.epsilon);
                *pv = F::from_real(pv.into_real() - update);
            }
        }
        Ok(())
    }
}

fn item_grads<F: Scalar>(
    model: &TransducerModel<F>,
    item: &TrainItem<F>,
) -> Result<(f64, TransducerModel<F>)> {
    let mut g = model.zeros_like();
    let (nll, _) = model.loss_and_grads(&item.frames, &item.z, &item.labels, &mut g)?;
    Ok((nll.into_real(), g))
}

/// Mean loss and mean gradients over the chosen items. Per-item results are
/// reduced in `indices` order regardless of `parallel`.
pub fn batch_grads<F: Scalar>(
    model: &TransducerModel<F>,
    items: &[TrainItem<F>],
    indices: &[usize],
    parallel: bool,
) -> Result<(f64, TransducerModel<F>)> {
    if indices.is_empty() {
        return Err(Error::Empty { context: "batch_grads: indices" });
    }
    let per_item: Vec<(f64, TransducerModel<F>)> = if parallel {
        indices.par_iter().map(|&i| item_grads(model, &items[i])).collect::<Result<_>>()?
    } else {
        indices.iter().map(|&i| item_grads(model, &items[i])).collect::<Result<_>>()?
    };

    let mut total = 0.0;
    let mut acc = model.zeros_like();
    for (loss, g) in &per_item {
        total += loss;
        for (a, s) in acc.flat_mut().iter_mut().zip(g.flat()) {
            for (av, sv) in a.iter_mut().zip(s.iter()) {
                *av = *av + *sv;
            }
        }
    }
    let inv = F::from_real(1.0 / indices.len() as f64);
    for slice in acc.flat_mut() {
        for v in slice.iter_mut() {
            *v = *v * inv;
        }
    }
    Ok((total / indices.len() as f64, acc))
}

/// Mean forward loss over a whole item set.
pub fn mean_loss<F: Scalar>(
    model: &TransducerModel<F>,
    items: &[TrainItem<F>],
    parallel: bool,
) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Empty { context: "mean_loss: items" });
    }
    let losses: Vec<f64> = if parallel {
        items
            .par_iter()
            .map(|it| model.loss(&it.frames, &it.z, &it.labels).map(|(l, _)| l.into_real()))
            .collect::<Result<_>>()?
    } else {
        items
            .iter()
            .map(|it| model.loss(&it.frames, &it.z, &it.labels).map(|(l, _)| l.into_real()))
            .collect::<Result<_>>()?
    };
    Ok(losses.iter().sum::<f64>() / losses.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean loss over the full item set before the first update.
    pub initial_loss: f64,
    /// Same measurement after the last update.
    pub final_loss: f64,
    /// Mean batch loss at each step, measured before that step's update.
    pub step_losses: Vec<f64>,
    /// Pre-clip global gradient norm at each step.
    pub grad_norms: Vec<f64>,
}

impl TrainReport {
    /// Fractional improvement of final over initial loss.
    pub fn reduction(&self) -> f64 {
        (self.initial_loss - self.final_loss) / self.initial_loss
    }
}

pub fn train<F: Scalar>(
    model: &mut TransducerModel<F>,
    items: &[TrainItem<F>],
    cfg: &TrainingConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Empty { context: "train: items" });
    }
    let mut rng = SeededRng::new(cfg.seed);
    let mut adam = Adam::new(model);
    let initial_loss = mean_loss(model, items, cfg.parallel)?;
    let mut step_losses = Vec::with_capacity(cfg.steps);
    let mut grad_norms = Vec::with_capacity(cfg.steps);
    for _ in 0..cfg.steps {
        let indices: Vec<usize> =
            (0..cfg.batch_size).map(|_| rng.below(items.len())).collect();
        let (loss, mut grads) = batch_grads(model, items, &indices, cfg.parallel)?;
        grad_norms.push(clip_global_norm(&mut grads, cfg.clip_norm));
        adam.step(model, &grads, cfg)?;
        step_losses.push(loss);
    }
    let final_loss = mean_loss(model, items, cfg.parallel)?;
    Ok(TrainReport { initial_loss, final_loss, step_losses, grad_norms })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub utterances: usize,
    pub token_errors: usize,
    pub reference_tokens: usize,
    /// Levenshtein errors over reference tokens.
    pub token_error_rate: f64,
    pub exact_matches: usize,
    pub exact_match_rate: f64,
    pub mean_loss: f64,
}

/// Levenshtein distance over label sequences.
pub fn edit_distance(a: &[usize], b: &[usize]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, &x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, &y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Decode every item (greedy for beam_size <= 1, otherwise beam top-1) and
/// score against the reference labels.
pub fn evaluate<F: Scalar>(
    model: &TransducerModel<F>,
    items: &[TrainItem<F>],
    beam_size: usize,
    limits: DecodeLimits,
    parallel: bool,
) -> Result<EvalReport> {
    if items.is_empty() {
        return Err(Error::Empty { context: "evaluate: items" });
    }
    let decode_one = |it: &TrainItem<F>| -> Result<Vec<usize>> {
        if beam_size <= 1 {
            model.greedy(&it.frames, &it.z, limits)
        } else {
            let hyps = model.beam(&it.frames, &it.z, beam_size, limits)?;
            Ok(hyps.into_iter().next().map(|h| h.labels).unwrap_or_default())
        }
    };
    let hyps: Vec<Vec<usize>> = if parallel {
        items.par_iter().map(decode_one).collect::<Result<_>>()?
    } else {
        items.iter().map(decode_one).collect::<Result<_>>()?
    };

    let mut token_errors = 0;
    let mut reference_tokens = 0;
    let mut exact_matches = 0;
    for (hyp, it) in hyps.iter().zip(items) {
        token_errors += edit_distance(hyp, &it.labels);
        reference_tokens += it.labels.len();
        exact_matches += usize::from(hyp == &it.labels);
    }
    Ok(EvalReport {
        utterances: items.len(),
        token_errors,
        reference_tokens,
        token_error_rate: token_errors as f64 / reference_tokens as f64,
        exact_matches,
        exact_match_rate: exact_matches as f64 / items.len() as f64,
        mean_loss: mean_loss(model, items, parallel)?,
    })
}
