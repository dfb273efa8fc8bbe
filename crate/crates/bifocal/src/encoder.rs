//! Acoustic encoder: a stack of switching cells plus one output head per
//! branch. All layers share the per-frame branch signal, layer 0 feeds the
//! raw feature frame to every branch, and layer l+1's branch k consumes layer
//! l's branch-k hidden state. The forwarded encoding of frame t is the active
//! branch's top hidden state pushed through that branch's output head
//! (a bias-free matrix onto the shared output dimension).
//!
//! Eager mode runs everything and is what training differentiates through;
//! lazy mode runs one branch per layer per frame and reports operation
//! counts, which the costing model must reproduce exactly.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cell::{
    eager_backward, eager_step, lazy_step, BifocalCellParams, BifocalState, BifocalTape, LazyState,
    SwitchSignal,
};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Scalar, SeededRng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderParams<F> {
    pub feature_dim: usize,
    pub shared_output_dim: usize,
    pub layers: Vec<BifocalCellParams<F>>,
    /// One head per branch: shared_output_dim x branch_hidden, no bias.
    pub output_proj: Vec<Matrix<F>>,
}

impl<F: Scalar> EncoderParams<F> {
    pub fn init(
        feature_dim: usize,
        num_layers: usize,
        branch_dims: &[usize],
        shared_output_dim: usize,
        directions: &[(usize, usize)],
        zero_init_on_switch: bool,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if num_layers == 0 {
            return Err(Error::config("encoder.num_layers", "must be at least 1"));
        }
        if branch_dims.is_empty() {
            return Err(Error::config("encoder.branch_dims", "must name at least one branch"));
        }
        let k = branch_dims.len();
        let mut layers = Vec::with_capacity(num_layers);
        for l in 0..num_layers {
            let input_dims: Vec<usize> = (0..k)
                .map(|b| if l == 0 { feature_dim } else { branch_dims[b] })
                .collect();
            let mut cell = BifocalCellParams::init(&input_dims, branch_dims, directions, rng)?;
            cell.zero_init_on_switch = zero_init_on_switch;
            layers.push(cell);
        }
        let output_proj = branch_dims
            .iter()
            .map(|&d| Matrix::glorot(shared_output_dim, d, rng))
            .collect();
        Ok(EncoderParams {
            feature_dim,
            shared_output_dim,
            layers,
            output_proj,
        })
    }

    pub fn num_branches(&self) -> usize {
        self.layers.first().map_or(0, BifocalCellParams::num_branches)
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn branch_dims(&self) -> Vec<usize> {
        let top = self.layers.last().expect("validated non-empty");
        (0..top.num_branches()).map(|b| top.hidden_dim(b)).collect()
    }

    pub fn supports_transitions(&self, transitions: &[(usize, usize)]) -> Result<()> {
        for layer in &self.layers {
            layer.supports_transitions(transitions)?;
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        EncoderParams {
            feature_dim: self.feature_dim,
            shared_output_dim: self.shared_output_dim,
            layers: self.layers.iter().map(BifocalCellParams::zeros_like).collect(),
            output_proj: self
                .output_proj
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn flat(&self) -> Vec<&[F]> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.flat());
        }
        for m in &self.output_proj {
            out.push(m.data());
        }
        out
    }

    pub fn flat_mut(&mut self) -> Vec<&mut [F]> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.extend(l.flat_mut());
        }
        for m in &mut self.output_proj {
            out.push(m.data_mut());
        }
        out
    }

    pub fn cast<G: Scalar>(&self) -> EncoderParams<G> {
        EncoderParams {
            feature_dim: self.feature_dim,
            shared_output_dim: self.shared_output_dim,
            layers: self.layers.iter().map(BifocalCellParams::cast).collect(),
            output_proj: self.output_proj.iter().map(Matrix::cast).collect(),
        }
    }
}

/// Tape for one eager encoder run: per layer, per frame.
#[derive(Debug, Clone)]
pub struct EncoderTape<F> {
    pub layer_tapes: Vec<Vec<BifocalTape<F>>>,
    pub z: SwitchSignal,
}

fn check_frames<F: Scalar>(p: &EncoderParams<F>, frames: &[Vec<F>], z: &SwitchSignal) -> Result<()> {
    if z.len() != frames.len() {
        return Err(Error::dim("encode: z length", frames.len(), z.len()));
    }
    z.validate(p.num_branches())?;
    for (t, f) in frames.iter().enumerate() {
        if f.len() != p.feature_dim {
            return Err(Error::dim(
                format!("encode: frame {t} feature dim"),
                p.feature_dim,
                f.len(),
            ));
        }
    }
    Ok(())
}

/// Training-mode forward. Returns the forwarded per-frame encodings and the
/// tape for [`encode_backward`].
pub fn encode_eager<F: Scalar>(
    p: &EncoderParams<F>,
    frames: &[Vec<F>],
    z: &SwitchSignal,
) -> Result<(Vec<Vec<F>>, EncoderTape<F>)> {
    check_frames(p, frames, z)?;
    let k = p.num_branches();
    let mut states: Vec<BifocalState<F>> = p.layers.iter().map(BifocalState::zeros).collect();
    let mut layer_tapes: Vec<Vec<BifocalTape<F>>> = vec![Vec::with_capacity(frames.len()); p.layers.len()];
    let mut outputs = Vec::with_capacity(frames.len());

    for (t, frame) in frames.iter().enumerate() {
        let zt = z.0[t];
        let mut inputs: Vec<Vec<F>> = vec![frame.clone(); k];
        for (l, layer) in p.layers.iter().enumerate() {
            let (next, tape) = eager_step(layer, &inputs, &states[l], zt)?;
            inputs = next.branches.iter().map(|s| s.h.clone()).collect();
            states[l] = next;
            layer_tapes[l].push(tape);
        }
        outputs.push(p.output_proj[zt].matvec(&inputs[zt])?);
    }

    Ok((outputs, EncoderTape { layer_tapes, z: z.clone() }))
}

/// Operation counts from a lazy run. The costing model reproduces these
/// analytically; `tests` and the acceptance suite hold the two equal.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LazyRunStats {
    /// [layer][branch] sub-cell evaluations.
    pub cell_steps: Vec<Vec<usize>>,
    /// [layer] switches where projection matrices were applied.
    pub projection_events: Vec<usize>,
    /// [layer] switches of any kind (projected or zero-init).
    pub switch_events: Vec<usize>,
    /// Directed switch counts for one layer (identical across layers since
    /// all layers share z).
    pub transition_counts: BTreeMap<(usize, usize), usize>,
    /// [branch] output-head applications.
    pub output_proj_steps: Vec<usize>,
}

impl LazyRunStats {
    pub fn total_projection_events(&self) -> usize {
        self.projection_events.iter().sum()
    }
}

/// Inference-mode forward: one sub-cell per layer per frame, projections only
/// at switch frames.
pub fn encode_lazy<F: Scalar>(
    p: &EncoderParams<F>,
    frames: &[Vec<F>],
    z: &SwitchSignal,
) -> Result<(Vec<Vec<F>>, LazyRunStats)> {
    check_frames(p, frames, z)?;
    let k = p.num_branches();
    let layers = p.layers.len();
    let mut states: Vec<LazyState<F>> = (0..layers).map(|_| LazyState::fresh()).collect();
    let mut stats = LazyRunStats {
        cell_steps: vec![vec![0; k]; layers],
        projection_events: vec![0; layers],
        switch_events: vec![0; layers],
        transition_counts: BTreeMap::new(),
        output_proj_steps: vec![0; k],
    };
    let mut outputs = Vec::with_capacity(frames.len());
    let mut prev_branch: Option<usize> = None;

    for (t, frame) in frames.iter().enumerate() {
        let zt = z.0[t];
        if let Some(a) = prev_branch {
            if a != zt {
                *stats.transition_counts.entry((a, zt)).or_insert(0) += 1;
            }
        }
        let mut input = frame.clone();
        for l in 0..layers {
            let (next, info) = lazy_step(&p.layers[l], &input, &states[l], zt)?;
            stats.cell_steps[l][zt] += 1;
            if info.switched {
                stats.switch_events[l] += 1;
            }
            if info.projected {
                stats.projection_events[l] += 1;
            }
            input = next.state.h.clone();
            states[l] = next;
        }
        stats.output_proj_steps[zt] += 1;
        outputs.push(p.output_proj[zt].matvec(&input)?);
        prev_branch = Some(zt);
    }

    Ok((outputs, stats))
}

/// BPTT through the whole stack. `d_outputs[t]` is the loss gradient w.r.t.
/// the forwarded encoding of frame t. Returns gradients w.r.t. the input
/// frames (mostly for gradient checking).
pub fn encode_backward<F: Scalar>(
    p: &EncoderParams<F>,
    tape: &EncoderTape<F>,
    d_outputs: &[Vec<F>],
    grads: &mut EncoderParams<F>,
) -> Result<Vec<Vec<F>>> {
    let t_len = tape.z.len();
    if d_outputs.len() != t_len {
        return Err(Error::dim("encode_backward: d_outputs frames", t_len, d_outputs.len()));
    }
    let k = p.num_branches();
    let layers = p.layers.len();

    // Gradient w.r.t. each branch's post-rewrite hidden state, top layer.
    let mut dh_ext: Vec<Vec<Vec<F>>> = (0..t_len)
        .map(|_| {
            (0..k)
                .map(|b| vec![F::zero(); p.layers[layers - 1].hidden_dim(b)])
                .collect()
        })
        .collect();
    for t in 0..t_len {
        let zt = tape.z.0[t];
        if d_outputs[t].len() != p.shared_output_dim {
            return Err(Error::dim(
                format!("encode_backward: d_outputs[{t}]"),
                p.shared_output_dim,
                d_outputs[t].len(),
            ));
        }
        let top_tape = &tape.layer_tapes[layers - 1][t];
        grads.output_proj[zt].add_outer(&d_outputs[t], &top_tape.active_h)?;
        dh_ext[t][zt] = p.output_proj[zt].matvec_t(&d_outputs[t])?;
    }

    for l in (0..layers).rev() {
        let dx = eager_backward(&p.layers[l], &tape.layer_tapes[l], &dh_ext, &mut grads.layers[l])?;
        dh_ext = dx;
    }

    // Layer 0 fed the same frame to every branch: sum the branch input grads.
    let mut d_frames = Vec::with_capacity(t_len);
    for dxt in dh_ext {
        let mut acc = vec![F::zero(); p.feature_dim];
        for dxb in dxt {
            for (a, v) in acc.iter_mut().zip(&dxb) {
                *a = *a + *v;
            }
        }
        d_frames.push(acc);
    }
    Ok(d_frames)
}

/// Stack `n` consecutive frames with stride `m` (defaults elsewhere: 3 and
/// 2). The tail is padded by repeating the final frame so every output
/// window is full.
pub fn stack_frames<F: Scalar>(frames: &[Vec<F>], n: usize, stride: usize) -> Result<Vec<Vec<F>>> {
    if n == 0 || stride == 0 {
        return Err(Error::config("stacking", "n and stride must be positive"));
    }
    if frames.is_empty() {
        return Ok(Vec::new());
    }
    let dim = frames[0].len();
    for (t, f) in frames.iter().enumerate() {
        if f.len() != dim {
            return Err(Error::dim(format!("stack_frames: frame {t}"), dim, f.len()));
        }
    }
    let mut out = Vec::new();
    let mut start = 0;
    while start < frames.len() {
        let mut window = Vec::with_capacity(n * dim);
        for j in 0..n {
            let idx = (start + j).min(frames.len() - 1);
            window.extend_from_slice(&frames[idx]);
        }
        out.push(window);
        start += stride;
    }
    Ok(out)
}
