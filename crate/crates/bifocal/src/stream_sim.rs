//! Streaming catch-up simulator.
//!
//! Device-side decoding of a buffered utterance is modeled as a single
//! server working through frames in order. Lead-in frames all become
//! available the moment the wake word ends (ideal buffer); later frames
//! arrive in real time. Each frame costs its encoder FLOPs divided by the
//! device rate; the trace records when (and whether) processing catches up
//! with real time. The model is deterministic fluid: compute is the only
//! resource, there is no jitter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_FRAME_DURATION_S: f64 = 0.030;

/// Tolerance when comparing times against real-time boundaries.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamScenario {
    pub frame_duration_s: f64,
    pub frames: usize,
    /// Number of buffered lead-in frames; they become available together at
    /// `ww_frame_index * frame_duration_s`.
    pub ww_frame_index: usize,
    /// Device throughput in FLOPs per second; `f64::INFINITY` is allowed.
    pub device_rate: f64,
}

impl StreamScenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.frame_duration_s > 0.0) {
            return Err(Error::config("simulation.frame_duration_s", "must be positive"));
        }
        if self.frames == 0 {
            return Err(Error::config("simulation.frames", "must be at least 1"));
        }
        if self.ww_frame_index > self.frames {
            return Err(Error::config(
                "simulation.ww_frame_index",
                "cannot exceed the frame count",
            ));
        }
        if !(self.device_rate > 0.0) {
            return Err(Error::config("simulation.device_rate", "must be positive"));
        }
        Ok(())
    }

    /// When frame i (0-based) becomes available for processing.
    fn arrival(&self, i: usize) -> f64 {
        self.frame_duration_s * ((i + 1).max(self.ww_frame_index)) as f64
    }

    /// Real-time boundary of frame i: the instant its audio ends.
    fn deadline(&self, i: usize) -> f64 {
        self.frame_duration_s * (i + 1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTrace {
    /// Effective configuration echo.
    pub scenario: StreamScenario,
    pub arrival_s: Vec<f64>,
    pub completion_s: Vec<f64>,
    /// completion minus the frame's real-time boundary; floors at one
    /// service time once the queue is empty, so it reaches zero only on an
    /// infinitely fast device.
    pub lag_s: Vec<f64>,
    /// Released-but-unfinished frames at each real-time boundary: how far
    /// the decoder trails the live edge as the user perceives it.
    pub backlog: Vec<usize>,
    pub final_lag_s: f64,
    pub max_backlog: usize,
    /// First 0-based frame picked up no later than its real-time boundary,
    /// i.e. the decoder has rejoined the live edge; None if it never does.
    pub caught_up_frame: Option<usize>,
    pub total_flops: u64,
}

/// Run one scenario over explicit per-frame costs (see
/// `costing::per_frame_costs`).
pub fn simulate(s: &StreamScenario, per_frame_flops: &[u64]) -> Result<LatencyTrace> {
    s.validate()?;
    if per_frame_flops.len() != s.frames {
        return Err(Error::dim("simulate: per-frame costs", s.frames, per_frame_flops.len()));
    }

    let n = s.frames;
    let mut arrival_s = Vec::with_capacity(n);
    let mut completion_s = Vec::with_capacity(n);
    let mut lag_s = Vec::with_capacity(n);
    let mut caught_up_frame = None;
    let mut clock = 0.0f64;
    for (i, &flops) in per_frame_flops.iter().enumerate() {
        let arr = s.arrival(i);
        let service = if s.device_rate.is_infinite() { 0.0 } else { flops as f64 / s.device_rate };
        let start = clock.max(arr);
        if caught_up_frame.is_none() && start <= s.deadline(i) + TIME_EPS {
            caught_up_frame = Some(i);
        }
        clock = start + service;
        arrival_s.push(arr);
        completion_s.push(clock);
        lag_s.push(clock - s.deadline(i));
    }

    // Queue depth sampled at each real-time boundary.
    let mut backlog = Vec::with_capacity(n);
    for i in 0..n {
        let t = s.deadline(i) + TIME_EPS;
        let released = (0..n).filter(|&j| arrival_s[j] <= t).count();
        let done = (0..n).filter(|&j| completion_s[j] <= t).count();
        backlog.push(released - done);
    }

    Ok(LatencyTrace {
        scenario: *s,
        final_lag_s: *lag_s.last().expect("validated at least one frame"),
        max_backlog: backlog.iter().copied().max().unwrap_or(0),
        caught_up_frame,
        total_flops: per_frame_flops.iter().sum(),
        arrival_s,
        completion_s,
        lag_s,
        backlog,
    })
}

/// One named cost profile for comparative sweeps.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepModel {
    pub name: String,
    pub per_frame_flops: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub model: String,
    pub device_rate: f64,
    pub caught_up_frame: Option<usize>,
    pub final_lag_s: f64,
    pub max_backlog: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub cells: Vec<SweepCell>,
}

impl SweepReport {
    /// Cells for one model, in rate order.
    pub fn for_model(&self, name: &str) -> Vec<&SweepCell> {
        self.cells.iter().filter(|c| c.model == name).collect()
    }
}

/// Cartesian rate x model grid; `template.device_rate` is overridden by each
/// entry in `rates`.
pub fn sweep(template: &StreamScenario, rates: &[f64], models: &[SweepModel]) -> Result<SweepReport> {
    if rates.is_empty() {
        return Err(Error::Empty { context: "sweep: rates" });
    }
    if models.is_empty() {
        return Err(Error::Empty { context: "sweep: models" });
    }
    let mut cells = Vec::with_capacity(rates.len() * models.len());
    for model in models {
        for &rate in rates {
            let s = StreamScenario { device_rate: rate, ..*template };
            let trace = simulate(&s, &model.per_frame_flops)?;
            cells.push(SweepCell {
                model: model.name.clone(),
                device_rate: rate,
                caught_up_frame: trace.caught_up_frame,
                final_lag_s: trace.final_lag_s,
                max_backlog: trace.max_backlog,
            });
        }
    }
    Ok(SweepReport { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costing::{
        paper_baseline, paper_bifocal, paper_bifocal_schedule, per_frame_costs, CostConvention,
        PAPER_FRAMES,
    };
    use crate::schedule::ScheduleSpec;

    fn scenario(rate: f64) -> StreamScenario {
        StreamScenario {
            frame_duration_s: DEFAULT_FRAME_DURATION_S,
            frames: PAPER_FRAMES,
            ww_frame_index: crate::costing::paper_ww_frames(),
            device_rate: rate,
        }
    }

    fn baseline_costs(conv: &CostConvention) -> Vec<u64> {
        let z = ScheduleSpec::constant(0).build_z(PAPER_FRAMES).unwrap();
        per_frame_costs(&paper_baseline(), &z, conv).unwrap()
    }

    fn bifocal_costs(conv: &CostConvention) -> Vec<u64> {
        let z = paper_bifocal_schedule().build_z(PAPER_FRAMES).unwrap();
        per_frame_costs(&paper_bifocal(), &z, conv).unwrap()
    }

    #[test]
    fn infinite_rate_has_zero_lag_and_catches_up_at_the_ww_frame() {
        let conv = CostConvention::default();
        let s = scenario(f64::INFINITY);
        let trace = simulate(&s, &bifocal_costs(&conv)).unwrap();
        assert_eq!(trace.final_lag_s, 0.0);
        assert_eq!(trace.caught_up_frame, Some(s.ww_frame_index - 1));
        // completion = arrival everywhere, lead frames complete at the
        // buffer release instant, and no boundary ever sees a queue
        assert_eq!(trace.completion_s, trace.arrival_s);
        assert_eq!(trace.completion_s[0], s.ww_frame_index as f64 * s.frame_duration_s);
        assert!(trace.backlog.iter().all(|&b| b == 0));
        assert_eq!(trace.max_backlog, 0);
    }

    #[test]
    fn sub_real_time_rate_on_all_large_never_catches_up() {
        let conv = CostConvention::default();
        let d = paper_bifocal();
        let z = ScheduleSpec::constant(1).build_z(PAPER_FRAMES).unwrap();
        let costs = per_frame_costs(&d, &z, &conv).unwrap();
        // a large frame needs ~2.85 GF/s for real time; give it a third
        let s = scenario(1.0e9);
        let trace = simulate(&s, &costs).unwrap();
        assert!(trace.caught_up_frame.is_none());
        for w in trace.lag_s.windows(2) {
            assert!(w[1] > w[0], "lag must grow under an unstable queue");
        }
        for w in trace.backlog.windows(2) {
            assert!(w[1] >= w[0], "backlog shrank under an unstable queue");
        }
        assert!(trace.backlog[PAPER_FRAMES - 1] > trace.backlog[s.ww_frame_index]);
        assert_eq!(trace.max_backlog, trace.backlog[PAPER_FRAMES - 1]);
    }

    #[test]
    fn there_is_a_rate_where_bifocal_catches_up_and_the_baseline_does_not() {
        let conv = CostConvention::default();
        let base = baseline_costs(&conv);
        let bif = bifocal_costs(&conv);
        // Between the two models' average real-time requirements.
        let s = scenario(3.5e9);
        let tb = simulate(&s, &base).unwrap();
        let ti = simulate(&s, &bif).unwrap();
        assert!(tb.caught_up_frame.is_none(), "baseline final lag {}", tb.final_lag_s);
        let caught = ti.caught_up_frame.expect("bifocal should rejoin the live edge");
        assert!(caught >= s.ww_frame_index, "cannot catch up while draining the buffer");
        assert!((100..=120).contains(&caught), "caught at {caught}");
        // once caught up the lag floor is a single frame's service time
        let floor = *bif.last().unwrap() as f64 / s.device_rate;
        assert!(ti.final_lag_s <= floor + 1e-9);
        assert!(tb.final_lag_s > 1.0, "baseline should stay far behind");
    }

    #[test]
    fn completions_are_ordered_and_work_is_conserved() {
        let conv = CostConvention::default();
        let costs = bifocal_costs(&conv);
        let s = scenario(2.0e9);
        let trace = simulate(&s, &costs).unwrap();
        assert_eq!(trace.completion_s.len(), PAPER_FRAMES);
        for w in trace.completion_s.windows(2) {
            assert!(w[1] >= w[0]);
        }
        // Busy-server conservation: the last completion is at least the
        // total service time after the buffer release.
        let total_service: f64 = costs.iter().map(|&c| c as f64 / s.device_rate).sum();
        let release = s.ww_frame_index as f64 * s.frame_duration_s;
        assert!(trace.completion_s[PAPER_FRAMES - 1] >= release + total_service - 1e-6);
        assert_eq!(trace.total_flops, costs.iter().sum::<u64>());
    }

    #[test]
    fn higher_rates_never_hurt() {
        let conv = CostConvention::default();
        let costs = bifocal_costs(&conv);
        let mut prev: Option<LatencyTrace> = None;
        for rate in [1.0e9, 2.0e9, 3.5e9, 8.0e9] {
            let trace = simulate(&scenario(rate), &costs).unwrap();
            if let Some(p) = &prev {
                for (a, b) in trace.completion_s.iter().zip(&p.completion_s) {
                    assert!(a <= b, "faster device delayed a frame");
                }
                let a = trace.caught_up_frame.unwrap_or(usize::MAX);
                let b = p.caught_up_frame.unwrap_or(usize::MAX);
                assert!(a <= b, "faster device caught up later");
            }
            prev = Some(trace);
        }
    }

    #[test]
    fn sweep_grid_is_deterministic_and_monotone() {
        let conv = CostConvention::default();
        let models = vec![
            SweepModel { name: "baseline".into(), per_frame_flops: baseline_costs(&conv) },
            SweepModel { name: "bifocal".into(), per_frame_flops: bifocal_costs(&conv) },
        ];
        let rates = [2.0e9, 3.0e9, 3.5e9, 5.0e9];
        let template = scenario(1.0);
        let report = sweep(&template, &rates, &models).unwrap();
        assert_eq!(report.cells.len(), 8);
        let again = sweep(&template, &rates, &models).unwrap();
        assert_eq!(report, again);

        for name in ["baseline", "bifocal"] {
            let cells = report.for_model(name);
            // ascending rates: the catch-up frame never moves later
            for w in cells.windows(2) {
                let a = w[0].caught_up_frame.unwrap_or(usize::MAX);
                let b = w[1].caught_up_frame.unwrap_or(usize::MAX);
                assert!(b <= a, "{name}: catch-up moved later as the rate grew");
            }
        }
        // the switching model is never worse at any rate
        for (b, i) in report.for_model("baseline").iter().zip(report.for_model("bifocal")) {
            assert!(
                i.caught_up_frame.unwrap_or(usize::MAX) <= b.caught_up_frame.unwrap_or(usize::MAX)
            );
            assert!(i.final_lag_s <= b.final_lag_s + 1e-12);
        }
    }

    #[test]
    fn scenario_validation() {
        let mut s = scenario(1.0e9);
        s.frames = 0;
        assert!(s.validate().is_err());
        let mut s = scenario(1.0e9);
        s.ww_frame_index = s.frames + 1;
        assert!(s.validate().is_err());
        let mut s = scenario(0.0);
        s.device_rate = 0.0;
        assert!(s.validate().is_err());
        let s = scenario(1.0e9);
        assert!(simulate(&s, &[1, 2, 3]).is_err());
    }
}
