//! Branch schedules: who runs when.
//!
//! The streaming story behind all of them: audio before the wake-word (WW)
//! decision is buffered and cheap to process, so a thin lead-in branch covers
//! frames up to the WW index; after it, wider branches take over, either
//! wholesale (`WwPivot`) or in a cyclic interleave (`Interleave`).
//!
//! Frame indices are 0-based; `ww_frame_index` is the number of lead-in
//! frames, i.e. frames `0..ww` run the lead branch and frame `ww` is the
//! first post-WW frame. Schedules are per-utterance: interleave patterns
//! restart at phase 0 on every utterance.

use serde::{Deserialize, Serialize};

use crate::cell::SwitchSignal;
use crate::error::{Error, Result};

fn default_post_branch() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScheduleSpec {
    /// Lead branch for the lead-in, a single other branch for everything
    /// after. Exactly one switch per utterance.
    WwPivot {
        #[serde(default)]
        lead_branch: usize,
        #[serde(default = "default_post_branch")]
        post_branch: usize,
        /// Usually left unset here and resolved per utterance.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ww_frame_index: Option<usize>,
    },
    /// Lead branch for the lead-in, then one frame on `pivot_branch` (the
    /// branch the lead-in state is projected into), then `pattern` repeated
    /// from phase 0 until the utterance ends.
    Interleave {
        #[serde(default)]
        lead_branch: usize,
        #[serde(default = "default_post_branch")]
        pivot_branch: usize,
        pattern: Vec<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        ww_frame_index: Option<usize>,
    },
    /// `pattern` cycled from frame 0. No wake-word structure; mostly useful
    /// for single-branch baselines (`pattern: [0]`) and tests.
    Custom { pattern: Vec<usize> },
}

impl ScheduleSpec {
    /// Plain single-switch schedule with branch 0 leading into branch 1.
    pub fn ww_pivot() -> Self {
        ScheduleSpec::WwPivot {
            lead_branch: 0,
            post_branch: 1,
            ww_frame_index: None,
        }
    }

    pub fn constant(branch: usize) -> Self {
        ScheduleSpec::Custom { pattern: vec![branch] }
    }

    /// Copy of this spec with the wake-word index pinned (utterances carry
    /// their own).
    pub fn with_ww(&self, ww: usize) -> Self {
        let mut s = self.clone();
        match &mut s {
            ScheduleSpec::WwPivot { ww_frame_index, .. }
            | ScheduleSpec::Interleave { ww_frame_index, .. } => *ww_frame_index = Some(ww),
            ScheduleSpec::Custom { .. } => {}
        }
        s
    }

    pub fn validate(&self, num_branches: usize) -> Result<()> {
        let check = |b: usize, what: &str| -> Result<()> {
            if b >= num_branches {
                return Err(Error::config(
                    format!("schedule.{what}"),
                    format!("branch {b} out of range ({num_branches} branches)"),
                ));
            }
            Ok(())
        };
        match self {
            ScheduleSpec::WwPivot {
                lead_branch,
                post_branch,
                ..
            } => {
                check(*lead_branch, "lead_branch")?;
                check(*post_branch, "post_branch")?;
            }
            ScheduleSpec::Interleave {
                lead_branch,
                pivot_branch,
                pattern,
                ..
            } => {
                check(*lead_branch, "lead_branch")?;
                check(*pivot_branch, "pivot_branch")?;
                if pattern.is_empty() {
                    return Err(Error::config("schedule.pattern", "must not be empty"));
                }
                for &b in pattern {
                    check(b, "pattern")?;
                }
            }
            ScheduleSpec::Custom { pattern } => {
                if pattern.is_empty() {
                    return Err(Error::config("schedule.pattern", "must not be empty"));
                }
                for &b in pattern {
                    check(b, "pattern")?;
                }
            }
        }
        Ok(())
    }

    /// Materialize the per-frame branch signal for an utterance of `frames`
    /// frames. A wake-word index at or past the last frame degenerates to
    /// all-lead. Errors if the spec needs a wake-word index and has none.
    pub fn build_z(&self, frames: usize) -> Result<SwitchSignal> {
        let need_ww = |ww: &Option<usize>| -> Result<usize> {
            ww.ok_or_else(|| {
                Error::config(
                    "schedule.ww_frame_index",
                    "required but unset; resolve it from the utterance first",
                )
            })
        };
        let mut z = Vec::with_capacity(frames);
        match self {
            ScheduleSpec::WwPivot {
                lead_branch,
                post_branch,
                ww_frame_index,
            } => {
                let ww = need_ww(ww_frame_index)?;
                for t in 0..frames {
                    z.push(if t < ww { *lead_branch } else { *post_branch });
                }
            }
            ScheduleSpec::Interleave {
                lead_branch,
                pivot_branch,
                pattern,
                ww_frame_index,
            } => {
                if pattern.is_empty() {
                    return Err(Error::config("schedule.pattern", "must not be empty"));
                }
                let ww = need_ww(ww_frame_index)?;
                for t in 0..frames {
                    if t < ww {
                        z.push(*lead_branch);
                    } else if t == ww {
                        z.push(*pivot_branch);
                    } else {
                        z.push(pattern[(t - ww - 1) % pattern.len()]);
                    }
                }
            }
            ScheduleSpec::Custom { pattern } => {
                if pattern.is_empty() {
                    return Err(Error::config("schedule.pattern", "must not be empty"));
                }
                for t in 0..frames {
                    z.push(pattern[t % pattern.len()]);
                }
            }
        }
        Ok(SwitchSignal(z))
    }

    /// Every (from, to) branch switch this schedule can ever produce,
    /// regardless of utterance length. Used to decide which projection
    /// directions a model must carry.
    pub fn required_transitions(&self) -> Vec<(usize, usize)> {
        let mut set = std::collections::BTreeSet::new();
        match self {
            ScheduleSpec::WwPivot {
                lead_branch,
                post_branch,
                ..
            } => {
                if lead_branch != post_branch {
                    set.insert((*lead_branch, *post_branch));
                }
            }
            ScheduleSpec::Interleave {
                lead_branch,
                pivot_branch,
                pattern,
                ..
            } => {
                if lead_branch != pivot_branch {
                    set.insert((*lead_branch, *pivot_branch));
                }
                if let Some(&first) = pattern.first() {
                    if *pivot_branch != first {
                        set.insert((*pivot_branch, first));
                    }
                }
                for w in pattern.windows(2) {
                    if w[0] != w[1] {
                        set.insert((w[0], w[1]));
                    }
                }
                if pattern.len() > 1 {
                    let last = *pattern.last().unwrap();
                    let first = pattern[0];
                    if last != first {
                        set.insert((last, first));
                    }
                }
            }
            ScheduleSpec::Custom { pattern } => {
                for w in pattern.windows(2) {
                    if w[0] != w[1] {
                        set.insert((w[0], w[1]));
                    }
                }
                if pattern.len() > 1 {
                    let last = *pattern.last().unwrap();
                    let first = pattern[0];
                    if last != first {
                        set.insert((last, first));
                    }
                }
            }
        }
        set.into_iter().collect()
    }
}

/// Occupancy summary of a built signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleStats {
    pub frames: usize,
    /// Fraction of frames on each branch; indexed by branch id.
    pub fractions: Vec<f64>,
    pub switch_count: usize,
}

pub fn schedule_stats(z: &SwitchSignal, num_branches: usize) -> Result<ScheduleStats> {
    z.validate(num_branches)?;
    let mut counts = vec![0usize; num_branches];
    for &b in &z.0 {
        counts[b] += 1;
    }
    let frames = z.len();
    let fractions = counts
        .iter()
        .map(|&c| if frames == 0 { 0.0 } else { c as f64 / frames as f64 })
        .collect();
    Ok(ScheduleStats {
        frames,
        fractions,
        switch_count: z.transitions(),
    })
}

/// The three interleave patterns studied alongside the two-branch pivot:
/// branch 0 is the lead-in, 1 the wide branch, 2 the thin post-WW branch.
pub fn trifocal_pattern(name: &str) -> Option<Vec<usize>> {
    match name {
        "a" | "A" => Some(vec![1, 1, 2, 2]),
        "b" | "B" => Some(vec![1, 2, 2]),
        "c" | "C" => Some(vec![1, 1, 2, 2, 2, 2]),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ww_pivot_builds_single_switch() {
        let z = ScheduleSpec::ww_pivot().with_ww(3).build_z(10).unwrap();
        assert_eq!(z.0, vec![0, 0, 0, 1, 1, 1, 1, 1, 1, 1]);
        assert_eq!(z.transitions(), 1);
    }

    #[test]
    fn ww_pivot_at_or_past_end_is_all_lead() {
        let z = ScheduleSpec::ww_pivot().with_ww(10).build_z(10).unwrap();
        assert_eq!(z.0, vec![0; 10]);
        assert_eq!(z.transitions(), 0);
        let z = ScheduleSpec::ww_pivot().with_ww(99).build_z(4).unwrap();
        assert_eq!(z.0, vec![0; 4]);
    }

    #[test]
    fn ww_pivot_requires_resolved_index() {
        let err = ScheduleSpec::ww_pivot().build_z(10).unwrap_err();
        assert!(err.to_string().contains("ww_frame_index"));
    }

    #[test]
    fn interleave_a_matches_hand_expansion() {
        let spec = ScheduleSpec::Interleave {
            lead_branch: 0,
            pivot_branch: 1,
            pattern: trifocal_pattern("A").unwrap(),
            ww_frame_index: Some(3),
        };
        let z = spec.build_z(12).unwrap();
        assert_eq!(z.0, vec![0, 0, 0, 1, 1, 1, 2, 2, 1, 1, 2, 2]);
    }

    #[test]
    fn interleave_single_post_frame_is_pivot() {
        let spec = ScheduleSpec::Interleave {
            lead_branch: 0,
            pivot_branch: 1,
            pattern: vec![2, 2, 1],
            ww_frame_index: Some(4),
        };
        let z = spec.build_z(5).unwrap();
        assert_eq!(z.0, vec![0, 0, 0, 0, 1]);
    }

    #[test]
    fn interleave_b_post_ww_thin_fraction_approaches_two_thirds() {
        let spec = ScheduleSpec::Interleave {
            lead_branch: 0,
            pivot_branch: 1,
            pattern: trifocal_pattern("B").unwrap(),
            ww_frame_index: Some(3),
        };
        let t = 3 + 1 + 3000;
        let z = spec.build_z(t).unwrap();
        let post = &z.0[3..];
        let thin = post.iter().filter(|&&b| b == 2).count() as f64 / post.len() as f64;
        assert!((thin - 2.0 / 3.0).abs() < 0.01, "thin fraction {thin}");
    }

    #[test]
    fn custom_pattern_cycles_from_frame_zero() {
        let spec = ScheduleSpec::Custom { pattern: vec![0, 1, 1] };
        let z = spec.build_z(7).unwrap();
        assert_eq!(z.0, vec![0, 1, 1, 0, 1, 1, 0]);
        let constant = ScheduleSpec::constant(0).build_z(5).unwrap();
        assert_eq!(constant.0, vec![0; 5]);
    }

    #[test]
    fn empty_pattern_is_rejected() {
        let spec = ScheduleSpec::Custom { pattern: vec![] };
        assert!(spec.build_z(3).is_err());
        assert!(spec.validate(2).is_err());
    }

    #[test]
    fn validate_catches_out_of_range_branches() {
        let spec = ScheduleSpec::Interleave {
            lead_branch: 0,
            pivot_branch: 1,
            pattern: vec![1, 3],
            ww_frame_index: None,
        };
        assert!(spec.validate(3).is_err());
        assert!(spec.validate(4).is_ok());
    }

    #[test]
    fn required_transitions_for_the_named_schedules() {
        assert_eq!(
            ScheduleSpec::ww_pivot().required_transitions(),
            vec![(0, 1)]
        );
        let tri = |name: &str| ScheduleSpec::Interleave {
            lead_branch: 0,
            pivot_branch: 1,
            pattern: trifocal_pattern(name).unwrap(),
            ww_frame_index: None,
        };
        assert_eq!(tri("A").required_transitions(), vec![(0, 1), (1, 2), (2, 1)]);
        assert_eq!(tri("B").required_transitions(), vec![(0, 1), (1, 2), (2, 1)]);
        assert_eq!(tri("C").required_transitions(), vec![(0, 1), (1, 2), (2, 1)]);
        assert_eq!(
            ScheduleSpec::constant(0).required_transitions(),
            Vec::<(usize, usize)>::new()
        );
    }

    #[test]
    fn stats_report_fractions_and_switches() {
        let z = ScheduleSpec::ww_pivot().with_ww(3).build_z(10).unwrap();
        let stats = schedule_stats(&z, 2).unwrap();
        assert_eq!(stats.frames, 10);
        assert!((stats.fractions[0] - 0.3).abs() < 1e-12);
        assert!((stats.fractions[1] - 0.7).abs() < 1e-12);
        assert_eq!(stats.switch_count, 1);
        let total: f64 = stats.fractions.iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn stats_reject_out_of_range_branch() {
        let z = SwitchSignal(vec![0, 2, 1]);
        assert!(schedule_stats(&z, 2).is_err());
    }

    #[test]
    fn build_z_lengths_and_lead_occupancy_hold_over_sweep() {
        for t in 1..40 {
            for ww in 0..t + 2 {
                let z = ScheduleSpec::ww_pivot().with_ww(ww).build_z(t).unwrap();
                assert_eq!(z.len(), t);
                assert!(z.transitions() <= 1);
                let lead = z.0.iter().filter(|&&b| b == 0).count();
                assert_eq!(lead, ww.min(t));

                let tri = ScheduleSpec::Interleave {
                    lead_branch: 0,
                    pivot_branch: 1,
                    pattern: vec![1, 1, 2, 2],
                    ww_frame_index: Some(ww),
                };
                let z = tri.build_z(t).unwrap();
                assert_eq!(z.len(), t);
                if ww < t {
                    assert_eq!(z.0[ww], 1, "first post-WW frame runs the pivot branch");
                }
            }
        }
    }
}
