//! Lockstep bitwise comparison of the naive shift engine and the
//! shift-memory engine, plus a sampled check of the node-repeat period that
//! the memory reuse relies on.

use std::collections::VecDeque;

use crate::spec::PyramidSpec;
use crate::tensor::FeatureMap;
use crate::weights::Weights;
use crate::{Error, Result};

use super::oracle::oracle_node;
use super::{Engine, ShiftEngine, SmnEngine, Status};

/// Deliberate ring corruption applied before stepping `frame`; used to prove
/// the checker actually detects divergence.
#[derive(Clone, Copy, Debug)]
pub struct FaultInjection {
    pub frame: u64,
    pub level: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DivergenceSite {
    FrontLevel(usize),
    Labels,
}

/// First bitwise difference between the two engines.
#[derive(Clone, Copy, Debug)]
pub struct Divergence {
    pub frame: u64,
    pub site: DivergenceSite,
    /// Flat cell index within the differing map.
    pub index: usize,
    pub shift_bits: u32,
    pub smn_bits: u32,
}

/// One sampled periodicity probe: the brute-force node value at time
/// `time = t_end - 2^level * k` must equal the front value the streaming
/// engine computed when that frame arrived.
#[derive(Clone, Copy, Debug)]
pub struct PeriodCheck {
    pub level: usize,
    pub k: u32,
    pub time: u64,
    pub ok: bool,
}

#[derive(Clone, Debug)]
pub struct EquivalenceReport {
    pub frames_run: u64,
    pub ready_frames: u64,
    pub divergence: Option<Divergence>,
    pub period_checks: Vec<PeriodCheck>,
}

impl EquivalenceReport {
    pub fn is_equivalent(&self) -> bool {
        self.divergence.is_none()
            && self.ready_frames > 0
            && self.period_checks.iter().all(|c| c.ok)
    }
}

/// Raw frames kept for the end-of-run periodicity probes.
const FRAME_HISTORY: usize = 64;
/// Front values kept per probed level.
const FRONT_HISTORY: usize = 32;
/// Probes cover levels up to this (oracle cost grows 4^level).
const MAX_PROBE_LEVEL: usize = 3;

/// Runs both streaming engines in lockstep over `n_frames` frames, comparing
/// labels and every front-column map bitwise. Stops at the first divergence.
/// On clean runs, additionally probes the period property at the final frame
/// for levels `1..=min(L,3)` and `k = 1..=3`.
pub fn verify_equivalence(
    spec: &PyramidSpec,
    weights: &Weights,
    frames: impl IntoIterator<Item = FeatureMap>,
    n_frames: usize,
    fault: Option<FaultInjection>,
) -> Result<EquivalenceReport> {
    let r = spec.receptive_field();
    if n_frames <= r {
        return Err(Error::InsufficientHistory {
            level: spec.levels(),
            needed: r + 1,
            have: n_frames,
        });
    }
    if let Some(f) = fault {
        if f.level == 0 || f.level > spec.levels() {
            return Err(Error::InvalidSpec(format!(
                "fault level {} out of 1..={}",
                f.level,
                spec.levels()
            )));
        }
    }

    let mut shift = ShiftEngine::new(spec.clone(), weights.clone());
    let mut smn = SmnEngine::new(spec.clone(), weights.clone());

    let probe_levels = spec.levels().min(MAX_PROBE_LEVEL);
    let mut recent_frames: VecDeque<(u64, FeatureMap)> = VecDeque::new();
    let mut recent_fronts: Vec<VecDeque<(u64, FeatureMap)>> = vec![VecDeque::new(); probe_levels];

    let mut frames_run = 0u64;
    let mut ready_frames = 0u64;
    let mut divergence = None;

    let mut iter = frames.into_iter();
    for i in 0..n_frames as u64 {
        let frame = iter.next().ok_or_else(|| {
            Error::Format(format!("stream ended at frame {i}, expected {n_frames}"))
        })?;

        if let Some(f) = fault {
            if f.frame == i && !smn.corrupt_next_c_read(f.level, 1.0e6) {
                return Err(Error::InvalidSpec(format!(
                    "fault frame {} precedes any cached value at level {}",
                    f.frame, f.level
                )));
            }
        }

        recent_frames.push_back((i, frame.clone()));
        if recent_frames.len() > FRAME_HISTORY {
            recent_frames.pop_front();
        }

        let shift_out = shift.step(frame.clone())?;
        let smn_out = smn.step(frame)?;
        frames_run += 1;
        debug_assert_eq!(shift_out.status, smn_out.status);

        if shift_out.status == Status::Ready && smn_out.status == Status::Ready {
            ready_frames += 1;
            let sf = shift_out.front.as_ref().expect("ready");
            let mf = smn_out.front.as_ref().expect("ready");
            for level in 0..=spec.levels() {
                if let Some(idx) = sf.level(level).first_bit_diff(mf.level(level)) {
                    divergence = Some(Divergence {
                        frame: i,
                        site: DivergenceSite::FrontLevel(level),
                        index: idx,
                        shift_bits: sf.level(level).data()[idx].to_bits(),
                        smn_bits: mf.level(level).data()[idx].to_bits(),
                    });
                    break;
                }
            }
            if divergence.is_none() {
                let sl = shift_out.labels.as_ref().expect("ready").labels();
                let ml = smn_out.labels.as_ref().expect("ready").labels();
                if let Some(idx) = sl.iter().zip(ml.iter()).position(|(a, b)| a != b) {
                    divergence = Some(Divergence {
                        frame: i,
                        site: DivergenceSite::Labels,
                        index: idx,
                        shift_bits: sl[idx] as u32,
                        smn_bits: ml[idx] as u32,
                    });
                }
            }
            if divergence.is_some() {
                break;
            }
            for level in 1..=probe_levels {
                let hist = &mut recent_fronts[level - 1];
                hist.push_back((i, mf.level(level).clone()));
                if hist.len() > FRONT_HISTORY {
                    hist.pop_front();
                }
            }
        }
    }

    let mut period_checks = Vec::new();
    if divergence.is_none() {
        let base = recent_frames.front().map(|(t, _)| *t).unwrap_or(0);
        let window: Vec<FeatureMap> = recent_frames.iter().map(|(_, f)| f.clone()).collect();
        let t_end = n_frames as u64 - 1;
        for level in 1..=probe_levels {
            let period = 1u64 << level;
            for k in 1..=3u32 {
                let Some(time) = t_end.checked_sub(period * k as u64) else {
                    continue;
                };
                if time < spec.first_ready_frame()
                    || time < base + (spec.receptive_field_at(level) as u64 - 1)
                {
                    continue;
                }
                let stored = recent_fronts[level - 1]
                    .iter()
                    .find(|(t, _)| *t == time)
                    .map(|(_, m)| m);
                let Some(stored) = stored else { continue };
                let node = oracle_node(spec, weights, level, (time - base) as usize, &window)?;
                period_checks.push(PeriodCheck {
                    level,
                    k,
                    time,
                    ok: node.bit_eq(stored),
                });
            }
        }
    }

    Ok(EquivalenceReport {
        frames_run,
        ready_frames,
        divergence,
        period_checks,
    })
}
