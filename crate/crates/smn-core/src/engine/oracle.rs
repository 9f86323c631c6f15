//! Brute-force positional evaluation and the patch-mode driver.
//!
//! [`oracle_node`] recomputes any node value by recursive descent over raw
//! frames with no caching at all. Exponential in the level, which is the
//! point: it cannot share bugs with the incremental engines, so it serves as
//! ground truth for the periodicity and equivalence tests.

use std::collections::VecDeque;

use crate::meter::{FrameMeter, MemoryAudit, OpMeter};
use crate::pyramid::{conv_block, decode_latest, fuse, FrontColumn};
use crate::spec::PyramidSpec;
use crate::tensor::{FeatureMap, LabelMap};
use crate::weights::Weights;
use crate::{Error, Result};

use super::{check_frame, Engine, EngineOutput, Status};

/// Node value `f_level(t)` computed positionally from raw frames.
///
/// `frames[i]` is the frame at absolute time `i`; `t` indexes into it.
/// Requires the full receptive field: `t >= R_level - 1`.
pub fn oracle_node(
    spec: &PyramidSpec,
    weights: &Weights,
    level: usize,
    t: usize,
    frames: &[FeatureMap],
) -> Result<FeatureMap> {
    if t >= frames.len() {
        return Err(Error::InsufficientHistory {
            level,
            needed: t + 1,
            have: frames.len(),
        });
    }
    let needed = spec.receptive_field_at(level);
    if t + 1 < needed {
        return Err(Error::InsufficientHistory {
            level,
            needed,
            have: t + 1,
        });
    }
    if level == 0 {
        return Ok(frames[t].clone());
    }
    let s = spec.lag(level);
    let f_new = oracle_node(spec, weights, level - 1, t, frames)?;
    let f_mid = oracle_node(spec, weights, level - 1, t - s, frames)?;
    let f_old = oracle_node(spec, weights, level - 1, t - 2 * s, frames)?;
    let c_new = conv_block(weights, level, &f_mid, &f_new)?;
    let c_lag = conv_block(weights, level, &f_old, &f_mid)?;
    fuse(&c_lag, &c_new)
}

/// Labels for the last frame of a full window of `R_L = 2T - 1` frames.
pub fn patch_infer(
    spec: &PyramidSpec,
    weights: &Weights,
    window: &[FeatureMap],
) -> Result<LabelMap> {
    let r = spec.receptive_field();
    if window.len() != r {
        return Err(Error::InsufficientHistory {
            level: spec.levels(),
            needed: r,
            have: window.len(),
        });
    }
    let t = r - 1;
    let maps = (0..=spec.levels())
        .map(|level| oracle_node(spec, weights, level, t, window))
        .collect::<Result<Vec<_>>>()?;
    decode_latest(spec, weights, &FrontColumn::new(maps))
}

/// Stream driver for patch-mode: buffers `R_L` frames and emits one output
/// every `T` frames (no window overlap between consecutive outputs), at
/// window-end times `R_L - 1 + k*T`. Frames in between report `Warming`.
pub struct PatchEngine {
    spec: PyramidSpec,
    weights: Weights,
    window: VecDeque<FeatureMap>,
    t: u64,
    meter: OpMeter,
}

impl PatchEngine {
    pub fn new(spec: PyramidSpec, weights: Weights) -> Self {
        let levels = spec.levels();
        let capacity = spec.receptive_field();
        Self {
            spec,
            weights,
            window: VecDeque::with_capacity(capacity),
            t: 0,
            meter: OpMeter::new(levels + 1),
        }
    }

    fn is_output_frame(&self) -> bool {
        let first = self.spec.first_ready_frame();
        self.t >= first && (self.t - first).is_multiple_of(self.spec.frames() as u64)
    }
}

impl Engine for PatchEngine {
    fn name(&self) -> &'static str {
        "patch"
    }

    fn spec(&self) -> &PyramidSpec {
        &self.spec
    }

    fn step(&mut self, frame: FeatureMap) -> Result<EngineOutput> {
        check_frame(&self.spec, &frame)?;
        let r = self.spec.receptive_field();
        self.window.push_back(frame);
        if self.window.len() > r {
            self.window.pop_front();
        }

        let mut meter = FrameMeter::new(self.spec.levels() + 1);
        let mut labels = None;
        let mut front = None;
        let status = if self.is_output_frame() {
            debug_assert_eq!(self.window.len(), r);
            let window: Vec<FeatureMap> = self.window.iter().cloned().collect();
            let t_rel = r - 1;
            let maps = (0..=self.spec.levels())
                .map(|level| oracle_node(&self.spec, &self.weights, level, t_rel, &window))
                .collect::<Result<Vec<_>>>()?;
            let column = FrontColumn::new(maps);
            labels = Some(decode_latest(&self.spec, &self.weights, &column)?);
            front = Some(column);
            // charged like one full window pyramid per output, same
            // convention as the naive shift engine
            let t_frames = self.spec.frames() as u64;
            for level in 0..=self.spec.levels() {
                let nodes = t_frames >> level;
                meter.add_cells(level, nodes * self.spec.level_cells(level) as u64);
                if level > 0 {
                    let kernel = &self.weights.encoder(level).kernel;
                    let per_node = 2 * kernel.mult_count(self.spec.level_cells(level - 1));
                    meter.add_mults(level, nodes * per_node);
                }
            }
            Status::Ready
        } else {
            meter.add_cells(0, self.spec.level_cells(0) as u64);
            Status::Warming
        };
        self.meter.absorb(&meter);
        let out = EngineOutput {
            frame_index: self.t,
            status,
            labels,
            front,
            meter,
        };
        self.t += 1;
        Ok(out)
    }

    fn reset(&mut self) {
        self.window.clear();
        self.t = 0;
        self.meter.reset();
    }

    fn meter(&self) -> &OpMeter {
        &self.meter
    }

    fn audit(&self) -> MemoryAudit {
        let mut audit = MemoryAudit::new(self.spec.levels() + 1);
        for frame in &self.window {
            audit.add(0, frame.spatial_cells() as u64, frame.data().len() as u64);
        }
        audit
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use crate::spec::Mode;
    use crate::weights::init_weights;

    fn rand_frame(spec: &PyramidSpec, rng: &mut SplitMix64) -> FeatureMap {
        let data = (0..spec.in_channels() * spec.level_cells(0))
            .map(|_| rng.next_unit_f32())
            .collect();
        FeatureMap::from_vec(
            spec.mode(),
            spec.in_channels(),
            spec.level_height(0),
            spec.level_width(0),
            data,
        )
        .unwrap()
    }

    fn line_spec(levels: usize, width: usize) -> PyramidSpec {
        PyramidSpec::new(
            Mode::Line,
            levels,
            width,
            1,
            1,
            vec![2; levels],
            vec![2; levels],
            3,
        )
        .unwrap()
    }

    #[test]
    fn oracle_level_zero_is_the_frame() {
        let spec = line_spec(2, 8);
        let w = init_weights(&spec, 1);
        let mut rng = SplitMix64::new(5);
        let frames: Vec<_> = (0..4).map(|_| rand_frame(&spec, &mut rng)).collect();
        let out = oracle_node(&spec, &w, 0, 2, &frames).unwrap();
        assert!(out.bit_eq(&frames[2]));
    }

    #[test]
    fn oracle_constant_stream_is_time_invariant() {
        let spec = line_spec(2, 8);
        let w = init_weights(&spec, 2);
        let mut rng = SplitMix64::new(6);
        let frame = rand_frame(&spec, &mut rng);
        let frames: Vec<_> = (0..12).map(|_| frame.clone()).collect();
        let a = oracle_node(&spec, &w, 2, 6, &frames).unwrap();
        let b = oracle_node(&spec, &w, 2, 9, &frames).unwrap();
        let c = oracle_node(&spec, &w, 2, 11, &frames).unwrap();
        assert!(a.bit_eq(&b));
        assert!(a.bit_eq(&c));
    }

    #[test]
    fn oracle_rejects_insufficient_history() {
        let spec = line_spec(2, 8);
        let w = init_weights(&spec, 3);
        let mut rng = SplitMix64::new(7);
        let frames: Vec<_> = (0..10).map(|_| rand_frame(&spec, &mut rng)).collect();
        // R_2 = 7, so t=5 lacks history
        assert!(matches!(
            oracle_node(&spec, &w, 2, 5, &frames),
            Err(Error::InsufficientHistory { .. })
        ));
    }

    #[test]
    fn patch_engine_stride() {
        // over 96 frames with T=32 (L=5, R=63): outputs at 62 and 94
        let spec = line_spec(5, 32);
        let w = init_weights(&spec, 4);
        let mut engine = PatchEngine::new(spec.clone(), w);
        let mut rng = SplitMix64::new(8);
        let mut outputs = Vec::new();
        for i in 0..96u64 {
            let out = engine.step(rand_frame(&spec, &mut rng)).unwrap();
            if out.status == Status::Ready {
                outputs.push(i);
            }
        }
        let r = spec.receptive_field() as u64;
        let expect = (96 - (r - 1) - 1) / 32 + 1;
        assert_eq!(outputs.len() as u64, expect);
        assert_eq!(outputs, vec![62, 94]);
    }

    #[test]
    fn patch_constant_window_decodes() {
        let spec = line_spec(1, 4);
        let w = init_weights(&spec, 9);
        let mut rng = SplitMix64::new(10);
        let frame = rand_frame(&spec, &mut rng);
        let window: Vec<_> = (0..spec.receptive_field()).map(|_| frame.clone()).collect();
        let labels = patch_infer(&spec, &w, &window).unwrap();
        assert_eq!(labels.width(), 4);
        assert!(patch_infer(&spec, &w, &window[1..]).is_err());
    }
}
