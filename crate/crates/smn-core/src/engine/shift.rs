//! Naive shift-mode: every frame, rebuild the window pyramid from raw
//! frames with per-frame memoization only (each node computed once per
//! frame, nothing reused across frames).
//!
//! Because the causal 2-tap convolutions are unpadded, the dependency
//! closure of the front column spans `2T - 1` raw frames and holds
//! `2T/2^l - 1` nodes at level `l`: the trailing `T`-frame window pyramid
//! (`T/2^l` nodes per level) plus an older dependency tail. The cell meter
//! charges the window-pyramid nodes, which is the count the closed-form
//! recompute expectation describes; the multiply counter stays honest and
//! includes the tail.

use std::collections::VecDeque;

use crate::meter::{FrameMeter, MemoryAudit, OpMeter};
use crate::pyramid::{conv_block, decode_latest, fuse, FrontColumn};
use crate::spec::PyramidSpec;
use crate::tensor::FeatureMap;
use crate::weights::Weights;
use crate::Result;

use super::{check_frame, Engine, EngineOutput, Status};

pub struct ShiftEngine {
    spec: PyramidSpec,
    weights: Weights,
    /// Raw frames, oldest first, at most `R_L`.
    window: VecDeque<FeatureMap>,
    /// Per-frame memo of f nodes, `scratch[l-1][j]` = `f_l(t - j*2^l)`.
    /// Retained across frames (overwritten each step) so the audit can see
    /// the true working set.
    scratch: Vec<Vec<FeatureMap>>,
    t: u64,
    meter: OpMeter,
}

impl ShiftEngine {
    pub fn new(spec: PyramidSpec, weights: Weights) -> Self {
        let levels = spec.levels();
        Self {
            window: VecDeque::with_capacity(spec.receptive_field()),
            scratch: vec![Vec::new(); levels],
            meter: OpMeter::new(levels + 1),
            t: 0,
            spec,
            weights,
        }
    }

    /// Nodes held at `level` by the dependency closure: `2^(L+1-level) - 1`.
    fn closure_nodes(&self, level: usize) -> usize {
        (1usize << (self.spec.levels() + 1 - level)) - 1
    }

    fn rebuild_pyramid(&mut self, meter: &mut FrameMeter) -> Result<()> {
        let levels = self.spec.levels();
        let r = self.spec.receptive_field();
        let t_frames = self.spec.frames();
        for level in 1..=levels {
            let count = self.closure_nodes(level);
            let kernel_mults = self
                .weights
                .encoder(level)
                .kernel
                .mult_count(self.spec.level_cells(level - 1));
            let (done, rest) = self.scratch.split_at_mut(level - 1);
            let below: &[FeatureMap] = if level == 1 { &[] } else { &done[level - 2] };
            let out = &mut rest[0];
            out.clear();
            for j in 0..count {
                // f_{l-1} at offsets (2j, 2j+1, 2j+2) in units of 2^(l-1)
                let f_new = level_input(&self.window, below, level, r, 2 * j);
                let f_mid = level_input(&self.window, below, level, r, 2 * j + 1);
                let f_old = level_input(&self.window, below, level, r, 2 * j + 2);
                let c_front = conv_block(&self.weights, level, f_mid, f_new)?;
                let c_lag = conv_block(&self.weights, level, f_old, f_mid)?;
                out.push(fuse(&c_lag, &c_front)?);
                meter.add_mults(level, 2 * kernel_mults);
                // cells follow the window-pyramid convention: only nodes
                // younger than T frames are charged
                if j * (1 << level) < t_frames {
                    meter.add_cells(level, self.spec.level_cells(level) as u64);
                }
            }
        }
        Ok(())
    }
}

/// `f_{level-1}` at temporal offset `m * 2^(level-1)` behind the newest
/// frame: raw window for level 1, the previous scratch row otherwise.
fn level_input<'a>(
    window: &'a VecDeque<FeatureMap>,
    below: &'a [FeatureMap],
    level: usize,
    r: usize,
    m: usize,
) -> &'a FeatureMap {
    if level == 1 {
        &window[r - 1 - m]
    } else {
        &below[m]
    }
}

impl Engine for ShiftEngine {
    fn name(&self) -> &'static str {
        "shift"
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
        let status = if self.window.len() == r {
            // level-0 charge: the T in-window raw nodes, per the same
            // window-pyramid convention
            meter.add_cells(
                0,
                self.spec.frames() as u64 * self.spec.level_cells(0) as u64,
            );
            self.rebuild_pyramid(&mut meter)?;
            let mut maps = Vec::with_capacity(self.spec.levels() + 1);
            maps.push(self.window.back().expect("window full").clone());
            for level in 1..=self.spec.levels() {
                maps.push(self.scratch[level - 1][0].clone());
            }
            let column = FrontColumn::new(maps);
            labels = Some(decode_latest(&self.spec, &self.weights, &column)?);
            front = Some(column);
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
        for s in self.scratch.iter_mut() {
            s.clear();
        }
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
        for (i, level_maps) in self.scratch.iter().enumerate() {
            for m in level_maps {
                audit.add(i + 1, m.spatial_cells() as u64, m.data().len() as u64);
            }
        }
        audit
    }
}
