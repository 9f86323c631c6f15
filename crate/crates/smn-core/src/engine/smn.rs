//! Shift-memory evaluation: per frame, only the front column is computed.
//!
//! Each level keeps two circular buffers of the most recent `s_l + 1` time
//! steps (`s_l = 2^(l-1)`): the pooled inputs `f_{l-1}` and the convolved
//! nodes `c_l`. Level-`l` node values repeat with period `2^l` as the
//! window shifts, so the lagged slots are exactly the "past key nodes" the
//! recurrence pairs with the newest input. Cursors advance one slot per
//! frame; nothing is physically shifted.

use crate::meter::{FrameMeter, MemoryAudit, OpMeter};
use crate::pyramid::{conv_block, decode_latest, fuse, FrontColumn};
use crate::spec::PyramidSpec;
use crate::tensor::FeatureMap;
use crate::weights::Weights;
use crate::Result;

use super::{check_frame, Engine, EngineOutput, Status};

/// Fixed-capacity circular buffer of optional maps. A slot is `None` while
/// the value for that time step was not yet computable (warm-up).
#[derive(Clone, Debug)]
struct Ring {
    slots: Vec<Option<FeatureMap>>,
    /// Next slot to write.
    cursor: usize,
    /// Total pushes, saturating at capacity.
    filled: usize,
}

impl Ring {
    fn new(capacity: usize) -> Self {
        Self {
            slots: (0..capacity).map(|_| None).collect(),
            cursor: 0,
            filled: 0,
        }
    }

    fn capacity(&self) -> usize {
        self.slots.len()
    }

    fn push(&mut self, value: Option<FeatureMap>) {
        self.slots[self.cursor] = value;
        self.cursor = (self.cursor + 1) % self.capacity();
        self.filled = (self.filled + 1).min(self.capacity());
    }

    /// Value pushed `lag` pushes ago (`lag = 0` is the most recent).
    fn lagged(&self, lag: usize) -> Option<&FeatureMap> {
        debug_assert!(lag < self.capacity());
        if lag >= self.filled {
            return None;
        }
        let idx = (self.cursor + self.capacity() - 1 - lag) % self.capacity();
        self.slots[idx].as_ref()
    }

    fn lagged_mut(&mut self, lag: usize) -> Option<&mut FeatureMap> {
        if lag >= self.filled {
            return None;
        }
        let idx = (self.cursor + self.capacity() - 1 - lag) % self.capacity();
        self.slots[idx].as_mut()
    }

    fn clear(&mut self) {
        for s in self.slots.iter_mut() {
            *s = None;
        }
        self.cursor = 0;
        self.filled = 0;
    }

    fn live_maps(&self) -> impl Iterator<Item = &FeatureMap> {
        self.slots.iter().filter_map(|s| s.as_ref())
    }
}

/// The memory `M(P, C)` of one level: lagged pooled inputs and lagged
/// convolved nodes.
#[derive(Clone, Debug)]
struct LevelState {
    lag: usize,
    f_ring: Ring,
    c_ring: Ring,
}

impl LevelState {
    fn new(lag: usize) -> Self {
        Self {
            lag,
            f_ring: Ring::new(lag + 1),
            c_ring: Ring::new(lag + 1),
        }
    }
}

pub struct SmnEngine {
    spec: PyramidSpec,
    weights: Weights,
    /// `levels[l-1]` is the state for pyramid level `l`.
    levels: Vec<LevelState>,
    t: u64,
    meter: OpMeter,
}

impl SmnEngine {
    pub fn new(spec: PyramidSpec, weights: Weights) -> Self {
        let levels = (1..=spec.levels())
            .map(|l| LevelState::new(spec.lag(l)))
            .collect();
        let meter = OpMeter::new(spec.levels() + 1);
        Self {
            spec,
            weights,
            levels,
            t: 0,
            meter,
        }
    }

    /// Fault-injection hook for the equivalence checker: perturbs the
    /// `c_l` ring slot the *next* `step` call will consume. Returns false
    /// if that slot holds no value yet.
    pub fn corrupt_next_c_read(&mut self, level: usize, delta: f32) -> bool {
        let state = &mut self.levels[level - 1];
        let lag = state.lag;
        match state.c_ring.lagged_mut(lag - 1) {
            Some(map) => {
                map.data_mut()[0] += delta;
                true
            }
            None => false,
        }
    }
}

impl Engine for SmnEngine {
    fn name(&self) -> &'static str {
        "smn"
    }

    fn spec(&self) -> &PyramidSpec {
        &self.spec
    }

    fn step(&mut self, frame: FeatureMap) -> Result<EngineOutput> {
        check_frame(&self.spec, &frame)?;
        let level_count = self.spec.levels();
        let mut meter = FrameMeter::new(level_count + 1);
        meter.add_cells(0, self.spec.level_cells(0) as u64);

        let mut fronts: Vec<Option<FeatureMap>> = Vec::with_capacity(level_count + 1);
        fronts.push(Some(frame));

        for level in 1..=level_count {
            let state = &mut self.levels[level - 1];
            let lag = state.lag;
            // reads happen before this frame's pushes: the most recent push
            // is time t-1, so time t-s sits at lag index s-1
            let computed = {
                let f_lag = state.f_ring.lagged(lag - 1);
                let f_new = fronts[level - 1].as_ref();
                let c_new = match (f_lag, f_new) {
                    (Some(fl), Some(fn_)) => {
                        let c = conv_block(&self.weights, level, fl, fn_)?;
                        meter.add_mults(
                            level,
                            self.weights
                                .encoder(level)
                                .kernel
                                .mult_count(self.spec.level_cells(level - 1)),
                        );
                        Some(c)
                    }
                    _ => None,
                };
                let f_out = match (state.c_ring.lagged(lag - 1), c_new.as_ref()) {
                    (Some(c_lag), Some(c)) => Some(fuse(c_lag, c)?),
                    _ => None,
                };
                (c_new, f_out)
            };
            let (c_new, f_out) = computed;
            state.f_ring.push(fronts[level - 1].clone());
            state.c_ring.push(c_new);
            if f_out.is_some() {
                meter.add_cells(level, self.spec.level_cells(level) as u64);
            }
            fronts.push(f_out);
        }

        let ready = self.t >= self.spec.first_ready_frame();
        let (status, labels, front) = if ready {
            let maps: Vec<FeatureMap> = fronts
                .into_iter()
                .map(|f| f.expect("all levels computable past warm-up"))
                .collect();
            let column = FrontColumn::new(maps);
            let labels = decode_latest(&self.spec, &self.weights, &column)?;
            (Status::Ready, Some(labels), Some(column))
        } else {
            (Status::Warming, None, None)
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
        for state in self.levels.iter_mut() {
            state.f_ring.clear();
            state.c_ring.clear();
        }
        self.t = 0;
        self.meter.reset();
    }

    fn meter(&self) -> &OpMeter {
        &self.meter
    }

    fn audit(&self) -> MemoryAudit {
        let mut audit = MemoryAudit::new(self.spec.levels() + 1);
        for (i, state) in self.levels.iter().enumerate() {
            for m in state.f_ring.live_maps().chain(state.c_ring.live_maps()) {
                audit.add(i + 1, m.spatial_cells() as u64, m.data().len() as u64);
            }
        }
        audit
    }
}
