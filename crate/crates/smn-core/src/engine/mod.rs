//! The three evaluation engines and the bitwise equivalence checker.
//!
//! One engine instance is single-writer: `step` calls must be externally
//! serialized. Distinct instances are independent and may live on different
//! threads.

mod oracle;
mod shift;
mod smn;
mod verify;

pub use oracle::{oracle_node, patch_infer, PatchEngine};
pub use shift::ShiftEngine;
pub use smn::SmnEngine;
pub use verify::{
    verify_equivalence, Divergence, DivergenceSite, EquivalenceReport, FaultInjection, PeriodCheck,
};

use crate::meter::{FrameMeter, MemoryAudit, OpMeter};
use crate::pyramid::FrontColumn;
use crate::spec::PyramidSpec;
use crate::tensor::{FeatureMap, LabelMap};
use crate::{Error, Result};

/// Output readiness. Engines withhold output while their state still covers
/// less history than the receptive field.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Warming,
    Ready,
}

/// Per-frame engine result.
#[derive(Clone, Debug)]
pub struct EngineOutput {
    pub frame_index: u64,
    pub status: Status,
    /// Present on ready frames only.
    pub labels: Option<LabelMap>,
    /// Present on ready frames only.
    pub front: Option<FrontColumn>,
    /// Counter deltas for this frame.
    pub meter: FrameMeter,
}

/// Common surface of the patch, shift and shift-memory engines.
pub trait Engine {
    fn name(&self) -> &'static str;
    fn spec(&self) -> &PyramidSpec;
    /// Feed the next frame, in stream order.
    fn step(&mut self, frame: FeatureMap) -> Result<EngineOutput>;
    /// Drop all state; the next frame is treated as frame 0.
    fn reset(&mut self);
    /// Cumulative counters since construction or the last reset.
    fn meter(&self) -> &OpMeter;
    /// Census of live buffers (rings, windows, retained scratch).
    fn audit(&self) -> MemoryAudit;
}

/// Frames must match the spec's level-0 geometry exactly.
fn check_frame(spec: &PyramidSpec, frame: &FeatureMap) -> Result<()> {
    let expected = (
        spec.in_channels(),
        spec.level_height(0),
        spec.level_width(0),
    );
    if frame.mode() != spec.mode() || frame.shape() != expected {
        return Err(Error::ShapeMismatch {
            context: "input frame",
            expected,
            got: frame.shape(),
        });
    }
    Ok(())
}
