//! The per-level front-node recurrence and the spatial decoder.
//!
//! Everything any engine computes routes through [`conv_block`] and
//! [`fuse`]; that single code path is what makes "bit-identical across
//! engines" hold by construction. The recurrence for the level-`l` front
//! node at time `t` (lag `s = 2^(l-1)`):
//!
//! ```text
//! c_l(t) = norm_act(conv_pair(f_{l-1}(t - s), f_{l-1}(t)))
//! f_l(t) = spatial_pool(temporal_max(c_l(t - s), c_l(t)))
//! ```

use crate::spec::PyramidSpec;
use crate::tensor::{
    argmax_channels, concat_channels, conv_pair, conv_spatial, norm_act, spatial_pool,
    temporal_max, upsample_nearest, FeatureMap, LabelMap,
};
use crate::weights::Weights;
use crate::{Error, Result};

/// The newest node per level at one time step: `f_0(t) .. f_L(t)`.
#[derive(Clone, Debug)]
pub struct FrontColumn {
    maps: Vec<FeatureMap>,
}

impl FrontColumn {
    pub fn new(maps: Vec<FeatureMap>) -> Self {
        Self { maps }
    }

    pub fn levels(&self) -> usize {
        self.maps.len() - 1
    }

    pub fn level(&self, level: usize) -> &FeatureMap {
        &self.maps[level]
    }

    pub fn maps(&self) -> &[FeatureMap] {
        &self.maps
    }

    pub fn bit_eq(&self, other: &Self) -> bool {
        self.maps.len() == other.maps.len()
            && self
                .maps
                .iter()
                .zip(other.maps.iter())
                .all(|(a, b)| a.bit_eq(b))
    }
}

/// Convolve a lagged/new pair of level-`level - 1` maps into the level-`level`
/// pre-pool node `c_level`.
pub fn conv_block(
    weights: &Weights,
    level: usize,
    f_lag: &FeatureMap,
    f_new: &FeatureMap,
) -> Result<FeatureMap> {
    let stage = weights.encoder(level);
    norm_act(&conv_pair(f_lag, f_new, &stage.kernel)?, &stage.norm)
}

/// Pool a lagged/new pair of `c_level` nodes into the level-`level` front
/// node (elementwise temporal max, then stride-2 spatial max).
pub fn fuse(c_lag: &FeatureMap, c_new: &FeatureMap) -> Result<FeatureMap> {
    spatial_pool(&temporal_max(c_lag, c_new)?)
}

/// One step of the shared front-node recurrence at `level`:
/// returns `(c_new, f_new)` given `f_{l-1}(t)`, `f_{l-1}(t - s)`, `c_l(t - s)`.
pub fn encode_front(
    _spec: &PyramidSpec,
    weights: &Weights,
    level: usize,
    f_prev_new: &FeatureMap,
    f_prev_lag: &FeatureMap,
    c_lag: &FeatureMap,
) -> Result<(FeatureMap, FeatureMap)> {
    let c_new = conv_block(weights, level, f_prev_lag, f_prev_new)?;
    let f_new = fuse(c_lag, &c_new)?;
    Ok((c_new, f_new))
}

/// Decode the front column into labels for the latest frame.
///
/// Starting from the top node, each step upsamples, concatenates the
/// encoder front map of the level below as a skip connection, and applies a
/// spatial conv + norm; a 1x1 classifier and per-cell argmax finish the job.
/// Output spatial dims always equal the level-0 frame dims.
pub fn decode_latest(
    spec: &PyramidSpec,
    weights: &Weights,
    front: &FrontColumn,
) -> Result<LabelMap> {
    if front.maps.len() != spec.levels() + 1 {
        return Err(Error::ShapeMismatch {
            context: "decode_latest front column",
            expected: (spec.levels() + 1, 1, 1),
            got: (front.maps.len(), 1, 1),
        });
    }
    let mut d = front.level(spec.levels()).clone();
    for level in (1..=spec.levels()).rev() {
        let stage = weights.decoder(level);
        let up = upsample_nearest(&d);
        let skip = concat_channels(&up, front.level(level - 1))?;
        d = norm_act(&conv_spatial(&skip, &stage.kernel)?, &stage.norm)?;
    }
    let scores = conv_spatial(&d, weights.classifier())?;
    Ok(argmax_channels(&scores))
}
