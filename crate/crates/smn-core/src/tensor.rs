//! Dense tensor kernels with a fixed accumulation order.
//!
//! Every engine in this crate routes through these functions, and the
//! equivalence claim between engines is *bit* identity, not tolerance
//! equality. That only holds if each output cell is accumulated in exactly
//! one order, so the loops here are part of the contract:
//!
//! * convolution: per output cell, iterate input channel (outer), then
//!   temporal tap, then spatial taps row-major, accumulating into a single
//!   f32; bias added last; no FMA,
//! * normalization: `gamma * (x - mean) / sqrt(variance + epsilon) + beta`
//!   evaluated as written, then rectified,
//! * max pooling: fold over the covered cells in row-major order.
//!
//! The rayon path (feature `parallel`) splits across *output channels* only;
//! within a cell nothing changes, so parallel and sequential results are
//! bit-identical.

use crate::spec::Mode;
use crate::{Error, Result};

/// Below this many multiply-adds a convolution stays sequential; forking the
/// pool costs more than the arithmetic. Crossover measured with the
/// `conv_pair` bench group (`cargo bench` vs `--no-default-features`): on a
/// 2-core host the win only shows past tens of millions of MACs per call.
#[cfg(feature = "parallel")]
const PARALLEL_MIN_MACS: usize = 1 << 24;

/// A dense channel-major feature map: one node column of the pyramid.
///
/// Layout: `data[(c * height + y) * width + x]`. LINE maps have `height == 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMap {
    mode: Mode,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn zeros(mode: Mode, channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::check_dims(mode, height, width)?;
        Ok(Self {
            mode,
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        })
    }

    /// Builds a map from raw external data; rejects length mismatches and
    /// non-finite values.
    pub fn from_vec(
        mode: Mode,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f32>,
    ) -> Result<Self> {
        Self::check_dims(mode, height, width)?;
        if data.len() != channels * height * width {
            return Err(Error::ShapeMismatch {
                context: "feature map data length",
                expected: (channels, height, width),
                got: (data.len(), 1, 1),
            });
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "feature map data",
            });
        }
        Ok(Self {
            mode,
            channels,
            height,
            width,
            data,
        })
    }

    fn check_dims(mode: Mode, height: usize, width: usize) -> Result<()> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidSpec(format!(
                "spatial dims must be positive, got {height}x{width}"
            )));
        }
        if mode == Mode::Line && height != 1 {
            return Err(Error::InvalidSpec(format!(
                "LINE maps have height 1, got {height}"
            )));
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `(channels, height, width)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (self.channels, self.height, self.width)
    }

    pub fn spatial_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.mode == other.mode
            && self.channels == other.channels
            && self.height == other.height
            && self.width == other.width
    }

    /// Bitwise equality; distinguishes `-0.0` from `0.0`.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.same_shape(other) && self.first_bit_diff(other).is_none()
    }

    /// Flat index of the first bitwise-differing cell, if any.
    pub fn first_bit_diff(&self, other: &Self) -> Option<usize> {
        self.data
            .iter()
            .zip(other.data.iter())
            .position(|(a, b)| a.to_bits() != b.to_bits())
    }

    fn all_finite(&self, context: &'static str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { context })
        }
    }
}

/// Convolution kernel.
///
/// Weight layout: `weights[(((oc * in + ic) * t_taps + tt) * taps_h + ky) * taps_w + kx]`.
/// Temporal tap 0 applies to the lagged map, tap 1 to the newest.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvKernel {
    out_channels: usize,
    in_channels: usize,
    temporal_taps: usize,
    taps_h: usize,
    taps_w: usize,
    weights: Vec<f32>,
    bias: Vec<f32>,
}

impl ConvKernel {
    pub fn new(
        out_channels: usize,
        in_channels: usize,
        temporal_taps: usize,
        taps_h: usize,
        taps_w: usize,
        weights: Vec<f32>,
        bias: Vec<f32>,
    ) -> Result<Self> {
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::InvalidSpec(
                "kernel channels must be positive".into(),
            ));
        }
        if !(1..=2).contains(&temporal_taps)
            || !(1..=2).contains(&taps_h)
            || !(1..=2).contains(&taps_w)
        {
            return Err(Error::InvalidSpec(format!(
                "kernel taps must be 1 or 2, got t={temporal_taps} h={taps_h} w={taps_w}"
            )));
        }
        let expected = out_channels * in_channels * temporal_taps * taps_h * taps_w;
        if weights.len() != expected {
            return Err(Error::ShapeMismatch {
                context: "kernel weights length",
                expected: (expected, 1, 1),
                got: (weights.len(), 1, 1),
            });
        }
        if bias.len() != out_channels {
            return Err(Error::ChannelMismatch {
                context: "kernel bias length",
                expected: out_channels,
                got: bias.len(),
            });
        }
        if !weights.iter().chain(bias.iter()).all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                context: "kernel parameters",
            });
        }
        Ok(Self {
            out_channels,
            in_channels,
            temporal_taps,
            taps_h,
            taps_w,
            weights,
            bias,
        })
    }

    pub fn zeros(
        out_channels: usize,
        in_channels: usize,
        temporal_taps: usize,
        taps_h: usize,
        taps_w: usize,
    ) -> Self {
        let weights = vec![0.0; out_channels * in_channels * temporal_taps * taps_h * taps_w];
        let bias = vec![0.0; out_channels];
        Self::new(
            out_channels,
            in_channels,
            temporal_taps,
            taps_h,
            taps_w,
            weights,
            bias,
        )
        .expect("zero kernel is always consistent")
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn temporal_taps(&self) -> usize {
        self.temporal_taps
    }

    pub fn taps_h(&self) -> usize {
        self.taps_h
    }

    pub fn taps_w(&self) -> usize {
        self.taps_w
    }

    pub fn weights(&self) -> &[f32] {
        &self.weights
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    /// Number of weights feeding one output cell of one output channel.
    pub fn fan_in(&self) -> usize {
        self.in_channels * self.temporal_taps * self.taps_h * self.taps_w
    }

    /// Multiplies performed when applied to a map with `cells` spatial cells.
    pub fn mult_count(&self, cells: usize) -> u64 {
        (self.out_channels * self.fan_in()) as u64 * cells as u64
    }
}

/// Inference-time affine normalization parameters, one set per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct NormParams {
    gamma: Vec<f32>,
    beta: Vec<f32>,
    mean: Vec<f32>,
    variance: Vec<f32>,
    epsilon: f32,
}

impl NormParams {
    pub fn new(
        gamma: Vec<f32>,
        beta: Vec<f32>,
        mean: Vec<f32>,
        variance: Vec<f32>,
        epsilon: f32,
    ) -> Result<Self> {
        let n = gamma.len();
        if beta.len() != n || mean.len() != n || variance.len() != n {
            return Err(Error::ChannelMismatch {
                context: "norm parameter lengths",
                expected: n,
                got: beta.len().min(mean.len()).min(variance.len()),
            });
        }
        if !(epsilon.is_finite() && epsilon > 0.0) {
            return Err(Error::InvalidSpec(format!(
                "norm epsilon must be a small positive real, got {epsilon}"
            )));
        }
        if variance.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidSpec(
                "norm variance must be finite and >= 0".into(),
            ));
        }
        if !gamma
            .iter()
            .chain(beta.iter())
            .chain(mean.iter())
            .all(|v| v.is_finite())
        {
            return Err(Error::NonFinite {
                context: "norm parameters",
            });
        }
        Ok(Self {
            gamma,
            beta,
            mean,
            variance,
            epsilon,
        })
    }

    /// gamma=1, beta=0, mean=0, variance=1: pure rectification after scaling
    /// by `1/sqrt(1+eps)`.
    pub fn identity(channels: usize, epsilon: f32) -> Self {
        Self::new(
            vec![1.0; channels],
            vec![0.0; channels],
            vec![0.0; channels],
            vec![1.0; channels],
            epsilon,
        )
        .expect("identity norm is always consistent")
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn gamma(&self) -> &[f32] {
        &self.gamma
    }

    pub fn beta(&self) -> &[f32] {
        &self.beta
    }

    pub fn mean(&self) -> &[f32] {
        &self.mean
    }

    pub fn variance(&self) -> &[f32] {
        &self.variance
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }
}

/// Per-cell class decisions for one frame.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    labels: Vec<u8>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, labels: Vec<u8>) -> Self {
        assert_eq!(labels.len(), height * width);
        Self {
            height,
            width,
            labels,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn at(&self, y: usize, x: usize) -> u8 {
        self.labels[y * self.width + x]
    }
}

/// Deterministic elementwise max. The only finite values that compare equal
/// with different bits are the two zeros; ties canonicalize to `+0.0` so the
/// op is bitwise commutative, associative and idempotent.
#[inline]
fn max_det(a: f32, b: f32) -> f32 {
    if a > b {
        a
    } else if b > a {
        b
    } else if a.to_bits() == b.to_bits() {
        a
    } else {
        0.0
    }
}

/// Rectifier: strictly positive values pass, everything else (including
/// `-0.0`) becomes `+0.0`.
#[inline]
fn relu(y: f32) -> f32 {
    if y > 0.0 {
        y
    } else {
        0.0
    }
}

/// One output channel of a convolution. `srcs[tt]` is the map temporal tap
/// `tt` applies to. Spatial taps past the high edge read an implicit zero
/// (the zero product is still accumulated, keeping the "appended zero
/// column/row" semantics exact).
fn conv_channel(out: &mut [f32], oc: usize, srcs: &[&FeatureMap], k: &ConvKernel) {
    let h = srcs[0].height;
    let w = srcs[0].width;
    let base = oc * k.fan_in();
    let bias = k.bias[oc];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0f32;
            let mut wi = base;
            for ic in 0..k.in_channels {
                let cbase = ic * h * w;
                for src in srcs.iter().take(k.temporal_taps) {
                    for ky in 0..k.taps_h {
                        let yy = y + ky;
                        for kx in 0..k.taps_w {
                            let xx = x + kx;
                            let v = if yy < h && xx < w {
                                src.data[cbase + yy * w + xx]
                            } else {
                                0.0
                            };
                            acc += k.weights[wi] * v;
                            wi += 1;
                        }
                    }
                }
            }
            out[y * w + x] = acc + bias;
        }
    }
}

fn conv_exec(srcs: &[&FeatureMap], k: &ConvKernel, context: &'static str) -> Result<FeatureMap> {
    let first = srcs[0];
    for s in srcs.iter().skip(1) {
        if !first.same_shape(s) {
            return Err(Error::ShapeMismatch {
                context,
                expected: first.shape(),
                got: s.shape(),
            });
        }
    }
    if first.channels != k.in_channels {
        return Err(Error::ChannelMismatch {
            context,
            expected: k.in_channels,
            got: first.channels,
        });
    }
    for s in srcs {
        s.all_finite(context)?;
    }
    let cells = first.spatial_cells();
    let mut data = vec![0.0f32; k.out_channels * cells];

    #[cfg(feature = "parallel")]
    let parallel = k.out_channels > 1 && k.out_channels * k.fan_in() * cells >= PARALLEL_MIN_MACS;
    #[cfg(not(feature = "parallel"))]
    let parallel = false;

    if parallel {
        #[cfg(feature = "parallel")]
        {
            use rayon::prelude::*;
            data.par_chunks_mut(cells)
                .enumerate()
                .for_each(|(oc, out)| conv_channel(out, oc, srcs, k));
        }
    } else {
        for (oc, out) in data.chunks_mut(cells).enumerate() {
            conv_channel(out, oc, srcs, k);
        }
    }
    Ok(FeatureMap {
        mode: first.mode,
        channels: k.out_channels,
        height: first.height,
        width: first.width,
        data,
    })
}

/// Two-tap temporal convolution: tap 0 reads `f_lag`, tap 1 reads `f_new`.
/// Shape-preserving (zero padding on the high spatial edges).
pub fn conv_pair(f_lag: &FeatureMap, f_new: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    if k.temporal_taps != 2 {
        return Err(Error::InvalidSpec(format!(
            "conv_pair needs 2 temporal taps, kernel has {}",
            k.temporal_taps
        )));
    }
    conv_exec(&[f_lag, f_new], k, "conv_pair")
}

/// Single-time-step convolution used in the decoder and classifier.
pub fn conv_spatial(m: &FeatureMap, k: &ConvKernel) -> Result<FeatureMap> {
    if k.temporal_taps != 1 {
        return Err(Error::InvalidSpec(format!(
            "conv_spatial needs 1 temporal tap, kernel has {}",
            k.temporal_taps
        )));
    }
    conv_exec(&[m], k, "conv_spatial")
}

/// Per-channel affine normalization followed by rectification.
pub fn norm_act(m: &FeatureMap, p: &NormParams) -> Result<FeatureMap> {
    if p.channels() != m.channels {
        return Err(Error::ChannelMismatch {
            context: "norm_act",
            expected: m.channels,
            got: p.channels(),
        });
    }
    m.all_finite("norm_act")?;
    let cells = m.spatial_cells();
    let mut data = vec![0.0f32; m.data.len()];
    for c in 0..m.channels {
        let gamma = p.gamma[c];
        let beta = p.beta[c];
        let mean = p.mean[c];
        let denom = (p.variance[c] + p.epsilon).sqrt();
        let src = &m.data[c * cells..(c + 1) * cells];
        let dst = &mut data[c * cells..(c + 1) * cells];
        for (d, &x) in dst.iter_mut().zip(src.iter()) {
            *d = relu(gamma * (x - mean) / denom + beta);
        }
    }
    Ok(FeatureMap {
        mode: m.mode,
        channels: m.channels,
        height: m.height,
        width: m.width,
        data,
    })
}

/// Elementwise maximum of two equally shaped maps (the temporal half of the
/// 2x2-stride-2 pool).
pub fn temporal_max(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if !a.same_shape(b) {
        return Err(Error::ShapeMismatch {
            context: "temporal_max",
            expected: a.shape(),
            got: b.shape(),
        });
    }
    let data = a
        .data
        .iter()
        .zip(b.data.iter())
        .map(|(&x, &y)| max_det(x, y))
        .collect();
    Ok(FeatureMap {
        mode: a.mode,
        channels: a.channels,
        height: a.height,
        width: a.width,
        data,
    })
}

/// Stride-2 spatial max pool: halves the width (and height in VIDEO mode).
pub fn spatial_pool(m: &FeatureMap) -> Result<FeatureMap> {
    let pool_h = m.mode == Mode::Video;
    if !m.width.is_multiple_of(2) || (pool_h && !m.height.is_multiple_of(2)) {
        return Err(Error::OddSpatialDim {
            height: m.height,
            width: m.width,
        });
    }
    let oh = if pool_h { m.height / 2 } else { m.height };
    let ow = m.width / 2;
    let mut data = vec![0.0f32; m.channels * oh * ow];
    for c in 0..m.channels {
        for y in 0..oh {
            for x in 0..ow {
                let sy = if pool_h { 2 * y } else { y };
                let sx = 2 * x;
                let mut v = max_det(m.at(c, sy, sx), m.at(c, sy, sx + 1));
                if pool_h {
                    v = max_det(v, m.at(c, sy + 1, sx));
                    v = max_det(v, m.at(c, sy + 1, sx + 1));
                }
                data[(c * oh + y) * ow + x] = v;
            }
        }
    }
    Ok(FeatureMap {
        mode: m.mode,
        channels: m.channels,
        height: oh,
        width: ow,
        data,
    })
}

/// Nearest-neighbour upsampling: doubles the width (and height in VIDEO mode).
pub fn upsample_nearest(m: &FeatureMap) -> FeatureMap {
    let up_h = m.mode == Mode::Video;
    let oh = if up_h { m.height * 2 } else { m.height };
    let ow = m.width * 2;
    let mut data = vec![0.0f32; m.channels * oh * ow];
    for c in 0..m.channels {
        for y in 0..oh {
            let sy = if up_h { y / 2 } else { y };
            for x in 0..ow {
                data[(c * oh + y) * ow + x] = m.at(c, sy, x / 2);
            }
        }
    }
    FeatureMap {
        mode: m.mode,
        channels: m.channels,
        height: oh,
        width: ow,
        data,
    }
}

/// Channel concatenation: `a`'s channels first.
pub fn concat_channels(a: &FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.mode != b.mode || a.height != b.height || a.width != b.width {
        return Err(Error::ShapeMismatch {
            context: "concat_channels",
            expected: a.shape(),
            got: b.shape(),
        });
    }
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Ok(FeatureMap {
        mode: a.mode,
        channels: a.channels + b.channels,
        height: a.height,
        width: a.width,
        data,
    })
}

/// Per-cell argmax over channels; ties break to the lowest channel index.
pub fn argmax_channels(m: &FeatureMap) -> LabelMap {
    assert!(
        (1..=256).contains(&m.channels),
        "argmax needs 1..=256 channels, got {}",
        m.channels
    );
    let cells = m.spatial_cells();
    let mut labels = vec![0u8; cells];
    for (i, slot) in labels.iter_mut().enumerate() {
        let mut best = m.data[i];
        let mut best_c = 0usize;
        for c in 1..m.channels {
            let v = m.data[c * cells + i];
            if v > best {
                best = v;
                best_c = c;
            }
        }
        *slot = best_c as u8;
    }
    LabelMap::new(m.height, m.width, labels)
}
