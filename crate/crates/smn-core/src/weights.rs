//! Network parameters and the SMNW weight file format.
//!
//! File layout (all integers and floats little-endian):
//!
//! ```text
//! magic  "SMNW"
//! u32    version = 1
//! u8     mode (1 = LINE, 2 = VIDEO)
//! u32    levels
//! u32    width
//! u32    height (0 for LINE)
//! u32    in_channels
//! u32    num_classes
//! u32    channels[levels]
//! u32    decoder_channels[levels]
//! f32    epsilon
//! then, as f32 arrays:
//!   encoder level 1..L:  kernel weights, bias, gamma, beta, mean, variance
//!   decoder level L..1:  kernel weights, bias, gamma, beta, mean, variance
//!   classifier:          kernel weights, bias
//! ```
//!
//! Round-trips are byte-identical; loading re-validates every spec invariant
//! plus parameter finiteness.

use std::io::{Read, Write};

use crate::rng::SplitMix64;
use crate::spec::{Mode, PyramidSpec};
use crate::tensor::{ConvKernel, NormParams};
use crate::{Error, Result};

const MAGIC: &[u8; 4] = b"SMNW";
const VERSION: u32 = 1;

/// Normalization epsilon recorded in the weight file.
pub const DEFAULT_EPSILON: f32 = 1e-5;

/// One pyramid stage: convolution followed by normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct StageWeights {
    pub kernel: ConvKernel,
    pub norm: NormParams,
}

/// All encoder, decoder and classifier parameters for one spec.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    /// Encoder stages, index `level - 1`.
    encoder: Vec<StageWeights>,
    /// Decoder stages, index `level - 1` (serialized top-down, L..1).
    decoder: Vec<StageWeights>,
    classifier: ConvKernel,
    epsilon: f32,
}

impl Weights {
    /// Assembles weights from hand-built parts. Shape consistency against a
    /// spec is enforced where the parts are consumed (convolutions reject
    /// mismatched maps), not here.
    pub fn from_parts(
        encoder: Vec<StageWeights>,
        decoder: Vec<StageWeights>,
        classifier: ConvKernel,
        epsilon: f32,
    ) -> Self {
        Self {
            encoder,
            decoder,
            classifier,
            epsilon,
        }
    }

    pub fn encoder(&self, level: usize) -> &StageWeights {
        &self.encoder[level - 1]
    }

    pub fn decoder(&self, level: usize) -> &StageWeights {
        &self.decoder[level - 1]
    }

    pub fn classifier(&self) -> &ConvKernel {
        &self.classifier
    }

    pub fn epsilon(&self) -> f32 {
        self.epsilon
    }
}

fn encoder_kernel_shape(spec: &PyramidSpec, level: usize) -> (usize, usize, usize, usize, usize) {
    (
        spec.channels_at(level),
        spec.channels_at(level - 1),
        2,
        spec.mode().taps_h(),
        2,
    )
}

fn decoder_kernel_shape(spec: &PyramidSpec, level: usize) -> (usize, usize, usize, usize, usize) {
    (
        spec.decoder_channels_at(level - 1),
        spec.decoder_channels_at(level) + spec.channels_at(level - 1),
        1,
        spec.mode().taps_h(),
        2,
    )
}

fn classifier_kernel_shape(spec: &PyramidSpec) -> (usize, usize, usize, usize, usize) {
    (spec.num_classes(), spec.decoder_channels_at(0), 1, 1, 1)
}

fn draw_kernel(rng: &mut SplitMix64, shape: (usize, usize, usize, usize, usize)) -> ConvKernel {
    let (out_ch, in_ch, tt, th, tw) = shape;
    let fan_in = (in_ch * tt * th * tw) as f64;
    let mut draw = || ((rng.next_unit_f64() - 0.5) / fan_in) as f32;
    let weights = (0..out_ch * in_ch * tt * th * tw).map(|_| draw()).collect();
    let bias = (0..out_ch).map(|_| draw()).collect();
    ConvKernel::new(out_ch, in_ch, tt, th, tw, weights, bias)
        .expect("drawn kernel dims are consistent by construction")
}

/// Deterministic pseudo-random weights: one splitmix64 stream seeded as
/// given, drawn in the serialization order of the weight file (kernel
/// weights then bias per stage; norm parameters are the fixed identity).
/// Each draw maps a uniform `[0,1)` double `u` to `(u - 0.5) / fan_in`.
pub fn init_weights(spec: &PyramidSpec, seed: u64) -> Weights {
    let mut rng = SplitMix64::new(seed);
    let encoder = (1..=spec.levels())
        .map(|level| StageWeights {
            kernel: draw_kernel(&mut rng, encoder_kernel_shape(spec, level)),
            norm: NormParams::identity(spec.channels_at(level), DEFAULT_EPSILON),
        })
        .collect();
    // file order is top-down for the decoder
    let mut decoder: Vec<Option<StageWeights>> = (0..spec.levels()).map(|_| None).collect();
    for level in (1..=spec.levels()).rev() {
        decoder[level - 1] = Some(StageWeights {
            kernel: draw_kernel(&mut rng, decoder_kernel_shape(spec, level)),
            norm: NormParams::identity(spec.decoder_channels_at(level - 1), DEFAULT_EPSILON),
        });
    }
    let classifier = draw_kernel(&mut rng, classifier_kernel_shape(spec));
    Weights {
        encoder,
        decoder: decoder.into_iter().map(Option::unwrap).collect(),
        classifier,
        epsilon: DEFAULT_EPSILON,
    }
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32s(w: &mut impl Write, vs: &[f32]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn write_stage(w: &mut impl Write, stage: &StageWeights) -> Result<()> {
    write_f32s(w, stage.kernel.weights())?;
    write_f32s(w, stage.kernel.bias())?;
    write_f32s(w, stage.norm.gamma())?;
    write_f32s(w, stage.norm.beta())?;
    write_f32s(w, stage.norm.mean())?;
    write_f32s(w, stage.norm.variance())?;
    Ok(())
}

pub fn save_weights(weights: &Weights, spec: &PyramidSpec, sink: &mut impl Write) -> Result<()> {
    sink.write_all(MAGIC)?;
    write_u32(sink, VERSION)?;
    sink.write_all(&[spec.mode().code()])?;
    write_u32(sink, spec.levels() as u32)?;
    write_u32(sink, spec.width() as u32)?;
    let h = match spec.mode() {
        Mode::Line => 0,
        Mode::Video => spec.height() as u32,
    };
    write_u32(sink, h)?;
    write_u32(sink, spec.in_channels() as u32)?;
    write_u32(sink, spec.num_classes() as u32)?;
    for &c in spec.encoder_channels() {
        write_u32(sink, c as u32)?;
    }
    for &c in spec.decoder_channel_list() {
        write_u32(sink, c as u32)?;
    }
    sink.write_all(&weights.epsilon.to_le_bytes())?;
    for level in 1..=spec.levels() {
        write_stage(sink, weights.encoder(level))?;
    }
    for level in (1..=spec.levels()).rev() {
        write_stage(sink, weights.decoder(level))?;
    }
    write_f32s(sink, weights.classifier.weights())?;
    write_f32s(sink, weights.classifier.bias())?;
    Ok(())
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated weight file while reading {what}: {e}")))
}

fn read_u32(r: &mut impl Read, what: &str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, what)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; n * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn read_kernel(
    r: &mut impl Read,
    shape: (usize, usize, usize, usize, usize),
    what: &str,
) -> Result<ConvKernel> {
    let (out_ch, in_ch, tt, th, tw) = shape;
    let weights = read_f32s(r, out_ch * in_ch * tt * th * tw, what)?;
    let bias = read_f32s(r, out_ch, what)?;
    ConvKernel::new(out_ch, in_ch, tt, th, tw, weights, bias)
        .map_err(|e| Error::Format(format!("{what}: {e}")))
}

fn read_stage(
    r: &mut impl Read,
    shape: (usize, usize, usize, usize, usize),
    epsilon: f32,
    what: &str,
) -> Result<StageWeights> {
    let kernel = read_kernel(r, shape, what)?;
    let ch = shape.0;
    let gamma = read_f32s(r, ch, what)?;
    let beta = read_f32s(r, ch, what)?;
    let mean = read_f32s(r, ch, what)?;
    let variance = read_f32s(r, ch, what)?;
    let norm = NormParams::new(gamma, beta, mean, variance, epsilon)
        .map_err(|e| Error::Format(format!("{what}: {e}")))?;
    Ok(StageWeights { kernel, norm })
}

pub fn load_weights(source: &mut impl Read) -> Result<(PyramidSpec, Weights)> {
    let mut magic = [0u8; 4];
    read_exact(source, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected \"SMNW\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let version = read_u32(source, "version")?;
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported weight file version {version}"
        )));
    }
    let mut mode_b = [0u8; 1];
    read_exact(source, &mut mode_b, "mode")?;
    let mode = Mode::from_code(mode_b[0])?;
    let levels = read_u32(source, "levels")? as usize;
    if levels == 0 || levels > 16 {
        return Err(Error::Format(format!("implausible level count {levels}")));
    }
    let width = read_u32(source, "width")? as usize;
    let height_raw = read_u32(source, "height")? as usize;
    let height = match mode {
        Mode::Line => {
            if height_raw != 0 {
                return Err(Error::Format(format!(
                    "LINE weight file must store height 0, got {height_raw}"
                )));
            }
            1
        }
        Mode::Video => height_raw,
    };
    let in_channels = read_u32(source, "in_channels")? as usize;
    let num_classes = read_u32(source, "num_classes")? as usize;
    let channels: Vec<usize> = (0..levels)
        .map(|_| read_u32(source, "channels").map(|v| v as usize))
        .collect::<Result<_>>()?;
    let decoder_channels: Vec<usize> = (0..levels)
        .map(|_| read_u32(source, "decoder_channels").map(|v| v as usize))
        .collect::<Result<_>>()?;
    let epsilon = read_f32s(source, 1, "epsilon")?[0];
    if !(epsilon.is_finite() && epsilon > 0.0) {
        return Err(Error::Format(format!("bad epsilon {epsilon}")));
    }

    let spec = PyramidSpec::new(
        mode,
        levels,
        width,
        height,
        in_channels,
        channels,
        decoder_channels,
        num_classes,
    )
    .map_err(|e| Error::Format(format!("weight file spec invalid: {e}")))?;

    let encoder = (1..=levels)
        .map(|level| {
            read_stage(
                source,
                encoder_kernel_shape(&spec, level),
                epsilon,
                "encoder stage",
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let mut decoder: Vec<Option<StageWeights>> = (0..levels).map(|_| None).collect();
    for level in (1..=levels).rev() {
        decoder[level - 1] = Some(read_stage(
            source,
            decoder_kernel_shape(&spec, level),
            epsilon,
            "decoder stage",
        )?);
    }
    let classifier = read_kernel(source, classifier_kernel_shape(&spec), "classifier")?;

    // must be at EOF now
    let mut probe = [0u8; 1];
    match source.read(&mut probe) {
        Ok(0) => {}
        Ok(_) => {
            return Err(Error::Format("trailing bytes after weight data".into()));
        }
        Err(e) => return Err(e.into()),
    }

    Ok((
        spec,
        Weights {
            encoder,
            decoder: decoder.into_iter().map(Option::unwrap).collect(),
            classifier,
            epsilon,
        },
    ))
}
