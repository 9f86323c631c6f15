//! Pyramid architecture description and its validation rules.

use crate::{Error, Result};

/// Input dimensionality of the stream: one scanned line per frame, or a full
/// 2D frame per time step.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Line,
    Video,
}

impl Mode {
    /// Wire code shared by the weight and stream file formats.
    pub fn code(self) -> u8 {
        match self {
            Mode::Line => 1,
            Mode::Video => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Mode::Line),
            2 => Ok(Mode::Video),
            other => Err(Error::Format(format!("unknown mode code {other}"))),
        }
    }

    /// Spatial taps along the height axis (VIDEO kernels are 2x2 spatially,
    /// LINE kernels 1x2).
    pub fn taps_h(self) -> usize {
        match self {
            Mode::Line => 1,
            Mode::Video => 2,
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::Line => write!(f, "line"),
            Mode::Video => write!(f, "video"),
        }
    }
}

/// Validated pyramid architecture.
///
/// `levels` encoder stages halve the temporal and spatial extent each; the
/// temporal span is `T = 2^levels`. Channel widths are indexed by level with
/// level 0 meaning the raw input (`channels_at(0) == in_channels`).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PyramidSpec {
    mode: Mode,
    levels: usize,
    width: usize,
    height: usize,
    in_channels: usize,
    channels: Vec<usize>,
    decoder_channels: Vec<usize>,
    num_classes: usize,
}

impl PyramidSpec {
    /// Validates and builds a spec. `height` must be 1 in LINE mode.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        mode: Mode,
        levels: usize,
        width: usize,
        height: usize,
        in_channels: usize,
        channels: Vec<usize>,
        decoder_channels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if levels == 0 {
            return Err(Error::InvalidSpec("level count must be positive".into()));
        }
        if levels > 16 {
            return Err(Error::InvalidSpec(format!(
                "level count {levels} unsupported (T = 2^levels would overflow sane limits)"
            )));
        }
        let t = 1usize << levels;
        if width == 0 || !width.is_multiple_of(t) {
            return Err(Error::InvalidSpec(format!(
                "width {width} must be a positive multiple of 2^levels = {t}"
            )));
        }
        match mode {
            Mode::Line => {
                if height != 1 {
                    return Err(Error::InvalidSpec(format!(
                        "LINE mode has height 1, got {height}"
                    )));
                }
            }
            Mode::Video => {
                if height == 0 || !height.is_multiple_of(t) {
                    return Err(Error::InvalidSpec(format!(
                        "height {height} must be a positive multiple of 2^levels = {t}"
                    )));
                }
            }
        }
        if in_channels == 0 {
            return Err(Error::InvalidSpec("in_channels must be positive".into()));
        }
        if channels.len() != levels || channels.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "need {levels} positive encoder channel widths, got {channels:?}"
            )));
        }
        if decoder_channels.len() != levels || decoder_channels.contains(&0) {
            return Err(Error::InvalidSpec(format!(
                "need {levels} positive decoder channel widths, got {decoder_channels:?}"
            )));
        }
        if num_classes == 0 || num_classes > 256 {
            return Err(Error::InvalidSpec(format!(
                "num_classes must be in 1..=256, got {num_classes}"
            )));
        }
        Ok(Self {
            mode,
            levels,
            width,
            height,
            in_channels,
            channels,
            decoder_channels,
            num_classes,
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Temporal span `T = 2^levels`.
    pub fn frames(&self) -> usize {
        1 << self.levels
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// 1 in LINE mode.
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn encoder_channels(&self) -> &[usize] {
        &self.channels
    }

    pub fn decoder_channel_list(&self) -> &[usize] {
        &self.decoder_channels
    }

    /// Channel width of the level-`level` feature map (level 0 = raw input).
    pub fn channels_at(&self, level: usize) -> usize {
        if level == 0 {
            self.in_channels
        } else {
            self.channels[level - 1]
        }
    }

    /// Channel width of the decoder state entering the level-`level` decode
    /// step; the decode starts from the encoder top, so at `level == levels`
    /// this is the top encoder width.
    pub fn decoder_channels_at(&self, level: usize) -> usize {
        if level == self.levels {
            self.channels_at(self.levels)
        } else {
            self.decoder_channels[level]
        }
    }

    /// Spatial width at `level`: `W / 2^level`.
    pub fn level_width(&self, level: usize) -> usize {
        self.width >> level
    }

    /// Spatial height at `level` (always 1 in LINE mode).
    pub fn level_height(&self, level: usize) -> usize {
        match self.mode {
            Mode::Line => 1,
            Mode::Video => self.height >> level,
        }
    }

    /// Channel-free spatial cell count at `level`.
    pub fn level_cells(&self, level: usize) -> usize {
        self.level_width(level) * self.level_height(level)
    }

    /// Temporal lag of level `level`: `s_level = 2^(level-1)`.
    pub fn lag(&self, level: usize) -> usize {
        debug_assert!(level >= 1);
        1 << (level - 1)
    }

    /// Raw frames a level-`level` front node depends on:
    /// `R_0 = 1`, `R_level = R_{level-1} + 2^level`, so `R_L = 2T - 1`.
    pub fn receptive_field_at(&self, level: usize) -> usize {
        (1 << (level + 1)) - 1
    }

    /// Receptive field of the top level, `2T - 1`.
    pub fn receptive_field(&self) -> usize {
        self.receptive_field_at(self.levels)
    }

    /// Zero-based frame index of the first ready output.
    pub fn first_ready_frame(&self) -> u64 {
        (self.receptive_field() - 1) as u64
    }
}
