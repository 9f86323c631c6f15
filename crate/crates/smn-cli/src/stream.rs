//! SMNS stream files and SMNL label files.
//!
//! SMNS (input frames), little-endian throughout:
//!
//! ```text
//! magic "SMNS", u32 version=1, u8 mode (1=LINE, 2=VIDEO),
//! u8 dtype (1=u8, 2=f32), u32 width, u32 height (0 for LINE),
//! u32 channels, u64 frame_count (0 = unbounded/pipe),
//! then per frame: channel-major row-major payload
//! ```
//!
//! u8 payloads map to reals as `v / 255.0` on read and are quantized as
//! `round(clamp(v, 0, 1) * 255)` on write.
//!
//! SMNL (labels): `magic "SMNL", u32 version=1, u8 mode, u32 width,
//! u32 height (0 for LINE)`, then one record per ready frame: `u64
//! frame_index` followed by row-major u8 labels. Warming frames are simply
//! absent.

use std::io::{Read, Write};

use smn_core::{Error, FeatureMap, LabelMap, Mode, Result};

pub const STREAM_MAGIC: &[u8; 4] = b"SMNS";
pub const LABEL_MAGIC: &[u8; 4] = b"SMNL";
pub const STREAM_VERSION: u32 = 1;
pub const LABEL_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dtype {
    U8,
    F32,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            1 => Ok(Dtype::U8),
            2 => Ok(Dtype::F32),
            other => Err(Error::Format(format!("unknown dtype code {other}"))),
        }
    }

    pub fn bytes_per_value(self) -> usize {
        match self {
            Dtype::U8 => 1,
            Dtype::F32 => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub mode: Mode,
    pub dtype: Dtype,
    pub width: u32,
    /// 0 for LINE.
    pub height: u32,
    pub channels: u32,
    /// 0 means unbounded (read until EOF).
    pub frame_count: u64,
}

impl StreamHeader {
    pub fn frame_height(&self) -> usize {
        match self.mode {
            Mode::Line => 1,
            Mode::Video => self.height as usize,
        }
    }

    pub fn values_per_frame(&self) -> usize {
        self.channels as usize * self.frame_height() * self.width as usize
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Format("stream width must be positive".into()));
        }
        match self.mode {
            Mode::Line => {
                if self.height != 0 {
                    return Err(Error::Format(format!(
                        "LINE stream must store height 0, got {}",
                        self.height
                    )));
                }
            }
            Mode::Video => {
                if self.height == 0 {
                    return Err(Error::Format("VIDEO stream needs a positive height".into()));
                }
            }
        }
        if self.channels == 0 {
            return Err(Error::Format("stream channels must be positive".into()));
        }
        Ok(())
    }

    pub fn write_to(&self, sink: &mut impl Write) -> Result<()> {
        self.validate()?;
        sink.write_all(STREAM_MAGIC)?;
        sink.write_all(&STREAM_VERSION.to_le_bytes())?;
        sink.write_all(&[self.mode.code(), self.dtype.code()])?;
        sink.write_all(&self.width.to_le_bytes())?;
        sink.write_all(&self.height.to_le_bytes())?;
        sink.write_all(&self.channels.to_le_bytes())?;
        sink.write_all(&self.frame_count.to_le_bytes())?;
        Ok(())
    }

    pub fn read_from(src: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        src.read_exact(&mut magic)
            .map_err(|e| Error::Format(format!("truncated stream header: {e}")))?;
        if &magic != STREAM_MAGIC {
            return Err(Error::Format(format!(
                "bad stream magic {:?}, expected \"SMNS\"",
                String::from_utf8_lossy(&magic)
            )));
        }
        let mut b4 = [0u8; 4];
        src.read_exact(&mut b4)
            .map_err(|e| Error::Format(format!("truncated stream header: {e}")))?;
        let version = u32::from_le_bytes(b4);
        if version != STREAM_VERSION {
            return Err(Error::Format(format!(
                "unsupported stream version {version}"
            )));
        }
        let mut b2 = [0u8; 2];
        src.read_exact(&mut b2)
            .map_err(|e| Error::Format(format!("truncated stream header: {e}")))?;
        let mode = Mode::from_code(b2[0])?;
        let dtype = Dtype::from_code(b2[1])?;
        let read_u32 = |src: &mut dyn Read| -> Result<u32> {
            let mut b = [0u8; 4];
            src.read_exact(&mut b)
                .map_err(|e| Error::Format(format!("truncated stream header: {e}")))?;
            Ok(u32::from_le_bytes(b))
        };
        let width = read_u32(src)?;
        let height = read_u32(src)?;
        let channels = read_u32(src)?;
        let mut b8 = [0u8; 8];
        src.read_exact(&mut b8)
            .map_err(|e| Error::Format(format!("truncated stream header: {e}")))?;
        let frame_count = u64::from_le_bytes(b8);
        let header = Self {
            mode,
            dtype,
            width,
            height,
            channels,
            frame_count,
        };
        header.validate()?;
        Ok(header)
    }
}

pub struct StreamReader<R: Read> {
    pub header: StreamHeader,
    src: R,
    next_index: u64,
    buf: Vec<u8>,
}

impl<R: Read> StreamReader<R> {
    pub fn new(mut src: R) -> Result<Self> {
        let header = StreamHeader::read_from(&mut src)?;
        let buf = vec![0u8; header.values_per_frame() * header.dtype.bytes_per_value()];
        Ok(Self {
            header,
            src,
            next_index: 0,
            buf,
        })
    }

    pub fn frames_read(&self) -> u64 {
        self.next_index
    }

    /// Next frame, or `None` at a clean end of stream. A frame cut short
    /// mid-payload is an error naming the frame index.
    pub fn next_frame(&mut self) -> Result<Option<FeatureMap>> {
        if self.header.frame_count > 0 && self.next_index >= self.header.frame_count {
            return Ok(None);
        }
        let mut filled = 0usize;
        while filled < self.buf.len() {
            let n = self.src.read(&mut self.buf[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled == 0 {
            if self.header.frame_count > 0 {
                return Err(Error::Format(format!(
                    "stream truncated at frame {} of {}",
                    self.next_index, self.header.frame_count
                )));
            }
            return Ok(None);
        }
        if filled < self.buf.len() {
            return Err(Error::Format(format!(
                "frame {} truncated: got {} of {} payload bytes",
                self.next_index,
                filled,
                self.buf.len()
            )));
        }
        let data: Vec<f32> = match self.header.dtype {
            Dtype::U8 => self.buf.iter().map(|&b| b as f32 / 255.0).collect(),
            Dtype::F32 => self
                .buf
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        };
        let frame = FeatureMap::from_vec(
            self.header.mode,
            self.header.channels as usize,
            self.header.frame_height(),
            self.header.width as usize,
            data,
        )
        .map_err(|e| Error::Format(format!("frame {}: {e}", self.next_index)))?;
        self.next_index += 1;
        Ok(Some(frame))
    }
}

pub struct StreamWriter<W: Write> {
    header: StreamHeader,
    sink: W,
    written: u64,
}

impl<W: Write> StreamWriter<W> {
    pub fn new(mut sink: W, header: StreamHeader) -> Result<Self> {
        header.write_to(&mut sink)?;
        Ok(Self {
            header,
            sink,
            written: 0,
        })
    }

    pub fn write_frame(&mut self, frame: &FeatureMap) -> Result<()> {
        let expected = (
            self.header.channels as usize,
            self.header.frame_height(),
            self.header.width as usize,
        );
        if frame.mode() != self.header.mode || frame.shape() != expected {
            return Err(Error::ShapeMismatch {
                context: "stream writer frame",
                expected,
                got: frame.shape(),
            });
        }
        match self.header.dtype {
            Dtype::U8 => {
                let bytes: Vec<u8> = frame
                    .data()
                    .iter()
                    .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                    .collect();
                self.sink.write_all(&bytes)?;
            }
            Dtype::F32 => {
                for v in frame.data() {
                    self.sink.write_all(&v.to_le_bytes())?;
                }
            }
        }
        self.written += 1;
        Ok(())
    }

    pub fn frames_written(&self) -> u64 {
        self.written
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

pub struct LabelWriter<W: Write> {
    sink: W,
    height: usize,
    width: usize,
    records: u64,
}

impl<W: Write> LabelWriter<W> {
    pub fn new(mut sink: W, mode: Mode, width: usize, height: usize) -> Result<Self> {
        sink.write_all(LABEL_MAGIC)?;
        sink.write_all(&LABEL_VERSION.to_le_bytes())?;
        sink.write_all(&[mode.code()])?;
        sink.write_all(&(width as u32).to_le_bytes())?;
        let h = match mode {
            Mode::Line => 0u32,
            Mode::Video => height as u32,
        };
        sink.write_all(&h.to_le_bytes())?;
        Ok(Self {
            sink,
            height: if h == 0 { 1 } else { h as usize },
            width,
            records: 0,
        })
    }

    pub fn write(&mut self, frame_index: u64, labels: &LabelMap) -> Result<()> {
        if (labels.height(), labels.width()) != (self.height, self.width) {
            return Err(Error::ShapeMismatch {
                context: "label writer record",
                expected: (1, self.height, self.width),
                got: (1, labels.height(), labels.width()),
            });
        }
        self.sink.write_all(&frame_index.to_le_bytes())?;
        self.sink.write_all(labels.labels())?;
        self.records += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    pub fn finish(mut self) -> Result<W> {
        self.sink.flush()?;
        Ok(self.sink)
    }
}

/// One SMNL record: `(frame_index, row-major labels)`.
pub type LabelRecord = (u64, Vec<u8>);

/// Reads a whole SMNL file: `(mode, width, height, records)`.
pub fn read_label_file(src: &mut impl Read) -> Result<(Mode, usize, usize, Vec<LabelRecord>)> {
    let mut magic = [0u8; 4];
    src.read_exact(&mut magic)
        .map_err(|e| Error::Format(format!("truncated label header: {e}")))?;
    if &magic != LABEL_MAGIC {
        return Err(Error::Format(format!(
            "bad label magic {:?}, expected \"SMNL\"",
            String::from_utf8_lossy(&magic)
        )));
    }
    let mut b4 = [0u8; 4];
    src.read_exact(&mut b4)
        .map_err(|e| Error::Format(format!("truncated label header: {e}")))?;
    let version = u32::from_le_bytes(b4);
    if version != LABEL_VERSION {
        return Err(Error::Format(format!(
            "unsupported label version {version}"
        )));
    }
    let mut b1 = [0u8; 1];
    src.read_exact(&mut b1)
        .map_err(|e| Error::Format(format!("truncated label header: {e}")))?;
    let mode = Mode::from_code(b1[0])?;
    src.read_exact(&mut b4)
        .map_err(|e| Error::Format(format!("truncated label header: {e}")))?;
    let width = u32::from_le_bytes(b4) as usize;
    src.read_exact(&mut b4)
        .map_err(|e| Error::Format(format!("truncated label header: {e}")))?;
    let height_raw = u32::from_le_bytes(b4) as usize;
    let height = if height_raw == 0 { 1 } else { height_raw };
    let cells = width * height;

    let mut records = Vec::new();
    loop {
        let mut idx = [0u8; 8];
        if src.read(&mut idx[..1])? == 0 {
            break;
        }
        src.read_exact(&mut idx[1..])
            .map_err(|e| Error::Format(format!("truncated label record index: {e}")))?;
        let frame_index = u64::from_le_bytes(idx);
        let mut labels = vec![0u8; cells];
        src.read_exact(&mut labels)
            .map_err(|e| Error::Format(format!("truncated labels for frame {frame_index}: {e}")))?;
        records.push((frame_index, labels));
    }
    Ok((mode, width, height, records))
}
