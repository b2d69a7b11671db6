//! Planar frames with normalized `[0, 1]` samples.
//!
//! Samples are stored channel-major: `data[(c * height + y) * width + x]`.

use crate::error::{Error, Result};

/// A single planar image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Frame {
    /// All-zero frame.
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f32) -> Result<Self> {
        check_shape(width, height, channels)?;
        Ok(Self { width, height, channels, data: vec![value; width * height * channels] })
    }

    pub fn from_data(width: usize, height: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_shape(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::InvalidFrame(format!(
                "expected {} samples for {}x{}x{}, got {}",
                width * height * channels,
                width,
                height,
                channels,
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame(format!("non-finite sample {v}")));
        }
        Ok(Self { width, height, channels, data })
    }

    /// Builds a frame from a closure `f(channel, x, y)`.
    pub fn from_fn(width: usize, height: usize, channels: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        check_shape(width, height, channels)?;
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, x, y));
                }
            }
        }
        Self::from_data(width, height, channels, data)
    }

    /// Converts 8-bit planar samples.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        let data = bytes.iter().map(|&b| b as f32 / 255.0).collect();
        Self::from_data(width, height, channels, data)
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn plane(&self, c: usize) -> &[f32] {
        let n = self.pixels();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn plane_mut(&mut self, c: usize) -> &mut [f32] {
        let n = self.pixels();
        &mut self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f32) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn ensure_same_shape(&self, other: &Frame) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::DimensionMismatch(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )))
        }
    }

    /// Luma plane; BT.601 weights for three-channel frames.
    pub fn luma(&self) -> Vec<f32> {
        match self.channels {
            3 => {
                let (r, g, b) = (self.plane(0), self.plane(1), self.plane(2));
                r.iter().zip(g).zip(b).map(|((&r, &g), &b)| 0.299 * r + 0.587 * g + 0.114 * b).collect()
            }
            _ => self.plane(0).to_vec(),
        }
    }

    pub fn clamp_in_place(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    pub fn clamped(mut self) -> Self {
        self.clamp_in_place();
        self
    }

    /// 8-bit samples, round-half-away-from-zero.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
    }

    /// CRC-32 over the little-endian sample bytes and the shape.
    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        h.update(&(self.width as u32).to_le_bytes());
        h.update(&(self.height as u32).to_le_bytes());
        h.update(&(self.channels as u32).to_le_bytes());
        for v in &self.data {
            h.update(&v.to_le_bytes());
        }
        h.finalize()
    }

    /// Edge-replicating pad to `(width, height)`.
    pub fn pad_to(&self, width: usize, height: usize) -> Result<Frame> {
        if width < self.width || height < self.height {
            return Err(Error::DimensionMismatch(format!("cannot pad {}x{} to {}x{}", self.width, self.height, width, height)));
        }
        Frame::from_fn(width, height, self.channels, |c, x, y| self.get(c, x.min(self.width - 1), y.min(self.height - 1)))
    }

    /// Top-left crop.
    pub fn crop(&self, width: usize, height: usize) -> Result<Frame> {
        if width > self.width || height > self.height || width == 0 || height == 0 {
            return Err(Error::DimensionMismatch(format!("cannot crop {}x{} to {}x{}", self.width, self.height, width, height)));
        }
        Frame::from_fn(width, height, self.channels, |c, x, y| self.get(c, x, y))
    }
}

fn check_shape(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidFrame(format!("empty frame {width}x{height}")));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::InvalidFrame(format!("unsupported channel count {channels}")));
    }
    Ok(())
}

/// Ordered frames sharing one shape.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames.first().ok_or(Error::EmptySequence)?;
        for f in &frames[1..] {
            first.ensure_same_shape(f)?;
        }
        Ok(Self { frames })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    /// Always false; kept for API symmetry with collections.
    #[inline]
    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    pub fn channels(&self) -> usize {
        self.frames[0].channels()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn into_frames(self) -> Vec<Frame> {
        self.frames
    }

    /// Zero-based access.
    pub fn frame(&self, i: usize) -> &Frame {
        &self.frames[i]
    }

    /// One-based access matching schedule indices.
    pub fn at(&self, index: usize) -> &Frame {
        &self.frames[index - 1]
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Frame> {
        self.frames.iter()
    }

    pub fn ensure_same_shape(&self, other: &FrameSequence) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::DimensionMismatch(format!("sequence lengths {} vs {}", self.len(), other.len())));
        }
        self.frames[0].ensure_same_shape(&other.frames[0])
    }

    pub fn checksum(&self) -> u32 {
        let mut h = crc32fast::Hasher::new();
        for f in &self.frames {
            h.update(&f.checksum().to_le_bytes());
        }
        h.finalize()
    }
}

impl<'a> IntoIterator for &'a FrameSequence {
    type Item = &'a Frame;
    type IntoIter = std::slice::Iter<'a, Frame>;

    fn into_iter(self) -> Self::IntoIter {
        self.frames.iter()
    }
}
