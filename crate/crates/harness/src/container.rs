//! `SIT1` container: a checksummed header, one framed record per coded
//! frame, and a trailer. All integers are little-endian.
//!
//! ```text
//! header   "SIT1" | u16 version | u32 frames | u32 coded_frames
//!          | u32 width | u32 height | u32 display_width | u32 display_height
//!          | u8 channels | u8 mv_interval | u32 gop_length
//!          | u32 cfg_digest | u32 cfg_len | cfg_len bytes of key = value text
//!          | u32 gop_count | per GOP: u32 length | length type bytes
//!          | u32 CRC-32 of all preceding header bytes
//! record   u32 frame index (1-based, over coded frames) | u8 frame type
//!          | u8 kind (0 backbone, 1 MV) | u32 payload length
//!          | u32 CRC-32 of the payload | payload
//! trailer  u32 record count | u32 CRC-32 of every preceding byte
//! ```
//!
//! `width`/`height` are the coded (padded) dimensions; the display values are
//! the crop applied after decoding. Frame types use `I = 0, P = 1, MV = 2`.

use sit_core::bytes::{Reader, Writer};
use sit_core::{CodecConfig, FrameType};

use crate::error::{HarnessError, Result};

pub const MAGIC: &[u8; 4] = b"SIT1";
pub const VERSION: u16 = 1;
/// Bytes of framing around every record payload.
pub const RECORD_FRAMING_BYTES: usize = 14;
pub const TRAILER_BYTES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Backbone = 0,
    Mv = 1,
}

impl PayloadKind {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Self::Backbone),
            1 => Some(Self::Mv),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamHeader {
    /// Frames in the source video.
    pub frames: u32,
    /// Frames actually coded, including temporal padding of the last GOP.
    pub coded_frames: u32,
    pub width: u32,
    pub height: u32,
    pub display_width: u32,
    pub display_height: u32,
    pub channels: u8,
    pub mv_interval: u8,
    pub gop_length: u32,
    /// Bitstream-relevant configuration as `key = value` lines.
    pub cfg_text: String,
    /// Frame types of each GOP in coding order.
    pub gops: Vec<Vec<FrameType>>,
}

impl StreamHeader {
    pub fn cfg_digest(&self) -> u32 {
        crc32fast::hash(self.cfg_text.as_bytes())
    }

    pub fn config(&self) -> Result<CodecConfig> {
        Ok(CodecConfig::from_kv_str(&self.cfg_text)?)
    }

    fn write(&self, w: &mut Writer) {
        w.bytes(MAGIC)
            .u16(VERSION)
            .u32(self.frames)
            .u32(self.coded_frames)
            .u32(self.width)
            .u32(self.height)
            .u32(self.display_width)
            .u32(self.display_height)
            .u8(self.channels)
            .u8(self.mv_interval)
            .u32(self.gop_length)
            .u32(self.cfg_digest())
            .u32(self.cfg_text.len() as u32)
            .bytes(self.cfg_text.as_bytes())
            .u32(self.gops.len() as u32);
        for g in &self.gops {
            w.u32(g.len() as u32);
            for t in g {
                w.u8(t.code());
            }
        }
    }

    fn read(r: &mut Reader) -> Result<Self> {
        if r.take(4)? != MAGIC {
            return Err(HarnessError::Container("bad magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(HarnessError::Version(version));
        }
        let frames = r.u32()?;
        let coded_frames = r.u32()?;
        let width = r.u32()?;
        let height = r.u32()?;
        let display_width = r.u32()?;
        let display_height = r.u32()?;
        let channels = r.u8()?;
        let mv_interval = r.u8()?;
        let gop_length = r.u32()?;
        let digest = r.u32()?;
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?)
            .map_err(|_| HarnessError::Container("configuration is not UTF-8".into()))?
            .to_owned();
        if crc32fast::hash(cfg_text.as_bytes()) != digest {
            return Err(HarnessError::StreamCrc("configuration digest"));
        }
        let gop_count = r.u32()? as usize;
        if gop_count > r.remaining() {
            return Err(HarnessError::Container(format!("{gop_count} GOPs announced")));
        }
        let mut gops = Vec::with_capacity(gop_count);
        for _ in 0..gop_count {
            let len = r.u32()? as usize;
            let types = r
                .take(len)?
                .iter()
                .map(|&c| FrameType::from_code(c).ok_or_else(|| HarnessError::Container(format!("frame type code {c}"))))
                .collect::<Result<Vec<_>>>()?;
            gops.push(types);
        }
        let h = Self {
            frames,
            coded_frames,
            width,
            height,
            display_width,
            display_height,
            channels,
            mv_interval,
            gop_length,
            cfg_text,
            gops,
        };
        h.check()?;
        Ok(h)
    }

    fn check(&self) -> Result<()> {
        let total: usize = self.gops.iter().map(Vec::len).sum();
        if total != self.coded_frames as usize || self.frames > self.coded_frames || self.frames == 0 {
            return Err(HarnessError::Container(format!(
                "{} frames, {} coded, GOPs cover {total}",
                self.frames, self.coded_frames
            )));
        }
        if self.display_width > self.width
            || self.display_height > self.height
            || self.display_width == 0
            || self.display_height == 0
        {
            return Err(HarnessError::Container("display size exceeds coded size".into()));
        }
        if !matches!(self.channels, 1 | 3) {
            return Err(HarnessError::Container(format!("{} channels", self.channels)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    /// 1-based over all coded frames.
    pub index: u32,
    pub frame_type: FrameType,
    pub kind: PayloadKind,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub header: StreamHeader,
    pub records: Vec<Record>,
}

impl Container {
    /// Serialized header length in bytes, including its CRC.
    pub fn header_len(&self) -> usize {
        let mut w = Writer::new();
        self.header.write(&mut w);
        w.len() + 4
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.header.write(&mut w);
        let header = w.finish();
        let mut out = header.clone();
        out.extend_from_slice(&crc32fast::hash(&header).to_le_bytes());
        let mut w = Writer::new();
        w.bytes(&out);
        for rec in &self.records {
            w.u32(rec.index)
                .u8(rec.frame_type.code())
                .u8(rec.kind as u8)
                .u32(rec.payload.len() as u32)
                .u32(crc32fast::hash(&rec.payload))
                .bytes(&rec.payload);
        }
        w.u32(self.records.len() as u32);
        let mut out = w.finish();
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let header = StreamHeader::read(&mut r)?;
        let header_end = r.position();
        let crc = r.u32()?;
        if crc32fast::hash(&bytes[..header_end]) != crc {
            return Err(HarnessError::StreamCrc("header"));
        }
        let mut records = Vec::new();
        while r.remaining() > TRAILER_BYTES {
            let index = r.u32()?;
            let code = r.u8()?;
            let frame_type =
                FrameType::from_code(code).ok_or_else(|| HarnessError::Container(format!("frame {index}: type code {code}")))?;
            let kind_code = r.u8()?;
            let kind = PayloadKind::from_code(kind_code)
                .ok_or_else(|| HarnessError::Container(format!("frame {index}: payload kind {kind_code}")))?;
            let len = r.u32()? as usize;
            let crc = r.u32()?;
            let payload = r.take(len).map_err(|_| HarnessError::Container(format!("record for frame {index} is truncated")))?;
            if crc32fast::hash(payload) != crc {
                return Err(HarnessError::RecordCrc { index });
            }
            records.push(Record { index, frame_type, kind, payload: payload.to_vec() });
        }
        let body_end = r.position();
        let count = r.u32()? as usize;
        let crc = r.u32()?;
        r.expect_end()?;
        if count != records.len() {
            return Err(HarnessError::Container(format!("trailer counts {count} records, found {}", records.len())));
        }
        if crc32fast::hash(&bytes[..body_end + 4]) != crc {
            return Err(HarnessError::StreamCrc("trailer"));
        }
        Ok(Self { header, records })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let cfg = CodecConfig::default();
        Container {
            header: StreamHeader {
                frames: 3,
                coded_frames: 3,
                width: 16,
                height: 8,
                display_width: 15,
                display_height: 8,
                channels: 1,
                mv_interval: 1,
                gop_length: 3,
                cfg_text: cfg.to_stream_kv(),
                gops: vec![vec![FrameType::Mv, FrameType::I, FrameType::Mv]],
            },
            records: vec![
                Record { index: 2, frame_type: FrameType::I, kind: PayloadKind::Backbone, payload: vec![1, 2, 3] },
                Record { index: 1, frame_type: FrameType::Mv, kind: PayloadKind::Mv, payload: vec![] },
                Record { index: 3, frame_type: FrameType::Mv, kind: PayloadKind::Mv, payload: vec![9; 5] },
            ],
        }
    }

    #[test]
    fn round_trip_and_size() {
        let c = sample();
        let bytes = c.to_bytes();
        assert_eq!(Container::from_bytes(&bytes).unwrap(), c);
        let payload: usize = c.records.iter().map(|r| r.payload.len()).sum();
        assert_eq!(bytes.len(), c.header_len() + payload + RECORD_FRAMING_BYTES * 3 + TRAILER_BYTES);
    }

    #[test]
    fn corrupted_record_names_frame() {
        let c = sample();
        let mut bytes = c.to_bytes();
        // last payload byte belongs to frame 3
        let pos = bytes.len() - TRAILER_BYTES - 1;
        bytes[pos] ^= 0x40;
        match Container::from_bytes(&bytes) {
            Err(HarnessError::RecordCrc { index }) => assert_eq!(index, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_checks() {
        let mut bytes = sample().to_bytes();
        bytes[4] = 2;
        assert!(matches!(Container::from_bytes(&bytes), Err(HarnessError::Version(2))));
        let mut bytes = sample().to_bytes();
        bytes[10] ^= 1;
        assert!(Container::from_bytes(&bytes).is_err());
        assert!(Container::from_bytes(b"SIT1").is_err());
        assert!(Container::from_bytes(b"XXXX").is_err());
        let bytes = sample().to_bytes();
        assert!(Container::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
