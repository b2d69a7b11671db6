//! End-to-end encode and decode of whole videos.
//!
//! A video is padded spatially to a multiple of `lcm(block_size, 8)` by edge
//! replication and split into GOPs of `gop_length` frames. A shorter last GOP
//! is padded by repeating its final frame up to the next schedule-compatible
//! length. GOPs are independent and coded in parallel. Within a GOP, records
//! follow the backbone chain and then the MV frames by target index.
//!
//! Refinement runs only on decoded reconstructions and never touches the
//! bitstream.

use rayon::prelude::*;
use sit_core::backbone::{decode_backbone, encode_backbone_sequence, BackbonePayload};
use sit_core::fte::FteWeights;
use sit_core::mv::{decode_mv_group, encode_mv_group, MvPayload};
use sit_core::refine::{refine_k_steps, Predictor, RefineConfig};
use sit_core::schedule::next_compatible_length;
use sit_core::{CodecConfig, Frame, FrameSequence, FrameType, GopSchedule};

use crate::container::{Container, PayloadKind, Record, StreamHeader, RECORD_FRAMING_BYTES, TRAILER_BYTES};
use crate::error::{HarnessError, Result};

/// Spatial alignment for the refiner's 8x8 token patches.
const PATCH_ALIGN: usize = 8;

/// How a video maps onto coded GOPs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    pub gop_lengths: Vec<usize>,
    pub width: usize,
    pub height: usize,
}

impl Layout {
    pub fn coded_frames(&self) -> usize {
        self.gop_lengths.iter().sum()
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

pub fn schedule_for(length: usize, mv_interval: usize) -> Result<GopSchedule> {
    Ok(GopSchedule::for_interval(length, mv_interval)?)
}

pub fn plan_layout(frames: usize, width: usize, height: usize, cfg: &CodecConfig) -> Result<Layout> {
    cfg.validate(false)?;
    if frames == 0 {
        return Err(sit_core::Error::EmptySequence.into());
    }
    if cfg.mv_interval != 0 && !sit_core::schedule::is_compatible(cfg.gop_length, cfg.mv_interval) {
        return Err(sit_core::Error::Config(format!(
            "gop_length {} has no schedule for mv_interval {}",
            cfg.gop_length, cfg.mv_interval
        ))
        .into());
    }
    let align = cfg.block_size / gcd(cfg.block_size, PATCH_ALIGN) * PATCH_ALIGN;
    let up = |v: usize| v.div_ceil(align) * align;
    let mut gop_lengths = vec![cfg.gop_length; frames / cfg.gop_length];
    let rest = frames % cfg.gop_length;
    if rest > 0 {
        gop_lengths.push(match cfg.mv_interval {
            0 => rest,
            m => next_compatible_length(rest, m)?,
        });
    }
    Ok(Layout { gop_lengths, width: up(width), height: up(height) })
}

/// Options for the optional post-decode refinement.
#[derive(Debug, Clone)]
pub struct RefineOptions {
    pub config: RefineConfig,
    pub weights: FteWeights,
    pub predictor: Predictor,
    /// Denoising passes; 1 is the one-step refiner.
    pub steps: usize,
}

impl RefineOptions {
    pub fn new(cfg: &CodecConfig) -> Self {
        Self {
            config: RefineConfig { timestep: cfg.refine_timestep, ..RefineConfig::default() },
            weights: FteWeights::default_kernel(),
            predictor: Predictor::smoothing(),
            steps: 1,
        }
    }
}

/// Bits attributed to one record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRate {
    pub index: u32,
    pub frame_type: FrameType,
    /// Range-coded backbone residual.
    pub residual_bits: u64,
    /// Range-coded motion-compensation flow of P frames.
    pub mc_flow_bits: u64,
    /// Range-coded flow of MV frames.
    pub mv_flow_bits: u64,
    /// Payload fields that are not range-coded symbols.
    pub header_bits: u64,
    /// Record framing in the container.
    pub framing_bits: u64,
}

impl FrameRate {
    pub fn total_bits(&self) -> u64 {
        self.residual_bits + self.mc_flow_bits + self.mv_flow_bits + self.header_bits + self.framing_bits
    }
}

/// Per-frame bit accounting of a container. Everything sums to the file size.
#[derive(Debug, Clone, PartialEq)]
pub struct RateReport {
    pub frames: Vec<FrameRate>,
    pub container_header_bits: u64,
    pub trailer_bits: u64,
    pub display_frames: usize,
    pub display_width: usize,
    pub display_height: usize,
}

impl RateReport {
    pub fn from_container(c: &Container) -> Result<Self> {
        let frames = c
            .records
            .iter()
            .map(|r| {
                let framing_bits = 8 * RECORD_FRAMING_BYTES as u64;
                let bytes_bits = 8 * r.payload.len() as u64;
                let fr = match r.kind {
                    PayloadKind::Backbone => {
                        let p = BackbonePayload::from_bytes(&r.payload)?;
                        FrameRate {
                            index: r.index,
                            frame_type: r.frame_type,
                            residual_bits: p.residual_bits(),
                            mc_flow_bits: p.flow_bits(),
                            mv_flow_bits: 0,
                            header_bits: p.header_bits(),
                            framing_bits,
                        }
                    }
                    PayloadKind::Mv => {
                        let p = MvPayload::from_bytes(&r.payload)?;
                        FrameRate {
                            index: r.index,
                            frame_type: r.frame_type,
                            residual_bits: 0,
                            mc_flow_bits: 0,
                            mv_flow_bits: p.flow_bits(),
                            header_bits: p.total_bits() - p.flow_bits(),
                            framing_bits,
                        }
                    }
                };
                debug_assert_eq!(fr.total_bits() - framing_bits, bytes_bits);
                Ok(fr)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            frames,
            container_header_bits: 8 * c.header_len() as u64,
            trailer_bits: 8 * TRAILER_BYTES as u64,
            display_frames: c.header.frames as usize,
            display_width: c.header.display_width as usize,
            display_height: c.header.display_height as usize,
        })
    }

    fn sum(&self, f: impl Fn(&FrameRate) -> u64) -> u64 {
        self.frames.iter().map(f).sum()
    }

    pub fn residual_bits(&self) -> u64 {
        self.sum(|f| f.residual_bits)
    }

    pub fn mc_flow_bits(&self) -> u64 {
        self.sum(|f| f.mc_flow_bits)
    }

    pub fn mv_flow_bits(&self) -> u64 {
        self.sum(|f| f.mv_flow_bits)
    }

    pub fn payload_header_bits(&self) -> u64 {
        self.sum(|f| f.header_bits)
    }

    /// Record framing plus the container header and trailer.
    pub fn framing_bits(&self) -> u64 {
        self.sum(|f| f.framing_bits) + self.container_header_bits + self.trailer_bits
    }

    /// Range-coded symbols only: residuals, motion-compensation flow and MV flow.
    pub fn rate_term_bits(&self) -> u64 {
        self.residual_bits() + self.mc_flow_bits() + self.mv_flow_bits()
    }

    /// Every bit in the file.
    pub fn total_bits(&self) -> u64 {
        self.rate_term_bits() + self.payload_header_bits() + self.framing_bits()
    }

    /// Total bits over the displayed `T * H * W`.
    pub fn bpp(&self) -> f64 {
        sit_core::metrics::bpp(self.total_bits(), self.display_frames, self.display_height, self.display_width)
    }

    pub fn backbone_count(&self) -> usize {
        self.frames.iter().filter(|f| f.frame_type.is_backbone()).count()
    }

    pub fn backbone_proportion(&self) -> f64 {
        self.backbone_count() as f64 / self.frames.len().max(1) as f64
    }

    pub const CSV_HEADER: &'static str = "index,type,residual_bits,mc_flow_bits,mv_flow_bits,header_bits,framing_bits,total_bits";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::CSV_HEADER);
        for f in &self.frames {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                f.index,
                f.frame_type,
                f.residual_bits,
                f.mc_flow_bits,
                f.mv_flow_bits,
                f.header_bits,
                f.framing_bits,
                f.total_bits()
            ));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "coded frames {} ({} backbone, {:.1}%)\nresidual {} bits\nmc flow {} bits\nmv flow {} bits\n\
             payload headers {} bits\nframing {} bits\ntotal {} bits ({} bytes), {:.6} bpp\n",
            self.frames.len(),
            self.backbone_count(),
            100.0 * self.backbone_proportion(),
            self.residual_bits(),
            self.mc_flow_bits(),
            self.mv_flow_bits(),
            self.payload_header_bits(),
            self.framing_bits(),
            self.total_bits(),
            self.total_bits() / 8,
            self.bpp()
        )
    }
}

/// One coded GOP: its schedule and reconstructions at coded resolution.
#[derive(Debug, Clone)]
pub struct CodedGop {
    pub schedule: GopSchedule,
    pub recon: FrameSequence,
}

#[derive(Debug, Clone)]
pub struct EncodeOutput {
    pub container: Container,
    pub bytes: Vec<u8>,
    pub report: RateReport,
    pub gops: Vec<CodedGop>,
    /// Encoder-side reconstruction at display size.
    pub x_tilde: FrameSequence,
    /// Refined reconstruction, when refinement was requested.
    pub refined: Option<FrameSequence>,
}

fn pad_video(seq: &FrameSequence, layout: &Layout) -> Result<Vec<Frame>> {
    let mut frames = seq.iter().map(|f| f.pad_to(layout.width, layout.height)).collect::<sit_core::Result<Vec<_>>>()?;
    let last = frames.last().cloned().ok_or(sit_core::Error::EmptySequence)?;
    frames.resize(layout.coded_frames(), last);
    Ok(frames)
}

fn encode_gop(frames: &[Frame], offset: usize, cfg: &CodecConfig) -> Result<(Vec<Record>, CodedGop)> {
    let sched = schedule_for(frames.len(), cfg.mv_interval)?;
    let chain = sched.p_chain();
    let backbone = FrameSequence::new(chain.iter().map(|&i| frames[i - 1].clone()).collect())?;
    let (bb_payloads, bb_recon) = encode_backbone_sequence(&backbone, cfg)?;
    let mut slots: Vec<Option<Frame>> = vec![None; frames.len()];
    for (&i, r) in chain.iter().zip(bb_recon.iter()) {
        slots[i - 1] = Some(r.clone());
    }
    let (mv_payloads, mv_recon) = encode_mv_group(&slots, frames, &sched, cfg)?;
    let mut records = Vec::with_capacity(frames.len());
    for (&i, p) in chain.iter().zip(&bb_payloads) {
        records.push(Record {
            index: (offset + i) as u32,
            frame_type: p.mode,
            kind: PayloadKind::Backbone,
            payload: p.to_bytes(),
        });
    }
    for (p, r) in mv_payloads.iter().zip(mv_recon) {
        records.push(Record {
            index: (offset + p.target_index) as u32,
            frame_type: FrameType::Mv,
            kind: PayloadKind::Mv,
            payload: p.to_bytes(),
        });
        slots[p.target_index - 1] = Some(r);
    }
    let recon = FrameSequence::new(slots.into_iter().map(|s| s.expect("every slot coded")).collect())?;
    Ok((records, CodedGop { schedule: sched, recon }))
}

/// Crops coded GOP reconstructions back to the display size and length.
pub fn assemble(gops: &[FrameSequence], frames: usize, width: usize, height: usize) -> Result<FrameSequence> {
    let out =
        gops.iter().flat_map(|g| g.iter()).take(frames).map(|f| f.crop(width, height)).collect::<sit_core::Result<Vec<_>>>()?;
    Ok(FrameSequence::new(out)?)
}

/// Refines every GOP independently and crops to the display size.
pub fn refine_gops(gops: &[CodedGop], frames: usize, width: usize, height: usize, opts: &RefineOptions) -> Result<FrameSequence> {
    let refined = gops
        .par_iter()
        .map(|g| {
            refine_k_steps(&g.recon, &g.schedule, &opts.config, &opts.weights, &opts.predictor, opts.steps)
                .map_err(HarnessError::from)
        })
        .collect::<Result<Vec<_>>>()?;
    assemble(&refined, frames, width, height)
}

pub fn encode(seq: &FrameSequence, cfg: &CodecConfig) -> Result<EncodeOutput> {
    encode_with(seq, cfg, None)
}

/// Encodes `seq`. Refinement, when requested, runs on the encoder-side
/// reconstruction after the bitstream is complete.
pub fn encode_with(seq: &FrameSequence, cfg: &CodecConfig, refine: Option<&RefineOptions>) -> Result<EncodeOutput> {
    let layout = plan_layout(seq.len(), seq.width(), seq.height(), cfg)?;
    let frames = pad_video(seq, &layout)?;
    let mut offsets = Vec::with_capacity(layout.gop_lengths.len());
    let mut acc = 0;
    for &l in &layout.gop_lengths {
        offsets.push(acc);
        acc += l;
    }
    let coded = layout
        .gop_lengths
        .par_iter()
        .zip(&offsets)
        .map(|(&len, &off)| encode_gop(&frames[off..off + len], off, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(frames.len());
    let mut gops = Vec::with_capacity(coded.len());
    for (r, g) in coded {
        records.extend(r);
        gops.push(g);
    }
    let header = StreamHeader {
        frames: seq.len() as u32,
        coded_frames: layout.coded_frames() as u32,
        width: layout.width as u32,
        height: layout.height as u32,
        display_width: seq.width() as u32,
        display_height: seq.height() as u32,
        channels: seq.channels() as u8,
        mv_interval: cfg.mv_interval as u8,
        gop_length: cfg.gop_length as u32,
        cfg_text: cfg.to_stream_kv(),
        gops: gops.iter().map(|g| g.schedule.types().to_vec()).collect(),
    };
    let container = Container { header, records };
    let bytes = container.to_bytes();
    let report = RateReport::from_container(&container)?;
    debug_assert_eq!(report.total_bits(), 8 * bytes.len() as u64);
    let recons: Vec<FrameSequence> = gops.iter().map(|g| g.recon.clone()).collect();
    let x_tilde = assemble(&recons, seq.len(), seq.width(), seq.height())?;
    let refined = match refine {
        Some(opts) => Some(refine_gops(&gops, seq.len(), seq.width(), seq.height(), opts)?),
        None => None,
    };
    Ok(EncodeOutput { container, bytes, report, gops, x_tilde, refined })
}

#[derive(Debug, Clone)]
pub struct Decoded {
    pub header: StreamHeader,
    pub cfg: CodecConfig,
    pub gops: Vec<CodedGop>,
}

impl Decoded {
    /// Unrefined reconstruction at display size.
    pub fn x_tilde(&self) -> Result<FrameSequence> {
        let recons: Vec<FrameSequence> = self.gops.iter().map(|g| g.recon.clone()).collect();
        let h = &self.header;
        assemble(&recons, h.frames as usize, h.display_width as usize, h.display_height as usize)
    }

    pub fn refined(&self, opts: &RefineOptions) -> Result<FrameSequence> {
        let h = &self.header;
        refine_gops(&self.gops, h.frames as usize, h.display_width as usize, h.display_height as usize, opts)
    }
}

fn decode_gop(
    header: &StreamHeader,
    cfg: &CodecConfig,
    types: &[FrameType],
    records: &[Record],
    offset: usize,
) -> Result<CodedGop> {
    let sched = schedule_for(types.len(), header.mv_interval as usize)?;
    if sched.types() != types {
        return Err(HarnessError::Container(format!("GOP at frame {} disagrees with its schedule", offset + 1)));
    }
    let (w, h) = (header.width as usize, header.height as usize);
    let local = |r: &Record| r.index as usize - offset;
    for r in records {
        let i = r.index as usize;
        if i <= offset || i > offset + types.len() || sched.frame_type(local(r)) != r.frame_type {
            return Err(HarnessError::Container(format!("record for frame {i} out of place")));
        }
    }
    let chain = sched.p_chain();
    let (bb, mv) = records.split_at(chain.len());
    let mut slots: Vec<Option<Frame>> = vec![None; types.len()];
    let mut prev: Option<Frame> = None;
    for (&i, r) in chain.iter().zip(bb) {
        if r.kind != PayloadKind::Backbone || local(r) != i {
            return Err(HarnessError::Container(format!("expected backbone record for frame {}", offset + i)));
        }
        let p = BackbonePayload::from_bytes(&r.payload)?;
        let f = decode_backbone(&p, prev.as_ref(), w, h, cfg)?;
        if f.channels() != header.channels as usize {
            return Err(HarnessError::Container(format!("frame {} has {} channels", r.index, f.channels())));
        }
        slots[i - 1] = Some(f.clone());
        prev = Some(f);
    }
    let mv_payloads = mv
        .iter()
        .map(|r| {
            if r.kind != PayloadKind::Mv {
                return Err(HarnessError::Container(format!("expected MV record for frame {}", r.index)));
            }
            let p = MvPayload::from_bytes(&r.payload)?;
            if p.target_index != local(r) {
                return Err(HarnessError::Container(format!("MV record for frame {} names target {}", r.index, p.target_index)));
            }
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    let recon = FrameSequence::new(decode_mv_group(&slots, &mv_payloads, &sched)?)?;
    Ok(CodedGop { schedule: sched, recon })
}

pub fn decode_container(c: &Container) -> Result<Decoded> {
    let header = c.header.clone();
    let cfg = header.config()?;
    if cfg.mv_interval != header.mv_interval as usize || cfg.gop_length != header.gop_length as usize {
        return Err(HarnessError::Container("header disagrees with its configuration".into()));
    }
    if c.records.len() != header.coded_frames as usize {
        return Err(HarnessError::Container(format!("{} records for {} coded frames", c.records.len(), header.coded_frames)));
    }
    let mut jobs = Vec::with_capacity(header.gops.len());
    let mut off = 0;
    for types in &header.gops {
        jobs.push((types.as_slice(), &c.records[off..off + types.len()], off));
        off += types.len();
    }
    let gops = jobs
        .par_iter()
        .map(|&(types, records, off)| decode_gop(&header, &cfg, types, records, off))
        .collect::<Result<Vec<_>>>()?;
    Ok(Decoded { header, cfg, gops })
}

pub fn decode(bytes: &[u8]) -> Result<Decoded> {
    decode_container(&Container::from_bytes(bytes)?)
}
