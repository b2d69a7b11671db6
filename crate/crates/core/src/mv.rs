//! Flow-only coding of MV frames, and the flow codec shared with P-frame
//! motion compensation.
//!
//! A flow field is average-pooled by the downsample factor, quantized in
//! pixel units and DPCM-coded with a median predictor over the left, upper
//! and upper-right cells. Residual symbols use a Laplacian model whose
//! maximum-likelihood scale is signaled in 8.8 fixed point; a signaled scale
//! of zero means every residual is zero and no coded bytes follow.

use rayon::prelude::*;

use crate::bytes::{Reader, Writer};
use crate::config::CodecConfig;
use crate::entropy::{BitPayload, RangeDecoder, RangeEncoder, SymbolModel};
use crate::error::{Error, Result};
use crate::flow::{estimate_flow, max_pyramid_levels, warp, FlowField};
use crate::frame::Frame;
use crate::plane::sample_bilinear;
use crate::schedule::GopSchedule;

/// Header bytes of a serialized [`FlowPayload`].
pub const FLOW_HEADER_BYTES: usize = 11;
/// Header bytes of a serialized [`MvPayload`] in front of its flow payload.
pub const MV_HEADER_BYTES: usize = 8;
/// Encoder deadzone, in quantizer steps, within which a cell takes its
/// predicted value.
const SNAP: f32 = 0.75;
/// Motion Lagrangian as a multiple of the squared inter quantizer step.
const LAMBDA_FACTOR: f64 = 0.134;

/// A coded, downsampled flow field.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowPayload {
    pub downsample: usize,
    pub step: f32,
    /// Laplacian scale of the DPCM residuals in 8.8 fixed point; 0 flags an
    /// all-zero field.
    pub scale_q: u16,
    pub data: BitPayload,
}

impl FlowPayload {
    /// `u8` downsample, `f32` step, `u16` scale, `u32` length, coded bytes.
    pub fn write(&self, w: &mut Writer) {
        w.u8(self.downsample.trailing_zeros() as u8)
            .f32(self.step)
            .u16(self.scale_q)
            .u32(self.data.bytes.len() as u32)
            .bytes(&self.data.bytes);
    }

    /// Parses a payload written by [`Self::write`]. The symbol count is not
    /// stored and reads back as 0.
    pub fn read(r: &mut Reader) -> Result<Self> {
        let log = r.u8()?;
        if log > 7 {
            return Err(Error::Malformed(format!("flow downsample 2^{log} out of range")));
        }
        let step = r.f32()?;
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Malformed(format!("flow step {step}")));
        }
        let scale_q = r.u16()?;
        let len = r.u32()? as usize;
        let bytes = r.take(len)?.to_vec();
        if (scale_q == 0) != bytes.is_empty() {
            return Err(Error::Malformed("flow scale flag disagrees with payload length".into()));
        }
        Ok(Self { downsample: 1 << log, step, scale_q, data: BitPayload::from_bytes(bytes, 0) })
    }

    /// Bits on the wire, header included.
    pub fn total_bits(&self) -> u64 {
        8 * FLOW_HEADER_BYTES as u64 + self.data.exact_bits
    }
}

fn median3(a: i32, b: i32, c: i32) -> i32 {
    a.max(b).min(a.min(b).max(c))
}

/// Prediction for cell `(x, y)` from already decoded cells of `q`.
fn predict(q: &[i32], w: usize, x: usize, y: usize) -> i32 {
    match (x, y) {
        (0, 0) => 0,
        (_, 0) => q[x - 1],
        (0, _) => q[(y - 1) * w],
        _ => {
            let left = q[y * w + x - 1];
            let up = q[(y - 1) * w + x];
            let diag = if x + 1 < w { q[(y - 1) * w + x + 1] } else { q[(y - 1) * w + x - 1] };
            median3(left, up, diag)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn reconstruct(qx: &[i32], qy: &[i32], cw: usize, ch: usize, step: f32, width: usize, height: usize, factor: usize) -> FlowField {
    let coarse = FlowField::from_fn(cw, ch, |x, y| {
        let i = y * cw + x;
        (qx[i] as f32 * step, qy[i] as f32 * step)
    });
    coarse.upsample(width, height, factor)
}

fn scale_model(scale_q: u16) -> Result<SymbolModel> {
    SymbolModel::laplacian(scale_q as f64 / 256.0)
}

/// Block warping error used by the encoder's per-cell skip decision.
struct SkipCost {
    reference: Vec<f32>,
    target: Vec<f32>,
    width: usize,
    height: usize,
    /// Lagrangian multiplier, squared-error units per bit.
    lambda: f64,
}

impl SkipCost {
    fn new(reference: &Frame, target: &Frame, inter_step: f64) -> Self {
        Self {
            reference: reference.luma(),
            target: target.luma(),
            width: reference.width(),
            height: reference.height(),
            lambda: LAMBDA_FACTOR * inter_step * inter_step,
        }
    }

    /// Squared error of cell `(cx, cy)` of size `factor` warped by a constant vector.
    fn sse(&self, cx: usize, cy: usize, factor: usize, v: (f32, f32)) -> f64 {
        let mut e = 0.0;
        for y in cy * factor..((cy + 1) * factor).min(self.height) {
            for x in cx * factor..((cx + 1) * factor).min(self.width) {
                let s = sample_bilinear(&self.reference, self.width, self.height, x as f32 + v.0, y as f32 + v.1);
                let d = (s - self.target[y * self.width + x]) as f64;
                e += d * d;
            }
        }
        e
    }
}

/// Rough cost in bits of one DPCM residual, used only for encoder decisions.
fn residual_bits(r: i32) -> f64 {
    if r == 0 {
        0.5
    } else {
        2.5 + 2.0 * (r.unsigned_abs() as f64).log2()
    }
}

/// Codes `flow`; returns the payload and the decoded full-resolution field the
/// decoder will reconstruct.
pub fn encode_flow(flow: &FlowField, downsample: usize, step: f64) -> Result<(FlowPayload, FlowField)> {
    encode_flow_with(flow, downsample, step, None)
}

fn encode_flow_with(flow: &FlowField, downsample: usize, step: f64, skip: Option<&SkipCost>) -> Result<(FlowPayload, FlowField)> {
    if !downsample.is_power_of_two() || downsample > 128 {
        return Err(Error::Config(format!("flow downsample {downsample}")));
    }
    let step = step as f32;
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::Config(format!("flow step {step}")));
    }
    let (w, h) = (flow.width(), flow.height());
    let pooled = flow.average_pool(downsample);
    let (cw, ch) = (pooled.width(), pooled.height());
    let (mut qx, mut qy) = (vec![0i32; cw * ch], vec![0i32; cw * ch]);
    let mut residuals = Vec::with_capacity(2 * cw * ch);
    for y in 0..ch {
        for x in 0..cw {
            let i = y * cw + x;
            let p = (predict(&qx, cw, x, y), predict(&qy, cw, x, y));
            // deadzone around the prediction: zero residuals are far cheaper
            // than the sub-step error they add
            let round = |v: f32, p: i32| {
                let u = v / step;
                if (u - p as f32).abs() <= SNAP {
                    p
                } else {
                    u.round() as i32
                }
            };
            let mut q = (round(pooled.dx()[i], p.0), round(pooled.dy()[i], p.1));
            if let Some(cost) = skip.filter(|_| q != p) {
                let j = |c: (i32, i32)| {
                    let v = (c.0 as f32 * step, c.1 as f32 * step);
                    cost.sse(x, y, downsample, v) + cost.lambda * (residual_bits(c.0 - p.0) + residual_bits(c.1 - p.1))
                };
                let candidates = [q, p, (p.0, q.1), (q.0, p.1)];
                q = candidates
                    .into_iter()
                    .map(|c| (j(c), c))
                    .min_by(|a, b| a.0.total_cmp(&b.0))
                    .map(|(_, c)| c)
                    .expect("non-empty");
            }
            qx[i] = q.0;
            qy[i] = q.1;
            residuals.push(q.0 - p.0);
            residuals.push(q.1 - p.1);
        }
    }
    let mean_abs = residuals.iter().map(|r| r.unsigned_abs() as f64).sum::<f64>() / residuals.len() as f64;
    let scale_q = if mean_abs == 0.0 { 0 } else { (mean_abs * 256.0).round().clamp(1.0, u16::MAX as f64) as u16 };

    let data = if scale_q == 0 {
        BitPayload::default()
    } else {
        let model = scale_model(scale_q)?;
        let mut enc = RangeEncoder::new();
        for &r in &residuals {
            enc.encode(r, &model)?;
        }
        BitPayload::from_bytes(enc.finish(), residuals.len())
    };
    let decoded = reconstruct(&qx, &qy, cw, ch, step, w, h, downsample);
    Ok((FlowPayload { downsample, step, scale_q, data }, decoded))
}

/// Decodes a flow payload to a `width x height` field.
pub fn decode_flow(payload: &FlowPayload, width: usize, height: usize) -> Result<FlowField> {
    let f = payload.downsample;
    let (cw, ch) = (width.div_ceil(f), height.div_ceil(f));
    let n = cw * ch;
    let mut qx = vec![0i32; n];
    let mut qy = vec![0i32; n];
    if payload.scale_q != 0 {
        let model = scale_model(payload.scale_q)?;
        let mut dec = RangeDecoder::new(&payload.data.bytes)?;
        for y in 0..ch {
            for x in 0..cw {
                let i = y * cw + x;
                qx[i] = predict(&qx, cw, x, y)
                    .checked_add(dec.decode(&model)?)
                    .ok_or_else(|| Error::Malformed("flow symbol overflow".into()))?;
                qy[i] = predict(&qy, cw, x, y)
                    .checked_add(dec.decode(&model)?)
                    .ok_or_else(|| Error::Malformed("flow symbol overflow".into()))?;
            }
        }
        dec.finish()?;
    }
    Ok(reconstruct(&qx, &qy, cw, ch, payload.step, width, height, f))
}

/// Pyramid depth actually used for a frame size: the configured depth,
/// capped by what the frame can hold.
pub fn effective_levels(cfg: &CodecConfig, width: usize, height: usize) -> Result<usize> {
    let max = max_pyramid_levels(width, height);
    if max == 0 {
        return Err(Error::TooSmall(format!("{width}x{height} is below the flow estimator minimum")));
    }
    Ok(cfg.pyramid_levels.min(max))
}

/// Estimates, codes and decodes the flow from `reference` to `target`.
pub fn code_motion(reference: &Frame, target: &Frame, cfg: &CodecConfig) -> Result<(FlowPayload, FlowField)> {
    reference.ensure_same_shape(target)?;
    let levels = effective_levels(cfg, reference.width(), reference.height())?;
    let flow = estimate_flow(reference, target, levels)?;
    let skip = SkipCost::new(reference, target, cfg.quant_step_inter);
    encode_flow_with(&flow, cfg.flow_downsample, cfg.quant_step_flow, Some(&skip))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MvPayload {
    /// 1-based frame index within the GOP.
    pub target_index: usize,
    /// 1-based index of the frame whose reconstruction is warped.
    pub ref_index: usize,
    /// CRC-32 of the reference reconstruction.
    pub ref_checksum: u32,
    pub flow: FlowPayload,
}

impl MvPayload {
    /// `u16` target, `u16` reference (both 0-based), `u32` reference CRC, flow payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.u16((self.target_index - 1) as u16).u16((self.ref_index - 1) as u16).u32(self.ref_checksum);
        self.flow.write(&mut w);
        w.finish()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let target_index = r.u16()? as usize + 1;
        let ref_index = r.u16()? as usize + 1;
        let ref_checksum = r.u32()?;
        let flow = FlowPayload::read(&mut r)?;
        r.expect_end()?;
        Ok(Self { target_index, ref_index, ref_checksum, flow })
    }

    pub fn total_bits(&self) -> u64 {
        8 * MV_HEADER_BYTES as u64 + self.flow.total_bits()
    }

    /// Bits spent on range-coded flow symbols only.
    pub fn flow_bits(&self) -> u64 {
        self.flow.data.exact_bits
    }
}

/// Codes MV frame `target_index` against the reconstruction of `ref_index`.
pub fn encode_mv(
    ref_recon: &Frame,
    target: &Frame,
    target_index: usize,
    ref_index: usize,
    cfg: &CodecConfig,
) -> Result<(MvPayload, Frame)> {
    let (flow, decoded) = code_motion(ref_recon, target, cfg)?;
    let recon = warp(ref_recon, &decoded)?;
    let payload = MvPayload { target_index, ref_index, ref_checksum: ref_recon.checksum(), flow };
    Ok((payload, recon))
}

/// Warps `ref_recon` by the decoded flow. No residual is applied.
pub fn decode_mv(payload: &MvPayload, ref_recon: &Frame) -> Result<Frame> {
    let crc = ref_recon.checksum();
    if crc != payload.ref_checksum {
        return Err(Error::Checksum(format!(
            "MV frame {} expects reference {} with crc {:08x}, got {crc:08x}",
            payload.target_index, payload.ref_index, payload.ref_checksum
        )));
    }
    let flow = decode_flow(&payload.flow, ref_recon.width(), ref_recon.height())?;
    warp(ref_recon, &flow)
}

fn check_slots(recons: &[Option<Frame>], originals: &[Frame], sched: &GopSchedule) -> Result<()> {
    if recons.len() != sched.length() || originals.len() != sched.length() {
        return Err(Error::Schedule(format!(
            "schedule covers {} frames, got {} reconstructions and {} originals",
            sched.length(),
            recons.len(),
            originals.len()
        )));
    }
    Ok(())
}

/// Codes every MV frame of a GOP. `recons[i]` holds the reconstruction of
/// backbone frame `i + 1` (MV slots are ignored and filled in); `originals`
/// has all `T` frames. Links of equal chain length are independent and run
/// in parallel; results do not depend on processing order.
///
/// Returns payloads ordered by target index and the MV reconstructions in
/// the same order.
pub fn encode_mv_group(
    recons: &[Option<Frame>],
    originals: &[Frame],
    sched: &GopSchedule,
    cfg: &CodecConfig,
) -> Result<(Vec<MvPayload>, Vec<Frame>)> {
    check_slots(recons, originals, sched)?;
    let mut slots: Vec<Option<Frame>> =
        (1..=sched.length()).map(|i| if sched.frame_type(i).is_backbone() { recons[i - 1].clone() } else { None }).collect();
    let mut payloads = Vec::with_capacity(sched.mv_count());
    for depth in 1..=sched.max_chain_length() {
        let stage: Vec<_> = sched.mv_links().iter().filter(|l| l.chain_length() == depth).collect();
        let coded = stage
            .par_iter()
            .map(|l| {
                let reference = slots[l.source - 1]
                    .as_ref()
                    .ok_or_else(|| Error::Schedule(format!("reference {} not reconstructed", l.source)))?;
                encode_mv(reference, &originals[l.target - 1], l.target, l.source, cfg)
            })
            .collect::<Result<Vec<_>>>()?;
        for (p, r) in coded {
            slots[p.target_index - 1] = Some(r);
            payloads.push(p);
        }
    }
    payloads.sort_by_key(|p| p.target_index);
    let mv_recons = payloads.iter().map(|p| slots[p.target_index - 1].take().expect("coded above")).collect();
    Ok((payloads, mv_recons))
}

/// Decodes MV payloads given backbone reconstructions (`None` in MV slots).
/// Returns the completed per-index reconstruction list.
pub fn decode_mv_group(recons: &[Option<Frame>], payloads: &[MvPayload], sched: &GopSchedule) -> Result<Vec<Frame>> {
    if recons.len() != sched.length() {
        return Err(Error::Schedule(format!("expected {} slots, got {}", sched.length(), recons.len())));
    }
    if payloads.len() != sched.mv_count() {
        return Err(Error::Malformed(format!("schedule has {} MV frames, stream has {}", sched.mv_count(), payloads.len())));
    }
    let mut slots = recons.to_vec();
    for depth in 1..=sched.max_chain_length() {
        let stage: Vec<_> = sched.mv_links().iter().filter(|l| l.chain_length() == depth).collect();
        let decoded = stage
            .par_iter()
            .map(|l| {
                let p = payloads
                    .iter()
                    .find(|p| p.target_index == l.target)
                    .ok_or_else(|| Error::Malformed(format!("missing MV payload for frame {}", l.target)))?;
                if p.ref_index != l.source {
                    return Err(Error::Malformed(format!(
                        "MV frame {} references {}, schedule says {}",
                        l.target, p.ref_index, l.source
                    )));
                }
                let reference = slots[l.source - 1]
                    .as_ref()
                    .ok_or_else(|| Error::Schedule(format!("reference {} not reconstructed", l.source)))?;
                Ok((l.target, decode_mv(p, reference)?))
            })
            .collect::<Result<Vec<_>>>()?;
        for (t, f) in decoded {
            slots[t - 1] = Some(f);
        }
    }
    slots
        .into_iter()
        .enumerate()
        .map(|(i, f)| f.ok_or_else(|| Error::Malformed(format!("frame {} has no reconstruction", i + 1))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::build_schedule;
    use crate::synth::{generate, GeneratorConfig, GeneratorKind};

    #[test]
    fn median_predictor() {
        assert_eq!(median3(1, 5, 3), 3);
        assert_eq!(median3(-2, -2, 7), -2);
        assert_eq!(median3(9, 0, 4), 4);
    }

    #[test]
    fn zero_flow_is_flagged_and_exact() {
        let f = FlowField::zeros(40, 24);
        let (p, dec) = encode_flow(&f, 8, 0.25).unwrap();
        assert_eq!(p.scale_q, 0);
        assert!(p.data.bytes.is_empty());
        assert_eq!(dec, f);
        assert_eq!(decode_flow(&p, 40, 24).unwrap(), f);
        assert_eq!(p.total_bits(), 88);
    }

    #[test]
    fn flow_round_trip_matches_encoder() {
        let f = FlowField::from_fn(50, 37, |x, y| ((x as f32 * 0.13).sin() * 3.0, (y as f32 * 0.07).cos() - 0.3 * x as f32));
        for ds in [1, 4, 8, 16] {
            let (p, dec) = encode_flow(&f, ds, 0.25).unwrap();
            let mut w = Writer::new();
            p.write(&mut w);
            let bytes = w.finish();
            let back = FlowPayload::read(&mut Reader::new(&bytes)).unwrap();
            assert_eq!(decode_flow(&back, 50, 37).unwrap(), dec);
        }
    }

    #[test]
    fn quantization_error_bounded_at_full_resolution() {
        let f = FlowField::from_fn(16, 16, |x, y| (x as f32 * 0.37 - 2.0, y as f32 * -0.21));
        let (_, dec) = encode_flow(&f, 1, 0.25).unwrap();
        for (a, b) in f.dx().iter().zip(dec.dx()).chain(f.dy().iter().zip(dec.dy())) {
            // the deadzone widens the rounding bound from half a step to SNAP steps
            assert!((a - b).abs() <= SNAP * 0.25 + 1e-6);
        }
    }

    #[test]
    fn mv_round_trip_and_reference_check() {
        let cfg = CodecConfig::default();
        let seq = generate(&GeneratorConfig::new(GeneratorKind::translating(), 64, 48, 3)).unwrap();
        let (p, recon) = encode_mv(seq.frame(1), seq.frame(0), 1, 2, &cfg).unwrap();
        let back = MvPayload::from_bytes(&p.to_bytes()).unwrap();
        assert_eq!(back.to_bytes(), p.to_bytes());
        assert_eq!(decode_mv(&back, seq.frame(1)).unwrap(), recon);
        assert!(matches!(decode_mv(&back, seq.frame(2)), Err(Error::Checksum(_))));
    }

    #[test]
    fn truncated_payload_errors() {
        let cfg = CodecConfig::default();
        let seq = generate(&GeneratorConfig::new(GeneratorKind::rotating(), 64, 64, 2)).unwrap();
        let (p, _) = encode_mv(seq.frame(0), seq.frame(1), 2, 1, &cfg).unwrap();
        let bytes = p.to_bytes();
        for cut in 1..bytes.len() {
            assert!(MvPayload::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn group_links_follow_schedule() {
        let cfg = CodecConfig::default();
        let seq = generate(&GeneratorConfig::new(GeneratorKind::translating(), 32, 32, 9)).unwrap();
        let sched = build_schedule(9, 2).unwrap();
        let recons: Vec<Option<Frame>> = (1..=9).map(|i| sched.frame_type(i).is_backbone().then(|| seq.at(i).clone())).collect();
        let (payloads, mv) = encode_mv_group(&recons, seq.frames(), &sched, &cfg).unwrap();
        let pairs: Vec<_> = payloads.iter().map(|p| (p.target_index, p.ref_index)).collect();
        assert_eq!(pairs, vec![(1, 2), (3, 2), (4, 5), (6, 5), (7, 8), (9, 8)]);
        let all = decode_mv_group(&recons, &payloads, &sched).unwrap();
        for (p, r) in payloads.iter().zip(&mv) {
            assert_eq!(&all[p.target_index - 1], r);
        }
    }

    #[test]
    fn interval_four_chains_through_mv_frames() {
        let cfg = CodecConfig::default();
        let seq = generate(&GeneratorConfig::new(GeneratorKind::translating(), 32, 32, 10)).unwrap();
        let sched = build_schedule(10, 4).unwrap();
        let recons: Vec<Option<Frame>> = (1..=10).map(|i| sched.frame_type(i).is_backbone().then(|| seq.at(i).clone())).collect();
        let (payloads, _) = encode_mv_group(&recons, seq.frames(), &sched, &cfg).unwrap();
        assert!(payloads.iter().any(|p| !sched.frame_type(p.ref_index).is_backbone()));
        decode_mv_group(&recons, &payloads, &sched).unwrap();
    }
}
