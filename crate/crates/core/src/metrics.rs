//! Quality, temporal-consistency and rate measurements, and the training
//! objectives evaluated as plain functionals.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::flow::{estimate_flow, max_pyramid_levels, warp_with_mask};
use crate::frame::{Frame, FrameSequence};
use crate::plane::{convolve_axis, gaussian_taps};

/// PSNR assigned to a lossless frame inside a sequence that is not entirely
/// lossless, so that one exact frame does not make the average infinite.
pub const LOSSLESS_FRAME_PSNR: f64 = 100.0;

const SSIM_SIGMA: f64 = 1.5;
const SSIM_RADIUS: usize = 5;
const SSIM_C1: f64 = 1e-4; // (0.01 * 1)^2
const SSIM_C2: f64 = 9e-4; // (0.03 * 1)^2

/// Pairwise summation, so reductions do not depend on evaluation order.
fn pairwise_sum(v: &[f64]) -> f64 {
    if v.len() <= 8 {
        return v.iter().sum();
    }
    let (a, b) = v.split_at(v.len() / 2);
    pairwise_sum(a) + pairwise_sum(b)
}

pub fn mse(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let d: Vec<f64> = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let e = (*x - *y) as f64;
            e * e
        })
        .collect();
    Ok(pairwise_sum(&d) / d.len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

/// `10 log10(1 / MSE)`; `+inf` for identical frames.
pub fn psnr(a: &Frame, b: &Frame) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean per-frame PSNR. `+inf` only if every frame is identical; otherwise
/// lossless frames count as [`LOSSLESS_FRAME_PSNR`].
pub fn psnr_seq(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let v = a.iter().zip(b.iter()).map(|(x, y)| psnr(x, y)).collect::<Result<Vec<_>>>()?;
    if v.iter().all(|p| p.is_infinite()) {
        return Ok(f64::INFINITY);
    }
    let capped: Vec<f64> = v.iter().map(|p| p.min(LOSSLESS_FRAME_PSNR)).collect();
    Ok(pairwise_sum(&capped) / capped.len() as f64)
}

pub fn mse_seq(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let v = a.iter().zip(b.iter()).map(|(x, y)| mse(x, y)).collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&v) / v.len() as f64)
}

/// Single-scale SSIM with an 11-tap Gaussian window (sigma 1.5) over valid
/// window positions, averaged over channels.
pub fn ssim(a: &Frame, b: &Frame) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let (w, h) = (a.width(), a.height());
    let size = 2 * SSIM_RADIUS + 1;
    if w < size || h < size {
        return Err(Error::TooSmall(format!("SSIM needs at least {size}x{size}, got {w}x{h}")));
    }
    let taps = gaussian_taps(SSIM_SIGMA);
    debug_assert_eq!(taps.len(), size);
    let filter = |v: Vec<f32>| -> Vec<f32> { convolve_axis(&convolve_axis(&v, h, w, 1, &taps), 1, h, w, &taps) };
    let mut per_channel = Vec::with_capacity(a.channels());
    for c in 0..a.channels() {
        let (x, y) = (a.plane(c), b.plane(c));
        let mu_x = filter(x.to_vec());
        let mu_y = filter(y.to_vec());
        let xx = filter(x.iter().map(|v| v * v).collect());
        let yy = filter(y.iter().map(|v| v * v).collect());
        let xy = filter(x.iter().zip(y).map(|(p, q)| p * q).collect());
        let mut vals = Vec::with_capacity((w - 2 * SSIM_RADIUS) * (h - 2 * SSIM_RADIUS));
        for yi in SSIM_RADIUS..h - SSIM_RADIUS {
            for xi in SSIM_RADIUS..w - SSIM_RADIUS {
                let i = yi * w + xi;
                let (mx, my) = (mu_x[i] as f64, mu_y[i] as f64);
                let sx = xx[i] as f64 - mx * mx;
                let sy = yy[i] as f64 - my * my;
                let sxy = xy[i] as f64 - mx * my;
                vals.push(
                    ((2.0 * mx * my + SSIM_C1) * (2.0 * sxy + SSIM_C2)) / ((mx * mx + my * my + SSIM_C1) * (sx + sy + SSIM_C2)),
                );
            }
        }
        per_channel.push(pairwise_sum(&vals) / vals.len() as f64);
    }
    Ok(pairwise_sum(&per_channel) / per_channel.len() as f64)
}

pub fn ssim_seq(a: &FrameSequence, b: &FrameSequence) -> Result<f64> {
    a.ensure_same_shape(b)?;
    let v = a.frames().par_iter().zip(b.frames()).map(|(x, y)| ssim(x, y)).collect::<Result<Vec<_>>>()?;
    Ok(pairwise_sum(&v) / v.len() as f64)
}

/// Flow warping error: mean over `t` of the masked MSE between `x_t` and
/// `x_{t-1}` warped by the flow estimated from `x_{t-1}` to `x_t`. Pixels whose
/// sample position fell outside the frame are excluded.
pub fn ewarp(seq: &FrameSequence) -> Result<f64> {
    if seq.len() < 2 {
        return Err(Error::Shape("warping error needs at least two frames".into()));
    }
    let levels = max_pyramid_levels(seq.width(), seq.height()).min(3);
    if levels == 0 {
        return Err(Error::TooSmall(format!("{}x{} too small for flow estimation", seq.width(), seq.height())));
    }
    let terms = (1..seq.len())
        .into_par_iter()
        .map(|t| {
            let (prev, cur) = (seq.frame(t - 1), seq.frame(t));
            let flow = estimate_flow(prev, cur, levels)?;
            let (warped, mask) = warp_with_mask(prev, &flow)?;
            let pixels = seq.width() * seq.height();
            let mut errs = Vec::with_capacity(pixels * seq.channels());
            for c in 0..seq.channels() {
                let (p, q) = (warped.plane(c), cur.plane(c));
                for i in (0..pixels).filter(|&i| mask[i]) {
                    let e = (p[i] - q[i]) as f64;
                    errs.push(e * e);
                }
            }
            Ok(if errs.is_empty() { 0.0 } else { pairwise_sum(&errs) / errs.len() as f64 })
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(pairwise_sum(&terms) / terms.len() as f64)
}

/// Bits per pixel, `bits / (T H W)`.
pub fn bpp(bits: u64, frames: usize, height: usize, width: usize) -> f64 {
    bits as f64 / (frames * height * width) as f64
}

/// Frame-difference loss `sum_{t=2..T} mean((x^_t - x^_{t-1}) - (x_t - x_{t-1}))^2`,
/// with the squared norm averaged over pixels and channels.
pub fn loss_temp(x: &FrameSequence, x_hat: &FrameSequence) -> Result<f64> {
    x.ensure_same_shape(x_hat)?;
    if x.len() < 2 {
        return Err(Error::Shape("temporal loss needs at least two frames".into()));
    }
    let terms: Vec<f64> = (1..x.len())
        .map(|t| {
            let d: Vec<f64> = x_hat
                .frame(t)
                .data()
                .iter()
                .zip(x_hat.frame(t - 1).data())
                .zip(x.frame(t).data().iter().zip(x.frame(t - 1).data()))
                .map(|((a1, a0), (b1, b0))| {
                    let e = (*a1 as f64 - *a0 as f64) - (*b1 as f64 - *b0 as f64);
                    e * e
                })
                .collect();
            pairwise_sum(&d) / d.len() as f64
        })
        .collect();
    Ok(pairwise_sum(&terms))
}

/// Stage-1 objective `lambda * rate + MSE(x, x~)`, rate in bits per pixel.
pub fn loss_stage1(rate_bpp: f64, x: &FrameSequence, x_tilde: &FrameSequence, lambda: f64) -> Result<f64> {
    Ok(lambda * rate_bpp + mse_seq(x, x_tilde)?)
}

/// Perceptual distance slot of the stage-2 objective.
pub trait PerceptualScorer {
    fn name(&self) -> &str;
    fn distance(&self, x: &FrameSequence, x_hat: &FrameSequence) -> Result<f64>;
}

/// `1 - SSIM`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SsimDistance;

impl PerceptualScorer for SsimDistance {
    fn name(&self) -> &str {
        "1-ssim"
    }

    fn distance(&self, x: &FrameSequence, x_hat: &FrameSequence) -> Result<f64> {
        Ok(1.0 - ssim_seq(x, x_hat)?)
    }
}

/// Terms of the stage-2 objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stage2Loss {
    pub rate: f64,
    pub perceptual: f64,
    pub mse: f64,
    pub temporal: f64,
    pub total: f64,
}

/// `lambda * rate + P(x, x^) + k1 * MSE(x, x^) + k2 * L_temp(x, x^)`, where the
/// rate covers backbone residual, motion-compensation flow and MV flow bits,
/// in bits per pixel.
pub fn loss_stage2(
    rate_bpp: f64,
    x: &FrameSequence,
    x_hat: &FrameSequence,
    lambda: f64,
    k1: f64,
    k2: f64,
    perceptual: &dyn PerceptualScorer,
) -> Result<Stage2Loss> {
    let rate = lambda * rate_bpp;
    let perceptual = perceptual.distance(x, x_hat)?;
    let mse = k1 * mse_seq(x, x_hat)?;
    let temporal = k2 * loss_temp(x, x_hat)?;
    Ok(Stage2Loss { rate, perceptual, mse, temporal, total: rate + perceptual + mse + temporal })
}

/// One metrics CSV record.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub sequence: String,
    pub config_hash: u32,
    pub bpp: f64,
    pub psnr: f64,
    pub ssim: f64,
    pub ewarp: f64,
    pub loss_temp: f64,
}

impl MetricsRow {
    pub const HEADER: &'static str = "sequence,config_hash,bpp,psnr,ssim,ewarp,loss_temp";

    /// An unknown (NaN) bpp is written as an empty field.
    pub fn to_csv(&self) -> String {
        let bpp = if self.bpp.is_nan() { String::new() } else { format!("{:.6}", self.bpp) };
        format!(
            "{},{:08x},{bpp},{:.4},{:.6},{:.8},{:.8}",
            self.sequence, self.config_hash, self.psnr, self.ssim, self.ewarp, self.loss_temp
        )
    }
}
