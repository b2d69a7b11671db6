//! Dense optical flow and backward warping.
//!
//! Sign convention: a flow `F` estimated from `reference` to `target` is
//! expressed at target pixels and satisfies `target(p) ≈ reference(p + F(p))`,
//! so [`warp`]`(reference, F)` approximates `target`.
//!
//! The estimator is coarse-to-fine Lucas–Kanade: 2x box pyramids, per-pixel
//! 2x2 normal equations over a 7x7 window with Tikhonov damping on the
//! diagonal, two Gauss–Newton refinements per level and bilinear 2x flow
//! upsampling between levels. Multi-channel frames are tracked on luma.

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::plane::{box_sum, sample_bilinear, Plane};

const WINDOW_RADIUS: usize = 3;
const DAMPING: f64 = 1e-3;
const ITERATIONS: usize = 2;
/// Smallest side allowed at the coarsest pyramid level.
pub const MIN_LEVEL_SIZE: usize = 8;

/// Per-pixel displacement `(dx, dy)` in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        Self::constant(width, height, 0.0, 0.0)
    }

    pub fn constant(width: usize, height: usize, dx: f32, dy: f32) -> Self {
        Self { width, height, dx: vec![dx; width * height], dy: vec![dy; width * height] }
    }

    pub fn from_components(width: usize, height: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::DimensionMismatch(format!(
                "flow components of length {}/{} for {width}x{height}",
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(&dy).any(|v| !v.is_finite()) {
            return Err(Error::InvalidFrame("non-finite flow vector".into()));
        }
        Ok(Self { width, height, dx, dy })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> (f32, f32)) -> Self {
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (a, b) = f(x, y);
                dx.push(a);
                dy.push(b);
            }
        }
        Self { width, height, dx, dy }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> (f32, f32) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }

    pub fn max_abs(&self) -> f32 {
        self.dx.iter().chain(&self.dy).fold(0.0f32, |m, v| m.max(v.abs()))
    }

    /// Mean vector over pixels at least `border` away from every edge.
    pub fn interior_mean(&self, border: usize) -> (f64, f64) {
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
        for y in border..self.height.saturating_sub(border) {
            for x in border..self.width.saturating_sub(border) {
                let (a, b) = self.get(x, y);
                sx += a as f64;
                sy += b as f64;
                n += 1;
            }
        }
        let n = n.max(1) as f64;
        (sx / n, sy / n)
    }

    fn check_frame(&self, frame: &Frame) -> Result<()> {
        if frame.width() != self.width || frame.height() != self.height {
            return Err(Error::DimensionMismatch(format!(
                "flow {}x{} vs frame {}x{}",
                self.width,
                self.height,
                frame.width(),
                frame.height()
            )));
        }
        Ok(())
    }

    /// Average pooling over `factor x factor` cells; partial edge cells average
    /// the pixels they cover. Vectors keep full-resolution pixel units.
    pub fn average_pool(&self, factor: usize) -> FlowField {
        let w = self.width.div_ceil(factor);
        let h = self.height.div_ceil(factor);
        FlowField::from_fn(w, h, |cx, cy| {
            let (mut sx, mut sy, mut n) = (0.0f64, 0.0f64, 0usize);
            for y in cy * factor..((cy + 1) * factor).min(self.height) {
                for x in cx * factor..((cx + 1) * factor).min(self.width) {
                    let (a, b) = self.get(x, y);
                    sx += a as f64;
                    sy += b as f64;
                    n += 1;
                }
            }
            ((sx / n as f64) as f32, (sy / n as f64) as f32)
        })
    }

    /// Bilinear upsampling of a pooled field back to `width x height`, pixel
    /// centers aligned. Vector values are not rescaled.
    pub fn upsample(&self, width: usize, height: usize, factor: usize) -> FlowField {
        self.resample(width, height, factor as f32, 1.0)
    }

    fn resample(&self, width: usize, height: usize, factor: f32, gain: f32) -> FlowField {
        FlowField::from_fn(width, height, |x, y| {
            let cx = (x as f32 + 0.5) / factor - 0.5;
            let cy = (y as f32 + 0.5) / factor - 0.5;
            (
                gain * sample_bilinear(&self.dx, self.width, self.height, cx, cy),
                gain * sample_bilinear(&self.dy, self.width, self.height, cx, cy),
            )
        })
    }

    /// Little-endian dump: `"SITF"`, `u32` width, `u32` height, then
    /// interleaved `f32` `(dx, dy)` in raster order.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.dx.len());
        out.extend_from_slice(b"SITF");
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for (a, b) in self.dx.iter().zip(&self.dy) {
            out.extend_from_slice(&a.to_le_bytes());
            out.extend_from_slice(&b.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || &bytes[..4] != b"SITF" {
            return Err(Error::Malformed("missing SITF header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (w, h) = (word(4), word(8));
        let n = w.checked_mul(h).ok_or_else(|| Error::Malformed("flow too large".into()))?;
        if bytes.len() != 12 + 8 * n {
            return Err(Error::Truncated(format!("flow dump holds {} bytes, expected {}", bytes.len(), 12 + 8 * n)));
        }
        let f = |i: usize| f32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
        let dx = (0..n).map(|i| f(12 + 8 * i)).collect();
        let dy = (0..n).map(|i| f(16 + 8 * i)).collect();
        Self::from_components(w, h, dx, dy)
    }
}

/// Deepest pyramid whose coarsest level keeps both sides `>= MIN_LEVEL_SIZE`.
pub fn max_pyramid_levels(width: usize, height: usize) -> usize {
    let (mut w, mut h, mut levels) = (width, height, 0);
    while w >= MIN_LEVEL_SIZE && h >= MIN_LEVEL_SIZE {
        levels += 1;
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    levels
}

/// Estimates `F` with `target(p) ≈ reference(p + F(p))`.
pub fn estimate_flow(reference: &Frame, target: &Frame, levels: usize) -> Result<FlowField> {
    reference.ensure_same_shape(target)?;
    if levels == 0 {
        return Err(Error::Config("pyramid needs at least one level".into()));
    }
    let (w, h) = (reference.width(), reference.height());
    if max_pyramid_levels(w, h) < levels {
        return Err(Error::TooSmall(format!(
            "{w}x{h} cannot hold {levels} pyramid levels with a {MIN_LEVEL_SIZE}px coarsest side"
        )));
    }

    let mut ref_pyr = vec![Plane::new(w, h, reference.luma())];
    let mut tgt_pyr = vec![Plane::new(w, h, target.luma())];
    for l in 1..levels {
        ref_pyr.push(ref_pyr[l - 1].downsample2());
        tgt_pyr.push(tgt_pyr[l - 1].downsample2());
    }

    let top = &ref_pyr[levels - 1];
    let mut flow = FlowField::zeros(top.width, top.height);
    for l in (0..levels).rev() {
        let (r, t) = (&ref_pyr[l], &tgt_pyr[l]);
        if flow.width != r.width || flow.height != r.height {
            flow = flow.resample(r.width, r.height, 2.0, 2.0);
        }
        for _ in 0..ITERATIONS {
            lk_step(r, t, &mut flow);
        }
    }
    Ok(flow)
}

/// One damped Gauss–Newton update of `flow` at a single pyramid level.
fn lk_step(reference: &Plane, target: &Plane, flow: &mut FlowField) {
    let (w, h) = (reference.width, reference.height);
    let warped = Plane::new(
        w,
        h,
        (0..w * h)
            .map(|i| {
                let (x, y) = (i % w, i / w);
                reference.sample(x as f32 + flow.dx[i], y as f32 + flow.dy[i])
            })
            .collect(),
    );
    let (gx, gy) = warped.gradients();
    let n = w * h;
    let mut xx = Vec::with_capacity(n);
    let mut xy = Vec::with_capacity(n);
    let mut yy = Vec::with_capacity(n);
    let mut xe = Vec::with_capacity(n);
    let mut ye = Vec::with_capacity(n);
    for i in 0..n {
        let (a, b) = (gx[i] as f64, gy[i] as f64);
        let e = (warped.data[i] - target.data[i]) as f64;
        xx.push(a * a);
        xy.push(a * b);
        yy.push(b * b);
        xe.push(a * e);
        ye.push(b * e);
    }
    let [sxx, sxy, syy, sxe, sye] = [xx, xy, yy, xe, ye].map(|v| box_sum(&v, w, h, WINDOW_RADIUS));
    for i in 0..n {
        let a = sxx[i] + DAMPING;
        let b = sxy[i];
        let c = syy[i] + DAMPING;
        let det = a * c - b * b;
        let du = -(c * sxe[i] - b * sye[i]) / det;
        let dv = -(a * sye[i] - b * sxe[i]) / det;
        flow.dx[i] += du as f32;
        flow.dy[i] += dv as f32;
    }
}

/// Backward bilinear warp: `out(p) = reference(p + F(p))`, sample positions
/// clamped to the image, output clamped to `[0, 1]`.
pub fn warp(reference: &Frame, flow: &FlowField) -> Result<Frame> {
    warp_with_mask(reference, flow).map(|(f, _)| f)
}

/// Like [`warp`], also reporting which pixels sampled inside the image
/// without clamping.
pub fn warp_with_mask(reference: &Frame, flow: &FlowField) -> Result<(Frame, Vec<bool>)> {
    flow.check_frame(reference)?;
    let (w, h) = (reference.width(), reference.height());
    let mut out = Frame::new(w, h, reference.channels())?;
    let mut mask = Vec::with_capacity(w * h);
    for i in 0..w * h {
        let sx = (i % w) as f32 + flow.dx[i];
        let sy = (i / w) as f32 + flow.dy[i];
        mask.push(sx >= 0.0 && sy >= 0.0 && sx <= (w - 1) as f32 && sy <= (h - 1) as f32);
    }
    for c in 0..reference.channels() {
        let src = reference.plane(c);
        let dst = out.plane_mut(c);
        for (i, v) in dst.iter_mut().enumerate() {
            let sx = (i % w) as f32 + flow.dx[i];
            let sy = (i / w) as f32 + flow.dy[i];
            *v = sample_bilinear(src, w, h, sx, sy).clamp(0.0, 1.0);
        }
    }
    Ok((out, mask))
}

/// Applies `flows` one after another, each warp reading the previous result.
pub fn chain_warp(reference: &Frame, flows: &[FlowField]) -> Result<Frame> {
    let mut cur = reference.clone();
    for f in flows {
        cur = warp(&cur, f)?;
    }
    Ok(cur)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> Frame {
        Frame::from_fn(w, h, 1, |_, x, _| x as f32 / w as f32).unwrap()
    }

    #[test]
    fn zero_flow_is_identity() {
        let f = Frame::from_fn(9, 7, 3, |c, x, y| ((x * 7 + y * 3 + c) % 13) as f32 / 13.0).unwrap();
        assert_eq!(warp(&f, &FlowField::zeros(9, 7)).unwrap(), f);
        assert_eq!(chain_warp(&f, &vec![FlowField::zeros(9, 7); 4]).unwrap(), f);
    }

    #[test]
    fn ramp_shifts_by_integer_flow() {
        let (w, h) = (16, 4);
        let r = ramp(w, h);
        let out = warp(&r, &FlowField::constant(w, h, 1.0, 0.0)).unwrap();
        for y in 0..h {
            for c in 0..w - 1 {
                assert_eq!(out.get(0, c, y), (c + 1) as f32 / w as f32);
            }
        }
    }

    #[test]
    fn out_of_bounds_samples_clamp_to_edge() {
        let r = ramp(8, 8);
        let (out, mask) = warp_with_mask(&r, &FlowField::constant(8, 8, 100.0, -100.0)).unwrap();
        assert!(out.plane(0).iter().all(|&v| v == r.get(0, 7, 0)));
        assert!(mask.iter().all(|m| !m));
    }

    #[test]
    fn chain_of_one_is_warp() {
        let r = ramp(8, 8);
        let f = FlowField::constant(8, 8, 0.5, 0.25);
        assert_eq!(chain_warp(&r, std::slice::from_ref(&f)).unwrap(), warp(&r, &f).unwrap());
    }

    #[test]
    fn dimension_checks() {
        let r = ramp(8, 8);
        assert!(warp(&r, &FlowField::zeros(4, 8)).is_err());
        assert!(estimate_flow(&r, &ramp(8, 4), 1).is_err());
        assert!(matches!(estimate_flow(&r, &r, 2), Err(Error::TooSmall(_))));
        assert!(estimate_flow(&r, &r, 0).is_err());
    }

    #[test]
    fn identical_frames_give_zero_flow() {
        let f = Frame::from_fn(32, 32, 1, |_, x, y| 0.5 + 0.3 * ((x as f32) * 0.4).sin() * ((y as f32) * 0.3).cos()).unwrap();
        let flow = estimate_flow(&f, &f, 3).unwrap();
        assert!(flow.max_abs() <= 0.05);
    }

    #[test]
    fn pyramid_depth() {
        assert_eq!(max_pyramid_levels(32, 32), 3);
        assert_eq!(max_pyramid_levels(7, 64), 0);
        assert_eq!(max_pyramid_levels(64, 48), 3);
    }

    #[test]
    fn pool_and_upsample_constant_field() {
        let f = FlowField::constant(20, 12, 1.5, -0.5);
        let pooled = f.average_pool(8);
        assert_eq!((pooled.width(), pooled.height()), (3, 2));
        assert_eq!(pooled.upsample(20, 12, 8), f);
    }

    #[test]
    fn dump_round_trip() {
        let f = FlowField::from_fn(5, 3, |x, y| (x as f32 - 1.25, y as f32 * 0.5));
        assert_eq!(FlowField::from_bytes(&f.to_bytes()).unwrap(), f);
        let mut b = f.to_bytes();
        b.pop();
        assert!(FlowField::from_bytes(&b).is_err());
        assert!(FlowField::from_bytes(b"SITX\0\0\0\0\0\0\0\0").is_err());
    }
}
