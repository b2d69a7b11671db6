//! Dense 3-D convolution over `(channel, t, y, x)` volumes with replicated
//! borders, shared by the type embedder and external predictors.

use rayon::prelude::*;

use crate::bytes::{Reader, Writer};
use crate::error::{Error, Result};

/// Volume dimensions `(t, h, w)`.
pub type Dims = (usize, usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d {
    pub out_channels: usize,
    pub in_channels: usize,
    /// Odd kernel extents `(kt, kh, kw)`.
    pub kernel: Dims,
    /// Indexed `[o][i][kt][kh][kw]`.
    pub weights: Vec<f32>,
    pub bias: Vec<f32>,
}

impl Conv3d {
    pub fn new(out_channels: usize, in_channels: usize, kernel: Dims, weights: Vec<f32>, bias: Vec<f32>) -> Result<Self> {
        let (kt, kh, kw) = kernel;
        if kt % 2 == 0 || kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Shape(format!("kernel {kernel:?} must have odd extents")));
        }
        if out_channels == 0 || in_channels == 0 {
            return Err(Error::Shape("convolution needs at least one channel".into()));
        }
        if weights.len() != out_channels * in_channels * kt * kh * kw || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "{} weights and {} biases for a {out_channels}x{in_channels}x{kernel:?} convolution",
                weights.len(),
                bias.len()
            )));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Malformed("non-finite convolution weight".into()));
        }
        Ok(Self { out_channels, in_channels, kernel, weights, bias })
    }

    fn taps(&self) -> usize {
        self.kernel.0 * self.kernel.1 * self.kernel.2
    }

    /// Applies the convolution to `input` laid out `[c][t][y][x]`.
    pub fn apply(&self, input: &[f32], dims: Dims) -> Result<Vec<f32>> {
        let (t, h, w) = dims;
        let vol = t * h * w;
        if input.len() != self.in_channels * vol {
            return Err(Error::Shape(format!(
                "input holds {} values, expected {} channels of {dims:?}",
                input.len(),
                self.in_channels
            )));
        }
        let (kt, kh, kw) = self.kernel;
        let (rt, rh, rw) = ((kt / 2) as i64, (kh / 2) as i64, (kw / 2) as i64);
        let clampi = |v: i64, n: usize| v.clamp(0, n as i64 - 1) as usize;
        let mut out = vec![0.0f32; self.out_channels * vol];
        out.par_chunks_mut(vol).enumerate().for_each(|(o, dst)| {
            for (p, d) in dst.iter_mut().enumerate() {
                let (ti, yi, xi) = ((p / (h * w)) as i64, ((p / w) % h) as i64, (p % w) as i64);
                let mut acc = self.bias[o] as f64;
                for i in 0..self.in_channels {
                    let src = &input[i * vol..(i + 1) * vol];
                    let wbase = (o * self.in_channels + i) * self.taps();
                    for a in 0..kt {
                        let tt = clampi(ti + a as i64 - rt, t);
                        for b in 0..kh {
                            let yy = clampi(yi + b as i64 - rh, h);
                            for c in 0..kw {
                                let xx = clampi(xi + c as i64 - rw, w);
                                let wt = self.weights[wbase + (a * kh + b) * kw + c];
                                acc += wt as f64 * src[(tt * h + yy) * w + xx] as f64;
                            }
                        }
                    }
                }
                *d = acc as f32;
            }
        });
        Ok(out)
    }

    /// `u32` out, in, kt, kh, kw, then `f32` weights and biases.
    pub fn write(&self, w: &mut Writer) {
        w.u32(self.out_channels as u32)
            .u32(self.in_channels as u32)
            .u32(self.kernel.0 as u32)
            .u32(self.kernel.1 as u32)
            .u32(self.kernel.2 as u32);
        for &v in self.weights.iter().chain(&self.bias) {
            w.f32(v);
        }
    }

    pub fn read(r: &mut Reader) -> Result<Self> {
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = r.u32()? as usize;
            if *d > 4096 {
                return Err(Error::Malformed(format!("convolution dimension {d} too large")));
            }
        }
        let [o, i, kt, kh, kw] = dims;
        let n = o * i * kt * kh * kw;
        if n.saturating_mul(4) > r.remaining() {
            return Err(Error::Truncated(format!("{n} weights announced, {} bytes left", r.remaining())));
        }
        let weights = (0..n).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        let bias = (0..o).map(|_| r.f32()).collect::<Result<Vec<_>>>()?;
        Self::new(o, i, (kt, kh, kw), weights, bias)
    }
}
