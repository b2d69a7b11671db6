//! Single-channel float images and the small filters shared by the flow
//! estimator, metrics and refiner.

#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), width * height);
        Self { width, height, data }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    /// Bilinear sample with coordinates clamped to the image.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        sample_bilinear(&self.data, self.width, self.height, x, y)
    }

    /// 2x box downsampling; odd trailing rows/columns are edge-replicated.
    pub fn downsample2(&self) -> Plane {
        let w = self.width.div_ceil(2);
        let h = self.height.div_ceil(2);
        let mut out = Vec::with_capacity(w * h);
        for y in 0..h {
            let y0 = 2 * y;
            let y1 = (2 * y + 1).min(self.height - 1);
            for x in 0..w {
                let x0 = 2 * x;
                let x1 = (2 * x + 1).min(self.width - 1);
                out.push(0.25 * (self.at(x0, y0) + self.at(x1, y0) + self.at(x0, y1) + self.at(x1, y1)));
            }
        }
        Plane::new(w, h, out)
    }

    /// Central-difference gradients with replicated borders.
    pub fn gradients(&self) -> (Vec<f32>, Vec<f32>) {
        let (w, h) = (self.width, self.height);
        let mut gx = vec![0.0; w * h];
        let mut gy = vec![0.0; w * h];
        for y in 0..h {
            let yu = y.saturating_sub(1);
            let yd = (y + 1).min(h - 1);
            for x in 0..w {
                let xl = x.saturating_sub(1);
                let xr = (x + 1).min(w - 1);
                gx[y * w + x] = 0.5 * (self.at(xr, y) - self.at(xl, y));
                gy[y * w + x] = 0.5 * (self.at(x, yd) - self.at(x, yu));
            }
        }
        (gx, gy)
    }
}

/// Bilinear interpolation on a `width x height` raster; sample coordinates are
/// clamped to `[0, width - 1] x [0, height - 1]`. Integer coordinates return
/// the stored sample exactly.
#[inline]
pub fn sample_bilinear(data: &[f32], width: usize, height: usize, x: f32, y: f32) -> f32 {
    let x = x.clamp(0.0, (width - 1) as f32);
    let y = y.clamp(0.0, (height - 1) as f32);
    let x0 = x.floor();
    let y0 = y.floor();
    let fx = x - x0;
    let fy = y - y0;
    let x0 = x0 as usize;
    let y0 = y0 as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let a = data[y0 * width + x0];
    let b = data[y0 * width + x1];
    let c = data[y1 * width + x0];
    let d = data[y1 * width + x1];
    let top = a + (b - a) * fx;
    let bottom = c + (d - c) * fx;
    top + (bottom - top) * fy
}

/// Sums over a `(2r+1) x (2r+1)` window clipped to the image, via a summed
/// area table in `f64`.
pub fn box_sum(data: &[f64], width: usize, height: usize, radius: usize) -> Vec<f64> {
    let sw = width + 1;
    let mut sat = vec![0.0f64; sw * (height + 1)];
    for y in 0..height {
        let mut row = 0.0;
        for x in 0..width {
            row += data[y * width + x];
            sat[(y + 1) * sw + x + 1] = sat[y * sw + x + 1] + row;
        }
    }
    let mut out = vec![0.0; width * height];
    for y in 0..height {
        let y0 = y.saturating_sub(radius);
        let y1 = (y + radius + 1).min(height);
        for x in 0..width {
            let x0 = x.saturating_sub(radius);
            let x1 = (x + radius + 1).min(width);
            out[y * width + x] = sat[y1 * sw + x1] - sat[y0 * sw + x1] - sat[y1 * sw + x0] + sat[y0 * sw + x0];
        }
    }
    out
}

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`. `sigma <= 0`
/// yields the identity kernel.
pub fn gaussian_taps(sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return vec![1.0];
    }
    let r = (3.0 * sigma).ceil() as i64;
    let taps: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / s).collect()
}

/// Convolves along one axis of a strided buffer with replicated borders.
///
/// The buffer is viewed as `outer x len x inner`; the kernel runs along `len`.
pub fn convolve_axis(data: &[f32], outer: usize, len: usize, inner: usize, taps: &[f64]) -> Vec<f32> {
    if taps.len() == 1 {
        return data.iter().map(|&v| (v as f64 * taps[0]) as f32).collect();
    }
    let r = (taps.len() / 2) as i64;
    let mut out = vec![0.0f32; data.len()];
    for o in 0..outer {
        let base = o * len * inner;
        for i in 0..len {
            for k in 0..inner {
                let mut acc = 0.0f64;
                for (t, &w) in taps.iter().enumerate() {
                    let j = (i as i64 + t as i64 - r).clamp(0, len as i64 - 1) as usize;
                    acc += w * data[base + j * inner + k] as f64;
                }
                out[base + i * inner + k] = acc as f32;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_exact_at_integers_and_midpoints() {
        let p = Plane::new(3, 2, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(p.sample(1.0, 1.0), 4.0);
        assert_eq!(p.sample(0.5, 0.0), 0.5);
        assert_eq!(p.sample(0.5, 0.5), 2.0);
        assert_eq!(p.sample(-4.0, 9.0), 3.0);
    }

    #[test]
    fn box_sum_matches_brute_force() {
        let (w, h) = (7, 5);
        let data: Vec<f64> = (0..w * h).map(|i| ((i * 37) % 11) as f64).collect();
        let fast = box_sum(&data, w, h, 2);
        for y in 0..h {
            for x in 0..w {
                let mut s = 0.0;
                for yy in y.saturating_sub(2)..(y + 3).min(h) {
                    for xx in x.saturating_sub(2)..(x + 3).min(w) {
                        s += data[yy * w + xx];
                    }
                }
                assert!((fast[y * w + x] - s).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gaussian_taps_are_normalized() {
        let t = gaussian_taps(1.5);
        assert_eq!(t.len(), 11);
        assert!((t.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(gaussian_taps(0.0), vec![1.0]);
    }

    #[test]
    fn convolution_preserves_constants() {
        let data = vec![0.25f32; 4 * 5 * 3];
        let out = convolve_axis(&data, 4, 5, 3, &gaussian_taps(1.0));
        assert!(out.iter().all(|&v| (v - 0.25).abs() < 1e-6));
    }
}
