//! Orthonormal 2-D DCT-II on square blocks, zig-zag order and frequency bands.

/// Number of frequency bands used for coefficient statistics.
pub const BANDS: usize = 5;

#[derive(Debug, Clone)]
pub struct Dct {
    n: usize,
    /// `basis[k * n + i] = alpha(k) * cos(pi * (2i + 1) * k / 2n)`
    basis: Vec<f64>,
    zigzag: Vec<usize>,
    bands: Vec<usize>,
}

impl Dct {
    pub fn new(n: usize) -> Self {
        let mut basis = vec![0.0; n * n];
        for k in 0..n {
            let alpha = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
            for i in 0..n {
                basis[k * n + i] = alpha * (std::f64::consts::PI * (2 * i + 1) as f64 * k as f64 / (2 * n) as f64).cos();
            }
        }
        let zigzag = zigzag_order(n);
        let bands = zigzag
            .iter()
            .map(|&pos| {
                let d = pos / n + pos % n;
                match d {
                    0 => 0,
                    1 => 1,
                    2..=3 => 2,
                    4..=6 => 3,
                    _ => 4,
                }
            })
            .collect();
        Self { n, basis, zigzag, bands }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    /// Natural-order index of zig-zag position `k`.
    pub fn zigzag(&self) -> &[usize] {
        &self.zigzag
    }

    /// Band of zig-zag position `k`; band 0 is DC.
    pub fn band(&self, k: usize) -> usize {
        self.bands[k]
    }

    /// `coeffs = C * block * C^T`, both in row-major natural order.
    pub fn forward(&self, block: &[f64], coeffs: &mut [f64]) {
        self.transform(block, coeffs, false);
    }

    /// `block = C^T * coeffs * C`.
    pub fn inverse(&self, coeffs: &[f64], block: &mut [f64]) {
        self.transform(coeffs, block, true);
    }

    fn transform(&self, src: &[f64], dst: &mut [f64], inverse: bool) {
        let n = self.n;
        let m = |a: usize, b: usize| {
            if inverse {
                self.basis[b * n + a]
            } else {
                self.basis[a * n + b]
            }
        };
        let mut tmp = vec![0.0; n * n];
        // rows: tmp = M * src
        for r in 0..n {
            for c in 0..n {
                tmp[r * n + c] = (0..n).map(|k| m(r, k) * src[k * n + c]).sum();
            }
        }
        // columns: dst = tmp * M^T
        for r in 0..n {
            for c in 0..n {
                dst[r * n + c] = (0..n).map(|k| tmp[r * n + k] * m(c, k)).sum();
            }
        }
    }
}

fn zigzag_order(n: usize) -> Vec<usize> {
    let mut order = Vec::with_capacity(n * n);
    for d in 0..(2 * n - 1) {
        let range: Vec<usize> = (0..=d).filter(|&i| i < n && d - i < n).collect();
        if d % 2 == 0 {
            // up-right: row decreasing
            for &r in range.iter().rev() {
                order.push(r * n + (d - r));
            }
        } else {
            for &r in &range {
                order.push(r * n + (d - r));
            }
        }
    }
    order
}
