//! Fixed-point symbol distributions for the range coder.

use crate::error::{Error, Result};

pub const DEFAULT_PRECISION: u32 = 16;
pub const DEFAULT_RADIUS: u32 = 255;
/// Bits of the raw tail that follows an escape symbol.
pub const ESCAPE_BITS: u32 = 16;

/// Smallest scale a model is built with; smaller requests are clamped.
pub const MIN_SCALE: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Family {
    /// Zero-mean Laplace(0, scale) integrated over unit bins on `[-radius, radius]`,
    /// plus an escape symbol carrying the tail mass.
    LaplacianQuantized { scale: f64, radius: u32 },
    /// One-sided discretization `p(k) ∝ exp(-k / scale)` on `[0, max]`. Used for
    /// non-negative syntax elements such as end-of-block positions.
    Geometric { scale: f64, max: u32 },
    /// Equiprobable symbols on `[min, max]`.
    UniformRange { min: i32, max: i32 },
}

/// A symbol alphabet with an integer CDF summing to `2^precision`.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolModel {
    family: Family,
    precision: u32,
    /// Symbol value of table slot 0.
    offset: i32,
    freqs: Vec<u32>,
    /// `cdf[i]` is the cumulative frequency below slot `i`; `cdf.len() == freqs.len() + 1`.
    cdf: Vec<u32>,
    /// Slot of the escape symbol, if the family has one.
    escape: Option<usize>,
}

impl SymbolModel {
    pub fn laplacian(scale: f64) -> Result<Self> {
        Self::new(Family::LaplacianQuantized { scale, radius: DEFAULT_RADIUS }, DEFAULT_PRECISION)
    }

    pub fn laplacian_with_radius(scale: f64, radius: u32) -> Result<Self> {
        Self::new(Family::LaplacianQuantized { scale, radius }, DEFAULT_PRECISION)
    }

    pub fn geometric(scale: f64, max: u32) -> Result<Self> {
        Self::new(Family::Geometric { scale, max }, DEFAULT_PRECISION)
    }

    pub fn uniform(min: i32, max: i32) -> Result<Self> {
        Self::new(Family::UniformRange { min, max }, DEFAULT_PRECISION)
    }

    pub fn new(family: Family, precision: u32) -> Result<Self> {
        if !(8..=16).contains(&precision) {
            return Err(Error::Config(format!("CDF precision {precision} not in 8..=16")));
        }
        let (probs, offset, escape) = match family {
            Family::LaplacianQuantized { scale, radius } => {
                let b = check_scale(scale)?;
                let r = radius as i64;
                let mut p: Vec<f64> = (-r..=r)
                    .map(|k| {
                        let k = k.unsigned_abs() as f64;
                        if k == 0.0 {
                            1.0 - (-0.5 / b).exp()
                        } else {
                            0.5 * ((-(k - 0.5) / b).exp() - (-(k + 0.5) / b).exp())
                        }
                    })
                    .collect();
                p.push((-(r as f64 + 0.5) / b).exp());
                let escape = p.len() - 1;
                (p, -(radius as i32), Some(escape))
            }
            Family::Geometric { scale, max } => {
                let b = check_scale(scale)?;
                let w: Vec<f64> = (0..=max).map(|k| (-(k as f64) / b).exp()).collect();
                let total: f64 = w.iter().sum();
                (w.into_iter().map(|v| v / total).collect(), 0, None)
            }
            Family::UniformRange { min, max } => {
                if max < min {
                    return Err(Error::Config(format!("empty uniform range [{min}, {max}]")));
                }
                let n = (max as i64 - min as i64 + 1) as usize;
                (vec![1.0 / n as f64; n], min, None)
            }
        };
        let freqs = quantize_probabilities(&probs, precision)?;
        let mut cdf = Vec::with_capacity(freqs.len() + 1);
        let mut acc = 0u32;
        cdf.push(0);
        for &f in &freqs {
            acc += f;
            cdf.push(acc);
        }
        debug_assert_eq!(acc, 1 << precision);
        Ok(Self { family, precision, offset, freqs, cdf, escape })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn precision(&self) -> u32 {
        self.precision
    }

    pub fn total(&self) -> u32 {
        1 << self.precision
    }

    /// Number of table slots, including the escape slot.
    pub fn alphabet_size(&self) -> usize {
        self.freqs.len()
    }

    pub fn freqs(&self) -> &[u32] {
        &self.freqs
    }

    pub fn cdf(&self) -> &[u32] {
        &self.cdf
    }

    pub fn escape_slot(&self) -> Option<usize> {
        self.escape
    }

    /// Inclusive range of symbols coded directly, without escape.
    pub fn direct_range(&self) -> (i32, i32) {
        let direct = self.freqs.len() - usize::from(self.escape.is_some());
        (self.offset, self.offset + direct as i32 - 1)
    }

    /// Largest magnitude representable through the escape path.
    fn escape_limit(&self) -> i64 {
        let (_, hi) = self.direct_range();
        hi as i64 + (1i64 << (ESCAPE_BITS - 1))
    }

    /// Maps a symbol to its slot, or `None` when it must be escaped.
    pub(crate) fn slot(&self, symbol: i32) -> Result<Slot> {
        let (lo, hi) = self.direct_range();
        if (lo..=hi).contains(&symbol) {
            return Ok(Slot::Direct((symbol - self.offset) as usize));
        }
        match self.escape {
            Some(esc) if (symbol as i64).abs() <= self.escape_limit() => {
                let magnitude = (symbol as i64).unsigned_abs() - hi as u64 - 1;
                let sign = u32::from(symbol < 0);
                let raw = (sign << (ESCAPE_BITS - 1)) | magnitude as u32;
                Ok(Slot::Escape { slot: esc, raw })
            }
            _ => Err(Error::SymbolOutOfRange { symbol: symbol as i64 }),
        }
    }

    pub(crate) fn symbol_of_slot(&self, slot: usize) -> i32 {
        self.offset + slot as i32
    }

    pub(crate) fn symbol_from_escape(&self, raw: u32) -> i32 {
        let (_, hi) = self.direct_range();
        let magnitude = (raw & ((1 << (ESCAPE_BITS - 1)) - 1)) as i32 + hi + 1;
        if raw >> (ESCAPE_BITS - 1) == 1 {
            -magnitude
        } else {
            magnitude
        }
    }

    /// Slot containing the cumulative value `target < total`.
    pub(crate) fn find_slot(&self, target: u32) -> usize {
        self.cdf.partition_point(|&c| c <= target) - 1
    }

    /// Ideal code length of one symbol in bits.
    pub fn cost_bits(&self, symbol: i32) -> Result<f64> {
        let total = self.total() as f64;
        Ok(match self.slot(symbol)? {
            Slot::Direct(s) => -(self.freqs[s] as f64 / total).log2(),
            Slot::Escape { slot, .. } => -(self.freqs[slot] as f64 / total).log2() + ESCAPE_BITS as f64,
        })
    }

    /// Shannon entropy of the quantized table, `-Σ p log2 p`.
    pub fn entropy_bits(&self) -> f64 {
        let total = self.total() as f64;
        self.freqs
            .iter()
            .map(|&f| {
                let p = f as f64 / total;
                -p * p.log2()
            })
            .sum()
    }

    /// Probability of `symbol` under the quantized table (escape mass for
    /// escaped symbols).
    pub fn probability(&self, symbol: i32) -> Result<f64> {
        let slot = match self.slot(symbol)? {
            Slot::Direct(s) => s,
            Slot::Escape { slot, .. } => slot,
        };
        Ok(self.freqs[slot] as f64 / self.total() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Slot {
    Direct(usize),
    Escape { slot: usize, raw: u32 },
}

fn check_scale(scale: f64) -> Result<f64> {
    if !scale.is_finite() || scale <= 0.0 {
        return Err(Error::Config(format!("model scale must be positive, got {scale}")));
    }
    Ok(scale.max(MIN_SCALE))
}

/// Integer frequencies, each at least 1, summing to `2^precision`.
///
/// Every slot first gets one count; the remaining mass is distributed by
/// flooring, and the rounding remainder goes to the most probable slot (first
/// on ties) so the table is a deterministic function of `probs`.
fn quantize_probabilities(probs: &[f64], precision: u32) -> Result<Vec<u32>> {
    let total = 1u64 << precision;
    let n = probs.len() as u64;
    if n == 0 || n > total {
        return Err(Error::Config(format!("alphabet of {n} symbols does not fit a {precision}-bit CDF")));
    }
    let spare = (total - n) as f64;
    let norm: f64 = probs.iter().sum();
    let mut freqs: Vec<u32> = probs.iter().map(|&p| 1 + (p / norm * spare).floor() as u32).collect();
    let used: u64 = freqs.iter().map(|&f| f as u64).sum();
    let mut best = 0;
    for (i, &p) in probs.iter().enumerate() {
        if p > probs[best] {
            best = i;
        }
    }
    freqs[best] += (total - used) as u32;
    Ok(freqs)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tables_are_valid() {
        for m in [
            SymbolModel::laplacian(0.01).unwrap(),
            SymbolModel::laplacian(3.0).unwrap(),
            SymbolModel::laplacian(500.0).unwrap(),
            SymbolModel::geometric(2.0, 64).unwrap(),
            SymbolModel::uniform(-3, 9).unwrap(),
        ] {
            assert_eq!(*m.cdf().last().unwrap(), 1 << 16);
            assert!(m.freqs().iter().all(|&f| f >= 1));
            assert!(m.cdf().windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn peaked_laplacian_mass() {
        let m = SymbolModel::laplacian_with_radius(0.01, 15).unwrap();
        // every other slot keeps its floor of one count
        assert_eq!(m.freqs()[15], (1 << 16) - (m.alphabet_size() as u32 - 1));
    }

    #[test]
    fn escape_round_trip() {
        let m = SymbolModel::laplacian(1.0).unwrap();
        for s in [256, -256, 1000, -32000, 255 + 32768, -(255 + 32768)] {
            match m.slot(s).unwrap() {
                Slot::Escape { raw, .. } => assert_eq!(m.symbol_from_escape(raw), s),
                Slot::Direct(_) => panic!("{s} should escape"),
            }
        }
        assert!(m.slot(255 + 32769).is_err());
        assert!(SymbolModel::uniform(0, 3).unwrap().slot(4).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(SymbolModel::laplacian(0.0).is_err());
        assert!(SymbolModel::laplacian(f64::NAN).is_err());
        assert!(SymbolModel::uniform(3, 2).is_err());
        assert!(SymbolModel::new(Family::UniformRange { min: 0, max: 1 }, 20).is_err());
        assert!(SymbolModel::uniform(0, 1 << 16).is_err());
    }
}
