//! Quantization, symbol models and range coding.

mod model;
mod range;

pub use model::{Family, SymbolModel, DEFAULT_PRECISION, DEFAULT_RADIUS, ESCAPE_BITS, MIN_SCALE};
pub use range::{RangeDecoder, RangeEncoder};

use crate::error::{Error, Result};

/// Uniform scalar quantizer, `round(x / step)` with ties away from zero.
pub fn quantize(x: &[f32], step: f64) -> Result<Vec<i32>> {
    check_step(step)?;
    Ok(x.iter().map(|&v| quantize_value(v as f64, step)).collect())
}

#[inline]
pub fn quantize_value(x: f64, step: f64) -> i32 {
    (x / step).round() as i32
}

pub fn dequantize(q: &[i32], step: f64) -> Vec<f32> {
    q.iter().map(|&k| (k as f64 * step) as f32).collect()
}

pub fn check_step(step: f64) -> Result<()> {
    if step.is_finite() && step > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("quantizer step must be positive, got {step}")))
    }
}

/// Range-coded bytes plus rate bookkeeping.
///
/// `exact_bits` is the number of bits the payload occupies on the wire
/// (`8 * bytes.len()`), coder start byte and flush included.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct BitPayload {
    pub bytes: Vec<u8>,
    pub symbol_count: usize,
    pub exact_bits: u64,
}

impl BitPayload {
    pub fn from_bytes(bytes: Vec<u8>, symbol_count: usize) -> Self {
        let exact_bits = 8 * bytes.len() as u64;
        Self { bytes, symbol_count, exact_bits }
    }
}

/// Codes `symbols` with a single model.
pub fn encode_symbols(symbols: &[i32], model: &SymbolModel) -> Result<BitPayload> {
    let mut enc = RangeEncoder::new();
    for &s in symbols {
        enc.encode(s, model)?;
    }
    Ok(BitPayload::from_bytes(enc.finish(), symbols.len()))
}

/// Inverse of [`encode_symbols`]. `count` must match the payload's symbol
/// count and the byte stream must be consumed exactly.
pub fn decode_symbols(payload: &BitPayload, model: &SymbolModel, count: usize) -> Result<Vec<i32>> {
    if count != payload.symbol_count {
        return Err(Error::Malformed(format!("asked for {count} symbols, payload holds {}", payload.symbol_count)));
    }
    let mut dec = RangeDecoder::new(&payload.bytes)?;
    let symbols = (0..count).map(|_| dec.decode(model)).collect::<Result<Vec<_>>>()?;
    dec.finish()?;
    Ok(symbols)
}

/// Ideal code length `Σ -log2 p(s)` of `symbols` under `model`.
pub fn rate_bits(symbols: &[i32], model: &SymbolModel) -> Result<f64> {
    symbols.iter().map(|&s| model.cost_bits(s)).sum()
}
