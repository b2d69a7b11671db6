//! Byte-oriented range coder with carry propagation.
//!
//! State is a 32-bit `range` and a 33-bit `low` (kept in a `u64` so the carry
//! can be observed). A symbol with cumulative frequency `cum`, frequency `freq`
//! and total `2^shift` narrows the interval to
//! `low += (range >> shift) * cum; range = (range >> shift) * freq`.
//! Whenever `range < 2^24` the top byte of `low` is shifted out. Bytes equal to
//! `0xFF` are held back in a pending run until it is known whether a carry
//! will ripple into them.
//!
//! The stream starts with the initial cache byte (almost always `0x00`) and is
//! terminated by five forced shifts, so the decoder consumes exactly the bytes
//! the encoder wrote: five to prime `code`, then one per renormalization.

use crate::error::{Error, Result};

use super::model::{Slot, SymbolModel, ESCAPE_BITS};

const TOP: u32 = 1 << 24;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
    symbols: usize,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new(), symbols: 0 }
    }

    fn shift_low(&mut self) {
        if (self.low as u32) < 0xFF00_0000 || (self.low >> 32) != 0 {
            let carry = (self.low >> 32) as u8;
            let mut temp = self.cache;
            loop {
                self.out.push(temp.wrapping_add(carry));
                temp = 0xFF;
                self.cache_size -= 1;
                if self.cache_size == 0 {
                    break;
                }
            }
            self.cache = ((self.low >> 24) & 0xFF) as u8;
        }
        self.cache_size += 1;
        self.low = (self.low & 0x00FF_FFFF) << 8;
    }

    #[inline]
    fn encode_freq(&mut self, cum: u32, freq: u32, shift: u32) {
        let r = self.range >> shift;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Writes `bits` (at most 16) equiprobable bits.
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        debug_assert!(bits <= 16 && value < (1 << bits));
        self.encode_freq(value, 1, bits);
    }

    pub fn encode(&mut self, symbol: i32, model: &SymbolModel) -> Result<()> {
        let shift = model.precision();
        match model.slot(symbol)? {
            Slot::Direct(s) => self.encode_freq(model.cdf()[s], model.freqs()[s], shift),
            Slot::Escape { slot, raw } => {
                self.encode_freq(model.cdf()[slot], model.freqs()[slot], shift);
                self.encode_bits(raw, ESCAPE_BITS);
            }
        }
        self.symbols += 1;
        Ok(())
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    code: u32,
    range: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Result<Self> {
        let mut dec = Self { bytes, pos: 0, code: 0, range: u32::MAX };
        for _ in 0..5 {
            let b = dec.next_byte()?;
            dec.code = (dec.code << 8) | b as u32;
        }
        Ok(dec)
    }

    #[inline]
    fn next_byte(&mut self) -> Result<u8> {
        let b = *self
            .bytes
            .get(self.pos)
            .ok_or_else(|| Error::Truncated(format!("range decoder needs byte {} of {}", self.pos + 1, self.bytes.len())))?;
        self.pos += 1;
        Ok(b)
    }

    #[inline]
    fn target(&mut self, shift: u32) -> Result<(u32, u32)> {
        let r = self.range >> shift;
        let value = self.code / r;
        if value >> shift != 0 {
            return Err(Error::Malformed("range decoder state outside the interval".into()));
        }
        Ok((r, value))
    }

    #[inline]
    fn consume(&mut self, r: u32, cum: u32, freq: u32) -> Result<()> {
        self.code -= r * cum;
        self.range = r * freq;
        while self.range < TOP {
            let b = self.next_byte()?;
            self.code = (self.code << 8) | b as u32;
            self.range <<= 8;
        }
        Ok(())
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32> {
        let (r, value) = self.target(bits)?;
        self.consume(r, value, 1)?;
        Ok(value)
    }

    pub fn decode(&mut self, model: &SymbolModel) -> Result<i32> {
        let (r, value) = self.target(model.precision())?;
        let slot = model.find_slot(value);
        self.consume(r, model.cdf()[slot], model.freqs()[slot])?;
        if Some(slot) == model.escape_slot() {
            let raw = self.decode_bits(ESCAPE_BITS)?;
            Ok(model.symbol_from_escape(raw))
        } else {
            Ok(model.symbol_of_slot(slot))
        }
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    /// Errors unless every byte of the stream was consumed.
    pub fn finish(self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Malformed(format!("{} trailing bytes after the last symbol", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
