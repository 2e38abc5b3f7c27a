//! 64-bit carry-less range coder (Subbotin style) at 16-bit probability
//! precision.
//!
//! The encoder flushes the fewest bytes that pin down a value inside the final
//! interval; the decoder reads zeros past the end. Because the decoder tracks
//! the same interval it can recompute that flush and check the stream length
//! exactly. A 16-bit terminator coded after the last symbol catches the
//! truncations that happen to leave a self-consistent tail.

use super::cdf::{table, CdfTable, LaplaceTable, TableIndex, MAX_ESCAPE_PREFIX, PRECISION, SYMBOL_BOUND};
use super::EntropyError;

const TOP: u64 = 1 << 56;
const BOT: u64 = 1 << 48;
const TERMINATOR: u32 = 0xB7E1;

#[inline]
fn settled(low: u64, range: u64) -> bool {
    (low ^ (low + (range - 1))) < TOP
}

/// Smallest `k` and value `v` in `[low, low + range)` whose low `8 − k`
/// bytes are zero.
fn flush_point(low: u64, range: u64) -> (usize, u64) {
    let hi = low as u128 + range as u128 - 1;
    for k in 0..8 {
        let unit = 1u128 << (64 - 8 * k);
        let v = (low as u128).div_ceil(unit) * unit;
        if v <= hi {
            return (k, v as u64);
        }
    }
    (8, low)
}

#[derive(Debug, Clone)]
pub struct RangeEncoder {
    low: u64,
    range: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        RangeEncoder { low: 0, range: u64::MAX, out: Vec::new() }
    }

    /// Narrow to `[cum, cum + freq)` out of 2^16.
    pub fn encode(&mut self, cum: u32, freq: u32) {
        debug_assert!(freq > 0 && cum + freq <= 1 << PRECISION);
        let r = self.range >> PRECISION;
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        loop {
            if !settled(self.low, self.range) {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.out.push((self.low >> 56) as u8);
            self.low <<= 8;
            self.range <<= 8;
        }
    }

    pub fn encode_symbol(&mut self, t: &CdfTable, sym: usize) {
        let (cum, freq) = t.range_of(sym);
        self.encode(cum, freq);
    }

    /// Uniform `bits`-bit value, `bits ≤ 16`.
    pub fn encode_bits(&mut self, value: u32, bits: u32) {
        let step = 1 << (PRECISION - bits);
        self.encode(value * step, step);
    }

    /// Code `s` with the table selected by (μ, b).
    pub fn encode_laplace(&mut self, s: i32, mu: f64, b: f64) -> Result<(), EntropyError> {
        if s.abs() > SYMBOL_BOUND {
            return Err(EntropyError::OutOfRange { value: s as i64, bound: SYMBOL_BOUND });
        }
        let idx = TableIndex::of(mu, b);
        let lt: &LaplaceTable = table(idx);
        let d = s as i64 - idx.center as i64;
        let t = lt.half_width as i64;
        if d.abs() <= t {
            self.encode_symbol(&lt.table, (d + t) as usize);
        } else {
            self.encode_symbol(&lt.table, lt.escape());
            self.encode_bits((d < 0) as u32, 1);
            self.encode_exp_golomb((d.abs() - t - 1) as u32, lt.escape_order);
        }
        Ok(())
    }

    fn encode_exp_golomb(&mut self, x: u32, k: u32) {
        let y = x as u64 + (1u64 << k);
        let nbits = 64 - y.leading_zeros();
        for _ in 0..nbits - k - 1 {
            self.encode_bits(0, 1);
        }
        // The leading one on its own: the decoder reads it while scanning the prefix.
        self.encode_bits(1, 1);
        let mut left = nbits - 1;
        while left > 0 {
            let take = left.min(16);
            left -= take;
            self.encode_bits(((y >> left) & ((1 << take) - 1)) as u32, take);
        }
    }

    pub fn finish(mut self) -> Vec<u8> {
        self.encode_bits(TERMINATOR, 16);
        let (k, v) = flush_point(self.low, self.range);
        self.out.extend_from_slice(&v.to_be_bytes()[..k]);
        self.out
    }
}

#[derive(Debug, Clone)]
pub struct RangeDecoder<'a> {
    bytes: &'a [u8],
    pos: usize,
    low: u64,
    range: u64,
    code: u64,
    shifted: usize,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        let mut d = RangeDecoder { bytes, pos: 0, low: 0, range: u64::MAX, code: 0, shifted: 0 };
        for _ in 0..8 {
            d.code = (d.code << 8) | d.next_byte() as u64;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.bytes.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// The 16-bit target the next symbol's interval must contain.
    fn target(&self) -> Result<(u64, u32), EntropyError> {
        let off = self.code.wrapping_sub(self.low);
        if self.code < self.low || off >= self.range {
            return Err(EntropyError::Corrupt("code left the coding interval".into()));
        }
        let r = self.range >> PRECISION;
        Ok((r, (off / r).min((1 << PRECISION) - 1) as u32))
    }

    fn consume(&mut self, r: u64, cum: u32, freq: u32) {
        self.low += r * cum as u64;
        self.range = r * freq as u64;
        loop {
            if !settled(self.low, self.range) {
                if self.range >= BOT {
                    break;
                }
                self.range = self.low.wrapping_neg() & (BOT - 1);
            }
            self.low <<= 8;
            self.range <<= 8;
            self.code = (self.code << 8) | self.next_byte() as u64;
            self.shifted += 1;
        }
    }

    pub fn decode_symbol(&mut self, t: &CdfTable) -> Result<usize, EntropyError> {
        let (r, target) = self.target()?;
        let sym = t.lookup(target);
        let (cum, freq) = t.range_of(sym);
        self.consume(r, cum, freq);
        Ok(sym)
    }

    pub fn decode_bits(&mut self, bits: u32) -> Result<u32, EntropyError> {
        let (r, target) = self.target()?;
        let step = 1 << (PRECISION - bits);
        let v = target / step;
        self.consume(r, v * step, step);
        Ok(v)
    }

    pub fn decode_laplace(&mut self, mu: f64, b: f64) -> Result<i32, EntropyError> {
        let idx = TableIndex::of(mu, b);
        let lt = table(idx);
        let sym = self.decode_symbol(&lt.table)?;
        if sym != lt.escape() {
            return Ok(idx.center + sym as i32 - lt.half_width);
        }
        let negative = self.decode_bits(1)? == 1;
        let over = self.decode_exp_golomb(lt.escape_order)?;
        let mag = lt.half_width as i64 + 1 + over as i64;
        let s = idx.center as i64 + if negative { -mag } else { mag };
        if s.abs() > SYMBOL_BOUND as i64 {
            return Err(EntropyError::Corrupt(format!("escaped value {s} out of range")));
        }
        Ok(s as i32)
    }

    fn decode_exp_golomb(&mut self, k: u32) -> Result<u32, EntropyError> {
        let mut zeros = 0;
        while self.decode_bits(1)? == 0 {
            zeros += 1;
            if zeros > MAX_ESCAPE_PREFIX {
                return Err(EntropyError::Corrupt("escape prefix too long".into()));
            }
        }
        let mut left = zeros + k;
        let mut y: u64 = 1;
        while left > 0 {
            let take = left.min(16);
            left -= take;
            y = (y << take) | self.decode_bits(take)? as u64;
        }
        Ok((y - (1u64 << k)) as u32)
    }

    /// Check that the stream ends exactly where the encoder's flush did.
    pub fn finish(mut self) -> Result<(), EntropyError> {
        if self.decode_bits(16)? != TERMINATOR {
            return Err(EntropyError::Truncated);
        }
        let (k, v) = flush_point(self.low, self.range);
        if self.bytes.len() != self.shifted + k {
            return Err(EntropyError::Truncated);
        }
        if self.code != v {
            return Err(EntropyError::Corrupt("final code does not match the flush".into()));
        }
        Ok(())
    }
}
