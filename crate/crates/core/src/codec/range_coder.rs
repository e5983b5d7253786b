//! Byte-oriented range coder with carry propagation and adaptive order-0
//! frequency tables. All coder state is integer.

use crate::error::{Error, Result};

const TOP: u32 = 1 << 24;

/// Frequency totals are kept at or below this so `range / total` never drops under 2^8.
pub const MAX_TOTAL: u32 = 1 << 16;

pub struct RangeEncoder {
    low: u64,
    range: u32,
    cache: u8,
    cache_size: u64,
    out: Vec<u8>,
}

impl Default for RangeEncoder {
    fn default() -> Self {
        Self::new()
    }
}

impl RangeEncoder {
    pub fn new() -> Self {
        Self { low: 0, range: u32::MAX, cache: 0, cache_size: 1, out: Vec::new() }
    }

    /// Codes the interval `[cum, cum + freq)` out of `total`.
    pub fn encode(&mut self, cum: u32, freq: u32, total: u32) {
        debug_assert!(freq > 0 && cum + freq <= total && total <= MAX_TOTAL);
        let r = self.range / total;
        self.low += r as u64 * cum as u64;
        self.range = r * freq;
        while self.range < TOP {
            self.range <<= 8;
            self.shift_low();
        }
    }

    /// Codes `nbits` (at most 16) raw, equiprobable bits.
    pub fn encode_bits(&mut self, value: u32, nbits: u32) {
        debug_assert!(nbits <= 16);
        if nbits > 0 {
            self.encode(value & ((1 << nbits) - 1), 1, 1 << nbits);
        }
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
            self.cache = ((self.low as u32) >> 24) as u8;
        }
        self.cache_size += 1;
        self.low = ((self.low as u32) << 8) as u64;
    }

    pub fn finish(mut self) -> Vec<u8> {
        for _ in 0..5 {
            self.shift_low();
        }
        self.out
    }
}

pub struct RangeDecoder<'a> {
    input: &'a [u8],
    pos: usize,
    range: u32,
    code: u32,
    step: u32,
}

impl<'a> RangeDecoder<'a> {
    pub fn new(input: &'a [u8]) -> Self {
        let mut d = Self { input, pos: 0, range: u32::MAX, code: 0, step: 1 };
        for _ in 0..5 {
            d.code = (d.code << 8) | d.next_byte() as u32;
        }
        d
    }

    fn next_byte(&mut self) -> u8 {
        let b = self.input.get(self.pos).copied().unwrap_or(0);
        self.pos += 1;
        b
    }

    /// Returns the scaled target in `[0, total)`; must be followed by [`consume`](Self::consume).
    pub fn target(&mut self, total: u32) -> u32 {
        self.step = self.range / total;
        (self.code / self.step).min(total - 1)
    }

    pub fn consume(&mut self, cum: u32, freq: u32) {
        self.code = self.code.wrapping_sub(self.step * cum);
        self.range = self.step * freq;
        while self.range < TOP {
            self.code = (self.code << 8) | self.next_byte() as u32;
            self.range <<= 8;
        }
    }

    pub fn decode_bits(&mut self, nbits: u32) -> u32 {
        if nbits == 0 {
            return 0;
        }
        let v = self.target(1 << nbits);
        self.consume(v, 1);
        v
    }

    /// Errors if decoding ran meaningfully past the end of the input.
    pub fn check_overrun(&self) -> Result<()> {
        // the encoder flush emits up to 4 bytes the decoder never needs
        if self.pos > self.input.len() + 4 {
            return Err(Error::format(format!(
                "range decoder read {} bytes past a {}-byte payload",
                self.pos - self.input.len(),
                self.input.len()
            )));
        }
        Ok(())
    }
}

/// Adaptive order-0 frequency table over `0..alphabet`.
#[derive(Debug, Clone)]
pub struct AdaptiveModel {
    freqs: Vec<u32>,
    total: u32,
}

const INCREMENT: u32 = 32;

impl AdaptiveModel {
    pub fn new(alphabet: usize) -> Self {
        assert!(alphabet >= 1 && (alphabet as u32) < MAX_TOTAL / 2);
        Self { freqs: vec![1; alphabet], total: alphabet as u32 }
    }

    pub fn alphabet(&self) -> usize {
        self.freqs.len()
    }

    fn update(&mut self, symbol: usize) {
        self.freqs[symbol] += INCREMENT;
        self.total += INCREMENT;
        if self.total > MAX_TOTAL {
            self.total = 0;
            for f in &mut self.freqs {
                *f = (*f).div_ceil(2);
                self.total += *f;
            }
        }
    }

    pub fn encode(&mut self, enc: &mut RangeEncoder, symbol: usize) {
        let cum: u32 = self.freqs[..symbol].iter().sum();
        enc.encode(cum, self.freqs[symbol], self.total);
        self.update(symbol);
    }

    pub fn decode(&mut self, dec: &mut RangeDecoder<'_>) -> usize {
        let target = dec.target(self.total);
        let mut cum = 0;
        let mut symbol = 0;
        while cum + self.freqs[symbol] <= target {
            cum += self.freqs[symbol];
            symbol += 1;
        }
        dec.consume(cum, self.freqs[symbol]);
        self.update(symbol);
        symbol
    }
}

/// Compresses bytes with a single adaptive 256-symbol model.
pub fn compress_bytes(symbols: &[u8]) -> Vec<u8> {
    if symbols.is_empty() {
        return Vec::new();
    }
    let mut enc = RangeEncoder::new();
    let mut model = AdaptiveModel::new(256);
    for &s in symbols {
        model.encode(&mut enc, s as usize);
    }
    enc.finish()
}

pub fn decompress_bytes(data: &[u8], len: usize) -> Result<Vec<u8>> {
    if len == 0 {
        return Ok(Vec::new());
    }
    let mut dec = RangeDecoder::new(data);
    let mut model = AdaptiveModel::new(256);
    let mut out = Vec::with_capacity(len.min(data.len().saturating_mul(1 << 12)));
    for _ in 0..len {
        out.push(model.decode(&mut dec) as u8);
        dec.check_overrun()?;
    }
    Ok(out)
}

/// Encodes then decodes `symbols`, returning the decoded sequence.
pub fn rc_roundtrip(symbols: &[u8]) -> Vec<u8> {
    let packed = compress_bytes(symbols);
    decompress_bytes(&packed, symbols.len()).expect("self-produced stream decodes")
}
