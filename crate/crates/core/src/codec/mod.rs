//! Baseline single-image transform codec.
//!
//! 8x8 orthonormal DCT-II on 8-bit sample values, uniform scalar quantization
//! with a per-quality step, zigzag scan, DPCM on DC, and adaptive range coding
//! with one frequency table per (channel, zigzag position).

pub mod range_coder;

use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::io::MAX_SAMPLES;
use crate::tensor::{Dims, FeatureMap, ImagePlane};
use range_coder::{AdaptiveModel, RangeDecoder, RangeEncoder};

pub use range_coder::rc_roundtrip;

const MAGIC: &[u8; 4] = b"FFCB";
pub const FORMAT_VERSION: u8 = 1;
const BLOCK: usize = 8;
const COEFFS: usize = BLOCK * BLOCK;
/// Magnitude categories 0 (zero) through 16 bits.
const CATEGORIES: usize = 17;

/// Quantizer steps in 8-bit DCT units, coarsest first.
pub const QUANT_STEPS: [f64; 8] = [64.0, 40.0, 26.0, 16.0, 10.0, 7.0, 4.0, 2.5];

/// Quality index `0..=7`; higher means a finer quantizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub struct QualityLevel(u8);

impl QualityLevel {
    pub const COUNT: usize = QUANT_STEPS.len();

    pub fn new(index: u8) -> Result<Self> {
        if (index as usize) < Self::COUNT {
            Ok(Self(index))
        } else {
            Err(Error::input(format!("quality index {index} outside 0..{}", Self::COUNT)))
        }
    }

    pub fn index(self) -> u8 {
        self.0
    }

    pub fn step(self) -> f64 {
        QUANT_STEPS[self.0 as usize]
    }

    pub fn all() -> impl Iterator<Item = QualityLevel> {
        (0..Self::COUNT as u8).map(QualityLevel)
    }
}

impl TryFrom<u8> for QualityLevel {
    type Error = Error;
    fn try_from(v: u8) -> Result<Self> {
        Self::new(v)
    }
}

impl From<QualityLevel> for u8 {
    fn from(q: QualityLevel) -> u8 {
        q.0
    }
}

/// A coded image: header plus range-coded payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bitstream {
    pub version: u8,
    pub dims: Dims,
    pub quality: QualityLevel,
    /// First byte is the channel count, the rest is range coder output.
    pub payload: Vec<u8>,
    pub crc: u32,
}

impl Bitstream {
    fn new(dims: Dims, quality: QualityLevel, payload: Vec<u8>) -> Self {
        let crc = crc32fast::hash(&payload);
        Self { version: FORMAT_VERSION, dims, quality, payload, crc }
    }

    pub fn bit_length(&self) -> u64 {
        self.payload.len() as u64 * 8
    }

    /// Container layout: magic, version, height, width, quality, payload length,
    /// payload, CRC-32 of the payload. Integers are little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.payload.len() + 22);
        out.extend_from_slice(MAGIC);
        out.push(self.version);
        out.extend_from_slice(&(self.dims.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.dims.width as u32).to_le_bytes());
        out.push(self.quality.index());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out.extend_from_slice(&self.crc.to_le_bytes());
        out
    }

    /// Parses a container, returning the stream and the number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != MAGIC {
            return Err(Error::format("bad bitstream magic"));
        }
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::format(format!("unsupported bitstream version {version}")));
        }
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let quality = QualityLevel::new(r.u8()?).map_err(|e| Error::format(e.to_string()))?;
        let len = r.u32()? as usize;
        let payload = r.take(len)?.to_vec();
        let crc = r.u32()?;
        if crc32fast::hash(&payload) != crc {
            return Err(Error::format("bitstream payload CRC mismatch"));
        }
        let stream = Self { version, dims: Dims::new(height, width), quality, payload, crc };
        Ok((stream, r.pos))
    }
}

pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pub(crate) pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format(format!("truncated: wanted {n} bytes at offset {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

fn dct_matrix() -> &'static [[f64; BLOCK]; BLOCK] {
    static M: OnceLock<[[f64; BLOCK]; BLOCK]> = OnceLock::new();
    M.get_or_init(|| {
        let mut m = [[0.0; BLOCK]; BLOCK];
        for (k, row) in m.iter_mut().enumerate() {
            let s = if k == 0 { (1.0 / 8.0f64).sqrt() } else { (2.0 / 8.0f64).sqrt() };
            for (n, v) in row.iter_mut().enumerate() {
                *v = s * (std::f64::consts::PI * (2 * n + 1) as f64 * k as f64 / 16.0).cos();
            }
        }
        m
    })
}

fn zigzag() -> &'static [usize; COEFFS] {
    static Z: OnceLock<[usize; COEFFS]> = OnceLock::new();
    Z.get_or_init(|| {
        let mut order = [0usize; COEFFS];
        let mut i = 0;
        for s in 0..(2 * BLOCK - 1) {
            let range: Vec<usize> = (0..BLOCK).filter(|&r| s >= r && s - r < BLOCK).collect();
            let rows: Vec<usize> = if s % 2 == 0 { range.into_iter().rev().collect() } else { range };
            for r in rows {
                order[i] = r * BLOCK + (s - r);
                i += 1;
            }
        }
        order
    })
}

/// Forward 2D DCT of one block, row-major in and out.
pub fn forward_dct(block: &[f64; COEFFS]) -> [f64; COEFFS] {
    let m = dct_matrix();
    let mut tmp = [0.0; COEFFS];
    for y in 0..BLOCK {
        for k in 0..BLOCK {
            tmp[y * BLOCK + k] = (0..BLOCK).map(|n| m[k][n] * block[y * BLOCK + n]).sum();
        }
    }
    let mut out = [0.0; COEFFS];
    for k in 0..BLOCK {
        for x in 0..BLOCK {
            out[k * BLOCK + x] = (0..BLOCK).map(|n| m[k][n] * tmp[n * BLOCK + x]).sum();
        }
    }
    out
}

pub fn inverse_dct(coef: &[f64; COEFFS]) -> [f64; COEFFS] {
    let m = dct_matrix();
    let mut tmp = [0.0; COEFFS];
    for k in 0..BLOCK {
        for x in 0..BLOCK {
            tmp[k * BLOCK + x] = (0..BLOCK).map(|u| m[u][x] * coef[k * BLOCK + u]).sum();
        }
    }
    let mut out = [0.0; COEFFS];
    for y in 0..BLOCK {
        for x in 0..BLOCK {
            out[y * BLOCK + x] = (0..BLOCK).map(|v| m[v][y] * tmp[v * BLOCK + x]).sum();
        }
    }
    out
}

/// Quantized coefficients of every block, per channel, in raster block order.
/// Row-major within a block (not zigzag).
pub fn quantize_image(image: &ImagePlane, q: QualityLevel) -> Result<Vec<Vec<[i32; COEFFS]>>> {
    let (padded, _) = image.pad_replicate(BLOCK)?;
    let map = padded.as_map();
    let (bh, bw) = (map.height() / BLOCK, map.width() / BLOCK);
    let step = q.step();
    let mut out = Vec::with_capacity(map.channels());
    for c in 0..map.channels() {
        let mut blocks = Vec::with_capacity(bh * bw);
        for by in 0..bh {
            for bx in 0..bw {
                let mut px = [0.0f64; COEFFS];
                for y in 0..BLOCK {
                    let row = &map.row(c, by * BLOCK + y)[bx * BLOCK..(bx + 1) * BLOCK];
                    for x in 0..BLOCK {
                        px[y * BLOCK + x] = row[x] as f64 * 255.0;
                    }
                }
                let coef = forward_dct(&px);
                let mut qb = [0i32; COEFFS];
                for (dst, &v) in qb.iter_mut().zip(&coef) {
                    *dst = (v / step).round() as i32;
                }
                blocks.push(qb);
            }
        }
        out.push(blocks);
    }
    Ok(out)
}

fn category(v: i32) -> usize {
    (32 - v.unsigned_abs().leading_zeros()) as usize
}

pub fn encode_image(image: &ImagePlane, q: QualityLevel) -> Result<Bitstream> {
    if image.dims().area() == 0 {
        return Err(Error::input("cannot encode an empty image"));
    }
    let blocks = quantize_image(image, q)?;
    let zz = zigzag();
    let mut enc = RangeEncoder::new();
    for channel in &blocks {
        let mut models: Vec<AdaptiveModel> = (0..COEFFS).map(|_| AdaptiveModel::new(CATEGORIES)).collect();
        let mut prev_dc = 0i32;
        for block in channel {
            for (k, &pos) in zz.iter().enumerate() {
                let mut v = block[pos];
                if k == 0 {
                    let dc = v;
                    v -= prev_dc;
                    prev_dc = dc;
                }
                let cat = category(v);
                if cat >= CATEGORIES {
                    return Err(Error::Invariant(format!("coefficient {v} exceeds 16 bits")));
                }
                models[k].encode(&mut enc, cat);
                if cat > 0 {
                    enc.encode_bits((v < 0) as u32, 1);
                    enc.encode_bits(v.unsigned_abs(), cat as u32 - 1);
                }
            }
        }
    }
    let mut payload = vec![image.channels() as u8];
    payload.extend(enc.finish());
    Ok(Bitstream::new(image.dims(), q, payload))
}

pub fn decode_image(stream: &Bitstream) -> Result<ImagePlane> {
    if crc32fast::hash(&stream.payload) != stream.crc {
        return Err(Error::format("bitstream payload CRC mismatch"));
    }
    let dims = stream.dims;
    let channels = *stream.payload.first().ok_or_else(|| Error::format("empty payload"))? as usize;
    if channels != 1 && channels != 3 {
        return Err(Error::format(format!("bad channel count {channels}")));
    }
    let padded = dims.round_up(BLOCK);
    if dims.area() == 0 || padded.area().saturating_mul(channels) > MAX_SAMPLES {
        return Err(Error::format(format!("implausible image dims {dims}")));
    }
    let (bh, bw) = (padded.height / BLOCK, padded.width / BLOCK);
    let step = stream.quality.step();
    let zz = zigzag();
    let mut dec = RangeDecoder::new(&stream.payload[1..]);
    let mut data = vec![0.0f32; channels * padded.area()];
    for c in 0..channels {
        let mut models: Vec<AdaptiveModel> = (0..COEFFS).map(|_| AdaptiveModel::new(CATEGORIES)).collect();
        let mut prev_dc = 0i32;
        let plane = &mut data[c * padded.area()..(c + 1) * padded.area()];
        for by in 0..bh {
            for bx in 0..bw {
                let mut coef = [0.0f64; COEFFS];
                for (k, &pos) in zz.iter().enumerate() {
                    let cat = models[k].decode(&mut dec);
                    let mut v = 0i32;
                    if cat > 0 {
                        let neg = dec.decode_bits(1) == 1;
                        let low = dec.decode_bits(cat as u32 - 1);
                        let mag = ((1u32 << (cat - 1)) | low) as i32;
                        v = if neg { -mag } else { mag };
                    }
                    if k == 0 {
                        v = v.wrapping_add(prev_dc);
                        prev_dc = v;
                    }
                    coef[pos] = v as f64 * step;
                }
                dec.check_overrun()?;
                let px = inverse_dct(&coef);
                for y in 0..BLOCK {
                    let row = &mut plane[(by * BLOCK + y) * padded.width + bx * BLOCK..][..BLOCK];
                    for x in 0..BLOCK {
                        row[x] = ((px[y * BLOCK + x] / 255.0) as f32).clamp(0.0, 1.0);
                    }
                }
            }
        }
    }
    let full = FeatureMap::new(channels, padded.height, padded.width, data)?;
    ImagePlane::from_map(full.crop_to(dims)?)
}

/// Bits per pixel of a stream for an image of `dims`.
pub fn bpp(stream: &Bitstream, dims: Dims) -> f64 {
    bits_per_pixel(stream.bit_length(), dims)
}

pub fn bits_per_pixel(bits: u64, dims: Dims) -> f64 {
    bits as f64 / dims.area() as f64
}
