//! Binary PNM images and the `FFCA` feature fixture container.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ImagePlane};

const FIXTURE_MAGIC: &[u8; 4] = b"FFCA";
const FIXTURE_VERSION: u8 = 1;

/// Largest sample count accepted from any untrusted header.
pub(crate) const MAX_SAMPLES: usize = 1 << 28;

/// Encodes as `P6` (3 channels) or `P5` (1 channel), 8-bit.
pub fn encode_pnm(image: &ImagePlane) -> Vec<u8> {
    let (h, w, c) = (image.height(), image.width(), image.channels());
    let tag = if c == 3 { "P6" } else { "P5" };
    let mut out = format!("{tag}\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * c);
    let map = image.as_map();
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                out.push(to_u8(map.get(ch, y, x)));
            }
        }
    }
    out
}

#[inline]
pub(crate) fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decodes binary `P6`/`P5` with maxval 255. Values map to `[0,1]` by `/255`.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImagePlane> {
    let mut pos = 0usize;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format("truncated PNM header"));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(Error::format(format!("unsupported PNM magic `{other}`"))),
    };
    let parse =
        |s: String| -> Result<usize> { s.parse().map_err(|_| Error::format(format!("bad PNM header field `{s}`"))) };
    let width = parse(token()?)?;
    let height = parse(token()?)?;
    let maxval = parse(token()?)?;
    if maxval != 255 {
        return Err(Error::format(format!("only 8-bit PNM supported, maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width
        .checked_mul(height)
        .and_then(|v| v.checked_mul(channels))
        .filter(|&n| n > 0 && n <= MAX_SAMPLES)
        .ok_or_else(|| Error::format(format!("implausible PNM dims {width}x{height}")))?;
    let raster = bytes.get(pos..pos + n).ok_or_else(|| Error::format("truncated PNM raster"))?;
    let mut data = vec![0.0f32; n];
    let plane = width * height;
    for (i, px) in raster.chunks_exact(channels).enumerate() {
        for (ch, &b) in px.iter().enumerate() {
            data[ch * plane + i] = b as f32 / 255.0;
        }
    }
    ImagePlane::new(channels, height, width, data)
}

pub fn read_pnm(path: impl AsRef<Path>) -> Result<ImagePlane> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_pnm(path: impl AsRef<Path>, image: &ImagePlane) -> Result<()> {
    std::fs::write(path, encode_pnm(image))?;
    Ok(())
}

/// Writes one channel of a map as an 8-bit PGM, linearly scaled from `[lo, hi]`.
pub fn write_pgm_scaled(path: impl AsRef<Path>, map: &FeatureMap, lo: f32, hi: f32) -> Result<()> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let data = map.channel(0).iter().map(|&v| (v - lo) / span).collect();
    let img = ImagePlane::from_map_clamped(FeatureMap::from_raw(1, map.height(), map.width(), data))?;
    write_pnm(path, &img)
}

/// Serializes maps into the `FFCA` fixture layout.
pub fn write_fixture<W: Write>(mut w: W, levels: &[FeatureMap]) -> Result<()> {
    if levels.len() > u8::MAX as usize {
        return Err(Error::input("too many levels for a fixture"));
    }
    w.write_all(FIXTURE_MAGIC)?;
    w.write_all(&[FIXTURE_VERSION, levels.len() as u8])?;
    for m in levels {
        for d in [m.channels(), m.height(), m.width()] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(m.data().len() * 4);
        for v in m.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

pub fn read_fixture<R: Read>(mut r: R) -> Result<Vec<FeatureMap>> {
    let mut head = [0u8; 6];
    r.read_exact(&mut head).map_err(|_| Error::format("truncated fixture header"))?;
    if &head[..4] != FIXTURE_MAGIC {
        return Err(Error::format("bad fixture magic"));
    }
    if head[4] != FIXTURE_VERSION {
        return Err(Error::format(format!("unsupported fixture version {}", head[4])));
    }
    let mut levels = Vec::with_capacity(head[5] as usize);
    for _ in 0..head[5] {
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| Error::format("truncated fixture level header"))?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let n = dims[0]
            .checked_mul(dims[1])
            .and_then(|v| v.checked_mul(dims[2]))
            .filter(|&n| n <= MAX_SAMPLES)
            .ok_or_else(|| Error::format("implausible fixture dims"))?;
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw).map_err(|_| Error::format("truncated fixture samples"))?;
        let data = raw.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
        levels.push(FeatureMap::new(dims[0], dims[1], dims[2], data)?);
    }
    Ok(levels)
}
