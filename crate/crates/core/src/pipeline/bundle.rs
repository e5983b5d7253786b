//! `FFCZ` container: magic, version `u8`, then `u32`-length-prefixed main
//! bitstream, a side flag byte with (if set) the `u32`-length-prefixed side
//! image as PNM bytes, the `u32`-length-prefixed JSON config echo, and a
//! CRC-32 of everything before it.

use crate::codec::{Bitstream, ByteReader};
use crate::error::{Error, Result};
use crate::io::{decode_pnm, encode_pnm};
use crate::tensor::ImagePlane;

use super::PipelineConfig;

pub const BUNDLE_MAGIC: &[u8; 4] = b"FFCZ";
pub const BUNDLE_VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub main: Bitstream,
    /// The side view, unless it travels separately.
    pub side: Option<ImagePlane>,
    pub config: PipelineConfig,
}

impl Bundle {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_MAGIC);
        out.push(BUNDLE_VERSION);
        let main = self.main.to_bytes();
        out.extend_from_slice(&(main.len() as u32).to_le_bytes());
        out.extend_from_slice(&main);
        match &self.side {
            Some(side) => {
                let pnm = encode_pnm(side);
                out.push(1);
                out.extend_from_slice(&(pnm.len() as u32).to_le_bytes());
                out.extend_from_slice(&pnm);
            }
            None => out.push(0),
        }
        let json = serde_json::to_vec(&self.config).expect("config serializes");
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 9 {
            return Err(Error::format("bundle is truncated"));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(body) != stored {
            return Err(Error::format("bundle CRC mismatch"));
        }
        let mut r = ByteReader::new(body);
        if r.take(4)? != BUNDLE_MAGIC {
            return Err(Error::format("not an FFCZ bundle"));
        }
        let version = r.u8()?;
        if version != BUNDLE_VERSION {
            return Err(Error::format(format!("unsupported bundle version {version}")));
        }
        let len = r.u32()? as usize;
        let (main, used) = Bitstream::from_bytes(r.take(len)?)?;
        if used != len {
            return Err(Error::format("main bitstream length disagrees with its header"));
        }
        let side = match r.u8()? {
            0 => None,
            1 => {
                let len = r.u32()? as usize;
                Some(decode_pnm(r.take(len)?).map_err(|e| Error::format(format!("side image: {e}")))?)
            }
            f => return Err(Error::format(format!("bad side flag {f}"))),
        };
        let len = r.u32()? as usize;
        let config: PipelineConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::format(format!("config echo: {e}")))?;
        config.validate()?;
        if r.remaining() != 0 {
            return Err(Error::format("trailing bytes in bundle"));
        }
        if let Some(s) = &side {
            if s.dims() != main.dims {
                return Err(Error::format(format!("side image {} does not match main {}", s.dims(), main.dims)));
            }
        }
        Ok(Self { main, side, config })
    }
}
