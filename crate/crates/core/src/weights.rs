//! Layer tables for the refinement hourglass and the fusion stages, plus the
//! `FFCW` weights container.
//!
//! Layout of an `FFCW` file: magic, version `u8`, entry count `u32`, then per
//! entry a `u16` name length, the UTF-8 name, a `u8` rank, `rank` dims as
//! `u32` and the `f32` values. Integers and floats are little-endian. One
//! entry named `meta` holds the [`NetworkConfig`] as five floats.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::ByteReader;
use crate::error::{Error, Result};
use crate::nn::ConvSpec;

pub const WEIGHTS_MAGIC: &[u8; 4] = b"FFCW";
pub const WEIGHTS_VERSION: u8 = 1;
const META: &str = "meta";

/// Hyper-parameters that determine every layer shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct NetworkConfig {
    /// Feature channels per pyramid level.
    pub channels: usize,
    /// Number of disparity hypotheses emitted by the hourglass.
    pub hypotheses: usize,
    /// Group count of the hourglass convolutions.
    pub groups: usize,
    /// Hourglass hidden width.
    pub hidden: usize,
    /// Channels of the reconstructed image.
    pub image_channels: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self { channels: 128, hypotheses: 8, groups: 4, hidden: 32, image_channels: 3 }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if self.channels == 0 || self.hypotheses == 0 || g == 0 || self.hidden == 0 {
            return Err(Error::input("network sizes must be positive"));
        }
        if !(2 * self.channels).is_multiple_of(g) || !self.hidden.is_multiple_of(g) {
            return Err(Error::input(format!(
                "groups={g} must divide 2C={} and hidden={}",
                2 * self.channels,
                self.hidden
            )));
        }
        if !matches!(self.image_channels, 1 | 3) {
            return Err(Error::input("image channels must be 1 or 3"));
        }
        Ok(())
    }

    /// Refinement layers in evaluation order.
    pub fn refinement_layers(&self) -> Vec<(String, ConvSpec)> {
        let (c2, hid, g) = (2 * self.channels, self.hidden, self.groups);
        let mut layers = Vec::new();
        for level in 1..=3 {
            layers.push((format!("hg.l{level}.stem"), ConvSpec::conv(c2, hid, 3, 1, g)));
            for block in 0..2 {
                for conv in 0..2 {
                    layers.push((format!("hg.l{level}.res{block}.conv{conv}"), ConvSpec::conv(hid, hid, 3, 1, g)));
                }
            }
        }
        layers.push(("hg.down1".into(), ConvSpec::conv(hid, hid, 3, 2, g)));
        layers.push(("hg.down2".into(), ConvSpec::conv(hid, hid, 3, 2, g)));
        layers.push(("hg.up2".into(), ConvSpec::up2(hid, hid, g)));
        layers.push(("hg.up1".into(), ConvSpec::up2(hid, hid, g)));
        layers.push(("hg.head".into(), ConvSpec::pointwise(hid, self.hypotheses)));
        layers
    }

    /// Fusion layers of stage `stage` in `1..=4`.
    pub fn fusion_stage_layers(&self, stage: usize) -> Vec<(String, ConvSpec)> {
        let c = self.channels;
        let inputs = if stage == 4 { 2 } else { 3 };
        let out = if stage == 1 { self.image_channels } else { c };
        let p = format!("fff.stage{stage}");
        vec![
            (format!("{p}.dw1"), ConvSpec::depthwise(inputs * c, 3)),
            (format!("{p}.pw1"), ConvSpec::pointwise(inputs * c, c)),
            (format!("{p}.dw2"), ConvSpec::depthwise(c, 3)),
            (format!("{p}.pw2"), ConvSpec::pointwise(c, out)),
        ]
    }

    /// All fusion layers, stage 4 first.
    pub fn fusion_layers(&self) -> Vec<(String, ConvSpec)> {
        (1..=4).rev().flat_map(|s| self.fusion_stage_layers(s)).collect()
    }

    pub fn layers(&self) -> Vec<(String, ConvSpec)> {
        let mut all = self.refinement_layers();
        all.extend(self.fusion_layers());
        all
    }

    pub fn refinement_params(&self) -> usize {
        self.refinement_layers().iter().map(|(_, s)| s.param_count()).sum()
    }

    pub fn fusion_params(&self) -> usize {
        self.fusion_layers().iter().map(|(_, s)| s.param_count()).sum()
    }

    /// Human-readable table of every tensor the architecture expects.
    pub fn describe(&self) -> String {
        let mut out = String::new();
        let mut section = |title: &str, layers: &[(String, ConvSpec)], total: usize| {
            out.push_str(&format!("{title}\n"));
            for (name, spec) in layers {
                let shape: Vec<String> = spec.weight_shape().iter().map(|d| d.to_string()).collect();
                out.push_str(&format!(
                    "  {name:<24} weight [{}]  bias [{}]  params {}\n",
                    shape.join(", "),
                    spec.out_channels,
                    spec.param_count()
                ));
            }
            out.push_str(&format!("  total {total} ({:.3}M)\n", total as f64 / 1e6));
        };
        section("refinement", &self.refinement_layers(), self.refinement_params());
        section("fusion", &self.fusion_layers(), self.fusion_params());
        out
    }

    fn to_meta(self) -> Vec<f32> {
        [self.channels, self.hypotheses, self.groups, self.hidden, self.image_channels]
            .iter()
            .map(|&v| v as f32)
            .collect()
    }

    fn from_meta(values: &[f32]) -> Result<Self> {
        if values.len() != 5 || values.iter().any(|v| !(v.is_finite() && *v >= 0.0 && v.fract() == 0.0)) {
            return Err(Error::weights(META, "expected five non-negative integers"));
        }
        let v: Vec<usize> = values.iter().map(|&x| x as usize).collect();
        let config = Self { channels: v[0], hypotheses: v[1], groups: v[2], hidden: v[3], image_channels: v[4] };
        config.validate()?;
        Ok(config)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// Named tensor table for one architecture instance.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    config: NetworkConfig,
    tensors: BTreeMap<String, Tensor>,
}

impl NetworkWeights {
    /// Builds and validates a table.
    pub fn new(config: NetworkConfig, tensors: BTreeMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        let w = Self { config, tensors };
        w.validate()?;
        Ok(w)
    }

    fn filled(config: NetworkConfig, mut fill: impl FnMut(&ConvSpec, usize) -> f32) -> Result<Self> {
        config.validate()?;
        let mut tensors = BTreeMap::new();
        for (name, spec) in config.layers() {
            let weight: Vec<f32> = (0..spec.weight_len()).map(|_| fill(&spec, 0)).collect();
            let bias: Vec<f32> = (0..spec.out_channels).map(|_| fill(&spec, 1)).collect();
            tensors.insert(format!("{name}.weight"), Tensor { shape: spec.weight_shape(), values: weight });
            tensors.insert(format!("{name}.bias"), Tensor { shape: vec![spec.out_channels], values: bias });
        }
        Ok(Self { config, tensors })
    }

    /// All weights and biases zero.
    pub fn zeros(config: NetworkConfig) -> Result<Self> {
        Self::filled(config, |_, _| 0.0)
    }

    /// Uniform fan-in scaled weights and small biases from a seeded generator.
    pub fn random(config: NetworkConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::filled(config, |spec, part| {
            let fan_in = if spec.transposed {
                (spec.in_channels / spec.groups) * spec.kernel * spec.kernel / (spec.stride * spec.stride)
            } else {
                (spec.in_channels / spec.groups) * spec.kernel * spec.kernel
            };
            let bound = (1.0 / fan_in.max(1) as f32).sqrt();
            if part == 0 {
                rng.random_range(-bound..bound)
            } else {
                rng.random_range(-0.1 * bound..0.1 * bound)
            }
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn tensors(&self) -> &BTreeMap<String, Tensor> {
        &self.tensors
    }

    /// Checks that every architecture tensor is present, shaped right and finite.
    pub fn validate(&self) -> Result<()> {
        let layers = self.config.layers();
        for (name, spec) in &layers {
            let expect =
                [(format!("{name}.weight"), spec.weight_shape()), (format!("{name}.bias"), vec![spec.out_channels])];
            for (key, shape) in expect {
                let t = self.tensors.get(&key).ok_or_else(|| Error::weights(&key, "missing"))?;
                if t.shape != shape {
                    return Err(Error::weights(&key, format!("shape {:?}, expected {:?}", t.shape, shape)));
                }
                if t.values.len() != shape.iter().product::<usize>() {
                    return Err(Error::weights(&key, "value count does not match shape"));
                }
                if let Some(i) = t.values.iter().position(|v| !v.is_finite()) {
                    return Err(Error::weights(&key, format!("non-finite value at index {i}")));
                }
            }
        }
        if self.tensors.len() != 2 * layers.len() {
            let known: std::collections::HashSet<String> =
                layers.iter().flat_map(|(n, _)| [format!("{n}.weight"), format!("{n}.bias")]).collect();
            let extra = self.tensors.keys().find(|k| !known.contains(*k)).expect("extra key");
            return Err(Error::weights(extra, "not part of the architecture"));
        }
        Ok(())
    }

    /// Weight and bias of layer `name`, checked against `spec`.
    pub fn layer(&self, name: &str, spec: &ConvSpec) -> Result<(&[f32], &[f32])> {
        let get = |suffix: &str, shape: Vec<usize>| -> Result<&[f32]> {
            let key = format!("{name}.{suffix}");
            let t = self.tensors.get(&key).ok_or_else(|| Error::weights(&key, "missing"))?;
            if t.shape != shape {
                return Err(Error::weights(&key, format!("shape {:?}, expected {:?}", t.shape, shape)));
            }
            Ok(&t.values)
        };
        Ok((get("weight", spec.weight_shape())?, get("bias", vec![spec.out_channels])?))
    }

    pub fn param_count(&self) -> usize {
        self.tensors.values().map(|t| t.values.len()).sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(WEIGHTS_MAGIC);
        out.push(WEIGHTS_VERSION);
        out.extend_from_slice(&((self.tensors.len() + 1) as u32).to_le_bytes());
        let meta = Tensor { shape: vec![5], values: self.config.to_meta() };
        for (name, t) in std::iter::once((&META.to_string(), &meta)).chain(self.tensors.iter()) {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(t.shape.len() as u8);
            for &d in &t.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in &t.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        w.write_all(&out)?;
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        if r.take(4)? != WEIGHTS_MAGIC {
            return Err(Error::format("not an FFCW weights file"));
        }
        let version = r.u8()?;
        if version != WEIGHTS_VERSION {
            return Err(Error::format(format!("unsupported weights version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = BTreeMap::new();
        let mut meta = None;
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name =
                std::str::from_utf8(r.take(len)?).map_err(|_| Error::format("tensor name is not UTF-8"))?.to_string();
            let rank = r.u8()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u32()? as usize);
            }
            let n = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .filter(|&n| n <= bytes.len() / 4)
                .ok_or_else(|| Error::format(format!("tensor `{name}` is larger than the file")))?;
            let raw = r.take(n * 4)?;
            let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
            let t = Tensor { shape, values };
            if name == META {
                meta = Some(t);
            } else if tensors.insert(name.clone(), t).is_some() {
                return Err(Error::format(format!("duplicate tensor `{name}`")));
            }
        }
        if r.remaining() != 0 {
            return Err(Error::format("trailing bytes after the last tensor"));
        }
        let meta = meta.ok_or_else(|| Error::weights(META, "missing"))?;
        Self::new(NetworkConfig::from_meta(&meta.values)?, tensors)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut bytes = Vec::new();
        self.write_to(&mut bytes)?;
        std::fs::write(path, bytes)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NetworkConfig {
        NetworkConfig { channels: 8, hypotheses: 4, groups: 4, hidden: 8, image_channels: 3 }
    }

    #[test]
    fn default_budgets() {
        let cfg = NetworkConfig::default();
        assert!(cfg.refinement_params() <= 300_000, "{}", cfg.refinement_params());
        assert!(cfg.fusion_params() <= 3_500_000, "{}", cfg.fusion_params());
        let w = NetworkWeights::zeros(cfg).unwrap();
        assert_eq!(w.param_count(), cfg.refinement_params() + cfg.fusion_params());
    }

    #[test]
    fn file_round_trip() {
        let w = NetworkWeights::random(small(), 3).unwrap();
        let mut bytes = Vec::new();
        w.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"FFCW");
        assert_eq!(NetworkWeights::from_bytes(&bytes).unwrap(), w);
    }

    #[test]
    fn truncated_file_is_format_error() {
        let w = NetworkWeights::random(small(), 3).unwrap();
        let mut bytes = Vec::new();
        w.write_to(&mut bytes).unwrap();
        for cut in [3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(NetworkWeights::from_bytes(&bytes[..cut]).is_err());
        }
    }

    #[test]
    fn wrong_shape_names_the_layer() {
        let w = NetworkWeights::random(small(), 1).unwrap();
        let mut tensors = w.tensors().clone();
        tensors.get_mut("hg.up1.weight").unwrap().shape[0] += 1;
        let err = NetworkWeights::new(small(), tensors).unwrap_err();
        assert!(err.to_string().contains("hg.up1.weight"), "{err}");

        let mut tensors = w.tensors().clone();
        tensors.remove("fff.stage2.pw1.bias");
        let err = NetworkWeights::new(small(), tensors).unwrap_err();
        assert!(err.to_string().contains("fff.stage2.pw1.bias"), "{err}");
    }

    #[test]
    fn random_is_seeded() {
        let a = NetworkWeights::random(small(), 9).unwrap();
        let b = NetworkWeights::random(small(), 9).unwrap();
        let c = NetworkWeights::random(small(), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn describe_lists_every_layer() {
        let text = small().describe();
        for (name, _) in small().layers() {
            assert!(text.contains(&name), "{name}");
        }
    }
}
