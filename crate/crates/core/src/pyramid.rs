//! Deterministic multi-scale feature extraction.
//!
//! A fixed bank of 3x3 kernels stands in for learned encoder/decoder features.
//! Channel `k` of level 1 applies kernel kind `k % 5` (blur, Sobel-x, Sobel-y,
//! Laplacian, identity; identity widens to a box mean of radius `dilation - 1`)
//! to source image channel `(k / 5) % image_channels`,
//! at dilation `1 + (k / (5 * image_channels)) % 8`, on the half-resolution
//! image. Channels that would repeat an earlier (kind, source, dilation)
//! triple get an extra gain so no two channels are identical. Levels 2..4 are
//! successive 2x2 average pools of level 1.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Dims, FeatureMap, ImagePlane};

pub const LEVELS: usize = 4;

/// Inputs are padded to this multiple so each of the four halvings is exact.
pub const PYRAMID_MULTIPLE: usize = 1 << LEVELS;

/// Which signal a pyramid was extracted from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PyramidRole {
    /// Features of the decoded main view.
    MainHat,
    /// Features of the losslessly available side view.
    SideLossless,
    /// Side features after patch rearrangement.
    SideCoarse,
    /// Side features after sparse disparity warping.
    SideFine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ExtractorConfig {
    /// Feature channels per level.
    pub channels: usize,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { channels: 128 }
    }
}

/// Four feature levels; level `i` (1-based) sits at `image / 2^i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    levels: Vec<FeatureMap>,
    role: PyramidRole,
}

impl FeaturePyramid {
    pub fn new(levels: Vec<FeatureMap>, role: PyramidRole) -> Result<Self> {
        if levels.len() != LEVELS {
            return Err(Error::input(format!("a pyramid has exactly {LEVELS} levels, got {}", levels.len())));
        }
        let c = levels[0].channels();
        for i in 1..LEVELS {
            let (prev, cur) = (&levels[i - 1], &levels[i]);
            if cur.channels() != c {
                return Err(Error::shape(format!("level {} has {} channels, level 1 has {c}", i + 1, cur.channels())));
            }
            if prev.height() != 2 * cur.height() || prev.width() != 2 * cur.width() {
                return Err(Error::shape(format!(
                    "level {} dims {} are not half of level {} dims {}",
                    i + 1,
                    cur.dims(),
                    i,
                    prev.dims()
                )));
            }
        }
        Ok(Self { levels, role })
    }

    /// Level `i` in `1..=4`.
    pub fn level(&self, i: usize) -> &FeatureMap {
        &self.levels[i - 1]
    }

    pub fn levels(&self) -> &[FeatureMap] {
        &self.levels
    }

    pub fn into_levels(self) -> Vec<FeatureMap> {
        self.levels
    }

    pub fn role(&self) -> PyramidRole {
        self.role
    }

    pub fn channels(&self) -> usize {
        self.levels[0].channels()
    }

    pub fn with_role(self, role: PyramidRole) -> Self {
        Self { role, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum KernelKind {
    Blur,
    SobelX,
    SobelY,
    Laplacian,
    Identity,
}

const KINDS: [KernelKind; 5] =
    [KernelKind::Blur, KernelKind::SobelX, KernelKind::SobelY, KernelKind::Laplacian, KernelKind::Identity];

const MAX_DILATION: usize = 8;

#[derive(Debug, Clone, Copy)]
struct ChannelSpec {
    kind: KernelKind,
    source: usize,
    dilation: usize,
    gain: f32,
}

fn channel_spec(k: usize, image_channels: usize) -> ChannelSpec {
    let per_dilation = KINDS.len() * image_channels;
    let cycle = k / (per_dilation * MAX_DILATION);
    ChannelSpec {
        kind: KINDS[k % KINDS.len()],
        source: (k / KINDS.len()) % image_channels,
        dilation: 1 + (k / per_dilation) % MAX_DILATION,
        gain: 1.0 + 0.5 * cycle as f32,
    }
}

/// Extracts a 4-level pyramid. The image is replication-padded to a multiple
/// of 16 first, so level 1 has dims `ceil16(H) / 2 x ceil16(W) / 2`.
pub fn extract_pyramid(image: &ImagePlane, config: &ExtractorConfig, role: PyramidRole) -> Result<FeaturePyramid> {
    if config.channels == 0 {
        return Err(Error::input("extractor needs at least one channel"));
    }
    if image.height() < PYRAMID_MULTIPLE || image.width() < PYRAMID_MULTIPLE {
        return Err(Error::input(format!(
            "input too small: {} image, need at least {PYRAMID_MULTIPLE} pixels per side",
            image.dims()
        )));
    }
    let (padded, _) = image.pad_replicate(PYRAMID_MULTIPLE)?;
    let half = padded.as_map().avg_pool2()?;
    let level1 = apply_bank(&half, config.channels);
    let mut levels = Vec::with_capacity(LEVELS);
    levels.push(level1);
    for _ in 1..LEVELS {
        let next = levels.last().expect("nonempty").avg_pool2()?;
        levels.push(next);
    }
    FeaturePyramid::new(levels, role)
}

/// Level-1 dims produced for an image of the given dims.
pub fn level1_dims(image: Dims) -> Dims {
    let p = image.round_up(PYRAMID_MULTIPLE);
    Dims::new(p.height / 2, p.width / 2)
}

fn apply_bank(src: &FeatureMap, channels: usize) -> FeatureMap {
    let (h, w) = (src.height(), src.width());
    let n = h * w;
    let mut data = vec![0.0f32; channels * n];
    data.par_chunks_mut(n).enumerate().for_each(|(k, out)| {
        let spec = channel_spec(k, src.channels());
        filter_plane(src.channel(spec.source), h, w, spec, out);
    });
    FeatureMap::from_raw(channels, h, w, data)
}

// Gradient kernels are written as (positive taps) - (negative taps) with the
// two sides evaluated by identical expressions, so a constant input yields an
// exact zero.
fn filter_plane(plane: &[f32], h: usize, w: usize, spec: ChannelSpec, out: &mut [f32]) {
    let d = spec.dilation as isize;
    let at = |y: isize, x: isize| -> f32 {
        let yy = y.clamp(0, h as isize - 1) as usize;
        let xx = x.clamp(0, w as isize - 1) as usize;
        plane[yy * w + xx]
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let v = match spec.kind {
                KernelKind::Identity if d == 1 => at(y, x),
                KernelKind::Identity => {
                    let r = d - 1;
                    let mut acc = 0.0f32;
                    for yy in y - r..=y + r {
                        for xx in x - r..=x + r {
                            acc += at(yy, xx);
                        }
                    }
                    acc / ((2 * r + 1) * (2 * r + 1)) as f32
                }
                KernelKind::Blur => {
                    let row = |yy: isize| at(yy, x - d) + 2.0 * at(yy, x) + at(yy, x + d);
                    (row(y - d) + 2.0 * row(y) + row(y + d)) * (1.0 / 16.0)
                }
                KernelKind::SobelX => {
                    let col = |xx: isize| at(y - d, xx) + 2.0 * at(y, xx) + at(y + d, xx);
                    col(x + d) - col(x - d)
                }
                KernelKind::SobelY => {
                    let row = |yy: isize| at(yy, x - d) + 2.0 * at(yy, x) + at(yy, x + d);
                    row(y + d) - row(y - d)
                }
                KernelKind::Laplacian => {
                    let ring = (at(y - d, x) + at(y + d, x)) + (at(y, x - d) + at(y, x + d));
                    ring - 4.0 * at(y, x)
                }
            };
            out[y as usize * w + x as usize] = spec.gain * v;
        }
    }
}
