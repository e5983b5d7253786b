//! Synthetic rectified stereo pairs with a known constant disparity.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ImagePlane};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextureKind {
    /// Gaussian-filtered white noise.
    FilteredNoise,
    /// Ramps modulated by low-frequency sinusoids.
    Gradient,
    /// Square checkerboard with the given period in pixels.
    Checkerboard { period: usize },
}

impl std::str::FromStr for TextureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "noise" | "filtered-noise" | "filtered_noise" => Ok(Self::FilteredNoise),
            "gradient" => Ok(Self::Gradient),
            "checkerboard" => Ok(Self::Checkerboard { period: 32 }),
            _ => {
                if let Some(p) = s.strip_prefix("checkerboard:") {
                    let period = p
                        .parse()
                        .ok()
                        .filter(|&p: &usize| p > 0)
                        .ok_or_else(|| Error::input(format!("bad checkerboard period `{p}`")))?;
                    Ok(Self::Checkerboard { period })
                } else {
                    Err(Error::input(format!("unknown texture `{s}` (noise, gradient, checkerboard[:period])")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub main: ImagePlane,
    pub side: ImagePlane,
    /// Ground-truth disparity in image pixels, constant `d0`.
    pub disparity: FeatureMap,
    pub shift: usize,
}

fn blur_plane(p: &[f32], h: usize, w: usize, sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f32> = (-r..=r).map(|d| (-(d * d) as f32 / (2.0 * sigma * sigma)).exp()).collect();
    let norm: f32 = taps.iter().sum();
    let taps: Vec<f32> = taps.iter().map(|t| t / norm).collect();
    let sample = |v: &[f32], n: usize, i: isize| v[i.clamp(0, n as isize - 1) as usize];
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        let row = &p[y * w..(y + 1) * w];
        for x in 0..w {
            tmp[y * w + x] =
                taps.iter().enumerate().map(|(k, t)| t * sample(row, w, x as isize + k as isize - r)).sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for x in 0..w {
        let col: Vec<f32> = (0..h).map(|y| tmp[y * w + x]).collect();
        for y in 0..h {
            out[y * w + x] =
                taps.iter().enumerate().map(|(k, t)| t * sample(&col, h, y as isize + k as isize - r)).sum();
        }
    }
    out
}

/// Texture image of `channels x height x width` with samples in `[0, 1]`.
pub fn texture(kind: TextureKind, channels: usize, height: usize, width: usize, seed: u64) -> Result<ImagePlane> {
    if height == 0 || width == 0 || !matches!(channels, 1 | 3) {
        return Err(Error::input("texture needs positive dims and 1 or 3 channels"));
    }
    let n = height * width;
    let mut data = Vec::with_capacity(channels * n);
    match kind {
        TextureKind::FilteredNoise => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..channels {
                let white: Vec<f32> = (0..n).map(|_| rng.random_range(0.0f32..1.0)).collect();
                let plane = blur_plane(&white, height, width, 1.5);
                let lo = plane.iter().copied().fold(f32::INFINITY, f32::min);
                let hi = plane.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                let span = (hi - lo).max(f32::EPSILON);
                data.extend(plane.iter().map(|v| (0.05 + 0.9 * (v - lo) / span).clamp(0.0, 1.0)));
            }
        }
        TextureKind::Gradient => {
            let phase = (seed % 1000) as f32 * 0.01;
            for c in 0..channels {
                let (fx, fy) = (0.045 + 0.01 * c as f32, 0.031 + 0.007 * c as f32);
                for y in 0..height {
                    for x in 0..width {
                        let (xf, yf) = (x as f32, y as f32);
                        let ramp = 0.35 * xf / width as f32 + 0.15 * yf / height as f32;
                        let wave =
                            0.12 * (fx * xf + phase).sin() * (fy * yf).cos() + 0.08 * (0.013 * (xf + 2.0 * yf)).sin();
                        data.push((0.25 + ramp + wave).clamp(0.0, 1.0));
                    }
                }
            }
        }
        TextureKind::Checkerboard { period } => {
            let half = (period / 2).max(1);
            for c in 0..channels {
                for y in 0..height {
                    for x in 0..width {
                        let on = ((x / half) + (y / half)) % 2 == 0;
                        data.push(if on { 0.8 - 0.1 * c as f32 } else { 0.2 + 0.05 * c as f32 });
                    }
                }
            }
        }
    }
    ImagePlane::new(channels, height, width, data)
}

/// `side[y][x] = main[y][min(x + d0, W - 1)]`: side content sits `d0` pixels to the left.
pub fn shift_left(image: &ImagePlane, d0: usize) -> Result<ImagePlane> {
    let w = image.width();
    let m = FeatureMap::from_fn(image.channels(), image.height(), w, |c, y, x| {
        image.as_map().get(c, y, (x + d0).min(w - 1))
    })?;
    ImagePlane::from_map(m)
}

pub fn synth_pair(
    kind: TextureKind,
    channels: usize,
    height: usize,
    width: usize,
    d0: usize,
    seed: u64,
) -> Result<SynthPair> {
    if !height.is_multiple_of(16) || !width.is_multiple_of(16) {
        return Err(Error::input(format!("synthetic dims {height}x{width} must be multiples of 16")));
    }
    if d0 >= width {
        return Err(Error::input(format!("shift {d0} must be smaller than the width {width}")));
    }
    if !d0.is_multiple_of(2) {
        return Err(Error::input(format!("shift {d0} must be even")));
    }
    let main = texture(kind, channels, height, width, seed)?;
    let side = shift_left(&main, d0)?;
    Ok(SynthPair { main, side, disparity: FeatureMap::from_fn(1, height, width, |_, _, _| d0 as f32)?, shift: d0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_shift_is_identical() {
        let p = synth_pair(TextureKind::FilteredNoise, 3, 32, 48, 0, 1).unwrap();
        assert_eq!(p.main, p.side);
        assert!(p.disparity.data().iter().all(|&d| d == 0.0));
    }

    #[test]
    fn shift_moves_content_left() {
        let p = synth_pair(TextureKind::Gradient, 1, 16, 64, 8, 1).unwrap();
        for x in 0..56 {
            assert_eq!(p.side.as_map().get(0, 3, x), p.main.as_map().get(0, 3, x + 8));
        }
        assert_eq!(p.side.as_map().get(0, 3, 60), p.main.as_map().get(0, 3, 63));
    }

    #[test]
    fn argument_errors() {
        assert!(synth_pair(TextureKind::FilteredNoise, 3, 32, 32, 32, 1).is_err());
        assert!(synth_pair(TextureKind::FilteredNoise, 3, 32, 32, 3, 1).is_err());
        assert!(synth_pair(TextureKind::FilteredNoise, 3, 30, 32, 2, 1).is_err());
    }

    #[test]
    fn textures_are_valid_and_seeded() {
        for kind in [TextureKind::FilteredNoise, TextureKind::Gradient, TextureKind::Checkerboard { period: 8 }] {
            let a = texture(kind, 3, 32, 32, 4).unwrap();
            assert!(a.samples().iter().all(|v| (0.0..=1.0).contains(v)));
            assert_eq!(a, texture(kind, 3, 32, 32, 4).unwrap());
        }
        assert_ne!(
            texture(TextureKind::FilteredNoise, 1, 16, 16, 1).unwrap(),
            texture(TextureKind::FilteredNoise, 1, 16, 16, 2).unwrap()
        );
        assert_eq!("checkerboard:16".parse::<TextureKind>().unwrap(), TextureKind::Checkerboard { period: 16 });
    }
}
