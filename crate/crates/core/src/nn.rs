//! Minimal CPU inference kernels: grouped (transposed) convolution, nearest
//! upsampling, leaky ReLU. Single image, channel-major `f32`.
//!
//! Output channels are computed independently, each in a fixed accumulation
//! order, so running them in parallel does not change results.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Shape of one convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
    pub transposed: bool,
}

impl ConvSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, groups: usize) -> Self {
        Self { in_channels, out_channels, kernel, stride, padding: kernel / 2, groups, transposed: false }
    }

    pub fn depthwise(channels: usize, kernel: usize) -> Self {
        Self::conv(channels, channels, kernel, 1, channels)
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::conv(in_channels, out_channels, 1, 1, 1)
    }

    /// Exact 2x upsampling: kernel 4, stride 2, padding 1.
    pub fn up2(in_channels: usize, out_channels: usize, groups: usize) -> Self {
        Self { in_channels, out_channels, kernel: 4, stride: 2, padding: 1, groups, transposed: true }
    }

    /// `[out, in/groups, k, k]` for convolutions, `[in, out/groups, k, k]` for transposed ones.
    pub fn weight_shape(&self) -> Vec<usize> {
        let k = self.kernel;
        if self.transposed {
            vec![self.in_channels, self.out_channels / self.groups, k, k]
        } else {
            vec![self.out_channels, self.in_channels / self.groups, k, k]
        }
    }

    pub fn weight_len(&self) -> usize {
        self.weight_shape().iter().product()
    }

    pub fn param_count(&self) -> usize {
        self.weight_len() + self.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.in_channels > 0
            && self.out_channels > 0
            && self.kernel > 0
            && self.stride > 0
            && self.groups > 0
            && self.in_channels.is_multiple_of(self.groups)
            && self.out_channels.is_multiple_of(self.groups);
        if ok {
            Ok(())
        } else {
            Err(Error::input(format!("invalid convolution spec {self:?}")))
        }
    }

    pub fn output_size(&self, size: usize) -> usize {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        if self.transposed {
            (size - 1) * s + k - 2 * p
        } else {
            (size + 2 * p).saturating_sub(k) / s + 1
        }
    }
}

/// Applies a (possibly transposed) grouped convolution with zero padding.
pub fn conv2d(input: &FeatureMap, spec: &ConvSpec, weight: &[f32], bias: &[f32]) -> Result<FeatureMap> {
    spec.validate()?;
    if input.channels() != spec.in_channels {
        return Err(Error::shape(format!(
            "convolution expects {} input channels, got {}",
            spec.in_channels,
            input.channels()
        )));
    }
    if weight.len() != spec.weight_len() || bias.len() != spec.out_channels {
        return Err(Error::shape(format!(
            "convolution weights: got {} + {} values, need {} + {}",
            weight.len(),
            bias.len(),
            spec.weight_len(),
            spec.out_channels
        )));
    }
    if spec.transposed {
        Ok(conv_transpose(input, spec, weight, bias))
    } else if spec.kernel == 1 && spec.stride == 1 && spec.padding == 0 {
        Ok(pointwise(input, spec, weight, bias))
    } else {
        Ok(conv_direct(input, spec, weight, bias))
    }
}

/// Output index range `[lo, hi)` for which `o * stride + tap - pad` lands in `0..size`.
#[inline]
fn valid_range(out_size: usize, size: usize, stride: usize, tap: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(tap).div_ceil(stride);
    let hi = (size + pad).saturating_sub(tap).div_ceil(stride).min(out_size);
    (lo.min(hi), hi)
}

fn conv_direct(input: &FeatureMap, spec: &ConvSpec, weight: &[f32], bias: &[f32]) -> FeatureMap {
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (spec.output_size(h), spec.output_size(w));
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let in_per_group = spec.in_channels / spec.groups;
    let out_per_group = spec.out_channels / spec.groups;
    let mut data = vec![0.0f32; spec.out_channels * oh * ow];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(o, out)| {
        out.fill(bias[o]);
        let g = o / out_per_group;
        for i in 0..in_per_group {
            let ic = g * in_per_group + i;
            let plane = input.channel(ic);
            for ky in 0..k {
                let (y0, y1) = valid_range(oh, h, s, ky, p);
                for kx in 0..k {
                    let wv = weight[((o * in_per_group + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (x0, x1) = valid_range(ow, w, s, kx, p);
                    for oy in y0..y1 {
                        let iy = oy * s + ky - p;
                        let src = &plane[iy * w..(iy + 1) * w];
                        let dst = &mut out[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            let ix0 = x0 + kx - p;
                            for (d, &v) in dst[x0..x1].iter_mut().zip(&src[ix0..ix0 + (x1 - x0)]) {
                                *d += wv * v;
                            }
                        } else {
                            for ox in x0..x1 {
                                dst[ox] += wv * src[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    });
    FeatureMap::from_raw(spec.out_channels, oh, ow, data)
}

fn pointwise(input: &FeatureMap, spec: &ConvSpec, weight: &[f32], bias: &[f32]) -> FeatureMap {
    let n = input.plane_len();
    let in_per_group = spec.in_channels / spec.groups;
    let out_per_group = spec.out_channels / spec.groups;
    let mut data = vec![0.0f32; spec.out_channels * n];
    data.par_chunks_mut(n).enumerate().for_each(|(o, out)| {
        out.fill(bias[o]);
        let g = o / out_per_group;
        for i in 0..in_per_group {
            let wv = weight[o * in_per_group + i];
            if wv == 0.0 {
                continue;
            }
            for (d, &v) in out.iter_mut().zip(input.channel(g * in_per_group + i)) {
                *d += wv * v;
            }
        }
    });
    FeatureMap::from_raw(spec.out_channels, input.height(), input.width(), data)
}

fn conv_transpose(input: &FeatureMap, spec: &ConvSpec, weight: &[f32], bias: &[f32]) -> FeatureMap {
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (spec.output_size(h), spec.output_size(w));
    let (k, s, p) = (spec.kernel, spec.stride, spec.padding);
    let in_per_group = spec.in_channels / spec.groups;
    let out_per_group = spec.out_channels / spec.groups;
    let mut data = vec![0.0f32; spec.out_channels * oh * ow];
    data.par_chunks_mut(oh * ow).enumerate().for_each(|(o, out)| {
        out.fill(bias[o]);
        let g = o / out_per_group;
        let oc_in_group = o % out_per_group;
        for i in 0..in_per_group {
            let ic = g * in_per_group + i;
            let plane = input.channel(ic);
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weight[((ic * out_per_group + oc_in_group) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for iy in 0..h {
                        let oy = iy * s + ky;
                        if oy < p || oy - p >= oh {
                            continue;
                        }
                        let dst = &mut out[(oy - p) * ow..(oy - p + 1) * ow];
                        let src = &plane[iy * w..(iy + 1) * w];
                        for (ix, &v) in src.iter().enumerate() {
                            let ox = ix * s + kx;
                            if ox >= p && ox - p < ow {
                                dst[ox - p] += wv * v;
                            }
                        }
                    }
                }
            }
        }
    });
    FeatureMap::from_raw(spec.out_channels, oh, ow, data)
}

pub const LEAKY_SLOPE: f32 = 0.1;

pub fn leaky_relu(mut map: FeatureMap) -> FeatureMap {
    for v in map.data_mut() {
        if *v < 0.0 {
            *v *= LEAKY_SLOPE;
        }
    }
    map
}

/// Element-wise sum of equally shaped maps.
pub fn add(mut a: FeatureMap, b: &FeatureMap) -> Result<FeatureMap> {
    if a.channels() != b.channels() || a.dims() != b.dims() {
        return Err(Error::shape(format!(
            "cannot add {}x{} and {}x{}",
            a.channels(),
            a.dims(),
            b.channels(),
            b.dims()
        )));
    }
    for (x, &y) in a.data_mut().iter_mut().zip(b.data()) {
        *x += y;
    }
    Ok(a)
}

pub fn upsample_nearest2(input: &FeatureMap) -> FeatureMap {
    let (h, w) = (input.height(), input.width());
    let (oh, ow) = (2 * h, 2 * w);
    let mut data = Vec::with_capacity(input.channels() * oh * ow);
    for c in 0..input.channels() {
        for y in 0..oh {
            let row = input.row(c, y / 2);
            data.extend(row.iter().flat_map(|&v| [v, v]));
        }
    }
    FeatureMap::from_raw(input.channels(), oh, ow, data)
}
