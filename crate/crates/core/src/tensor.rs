//! Dense channel-major feature volumes and images.
//!
//! Everything here is immutable once built. Samples are stored row-major per
//! channel (`data[(c * height + y) * width + x]`).

use crate::error::{Error, Result};

/// Spatial extent of a map, in cells.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }

    /// Smallest dims `>= self` whose sides are multiples of `multiple`.
    pub fn round_up(&self, multiple: usize) -> Self {
        Self { height: self.height.div_ceil(multiple) * multiple, width: self.width.div_ceil(multiple) * multiple }
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

/// A `C x H x W` volume of finite `f32` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::input(format!("feature map dims must be positive, got {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::shape(format!(
                "expected {} samples for {channels}x{height}x{width}, got {}",
                channels * height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::input(format!("non-finite sample at flat index {i}")));
        }
        Ok(Self { channels, height, width, data })
    }

    /// Construction for internally produced buffers whose length is known to be right.
    pub(crate) fn from_raw(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), channels * height * width);
        Self { channels, height, width, data }
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self::from_raw(channels, height, width, vec![0.0; channels * height * width])
    }

    pub fn from_fn(
        channels: usize,
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize, usize) -> f32,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(channels * height * width);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::new(channels, height, width, data)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f32] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn row(&self, c: usize, y: usize) -> &[f32] {
        let start = (c * self.height + y) * self.width;
        &self.data[start..start + self.width]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Extends every edge by replication until both sides are multiples of
    /// `multiple`. Returns the padded map and the original dims for [`crop_to`](Self::crop_to).
    pub fn pad_replicate(&self, multiple: usize) -> Result<(FeatureMap, Dims)> {
        if multiple == 0 {
            return Err(Error::input("padding multiple must be >= 1"));
        }
        let original = self.dims();
        let padded = original.round_up(multiple);
        if padded == original {
            return Ok((self.clone(), original));
        }
        let mut data = Vec::with_capacity(self.channels * padded.area());
        for c in 0..self.channels {
            for y in 0..padded.height {
                let row = self.row(c, y.min(self.height - 1));
                data.extend_from_slice(row);
                let last = row[self.width - 1];
                data.extend(std::iter::repeat_n(last, padded.width - self.width));
            }
        }
        Ok((Self::from_raw(self.channels, padded.height, padded.width, data), original))
    }

    /// Top-left crop.
    pub fn crop_to(&self, dims: Dims) -> Result<FeatureMap> {
        if dims.height > self.height || dims.width > self.width || dims.area() == 0 {
            return Err(Error::shape(format!("cannot crop {} map to {}", self.dims(), dims)));
        }
        if dims == self.dims() {
            return Ok(self.clone());
        }
        let mut data = Vec::with_capacity(self.channels * dims.area());
        for c in 0..self.channels {
            for y in 0..dims.height {
                data.extend_from_slice(&self.row(c, y)[..dims.width]);
            }
        }
        Ok(Self::from_raw(self.channels, dims.height, dims.width, data))
    }

    /// 2x2 average pooling. Odd trailing rows/columns are dropped.
    pub fn avg_pool2(&self) -> Result<FeatureMap> {
        let (h, w) = (self.height / 2, self.width / 2);
        if h == 0 || w == 0 {
            return Err(Error::input(format!("cannot pool a {} map", self.dims())));
        }
        let mut data = Vec::with_capacity(self.channels * h * w);
        for c in 0..self.channels {
            for y in 0..h {
                let r0 = self.row(c, 2 * y);
                let r1 = self.row(c, 2 * y + 1);
                for x in 0..w {
                    let s = (r0[2 * x] + r0[2 * x + 1]) + (r1[2 * x] + r1[2 * x + 1]);
                    data.push(s * 0.25);
                }
            }
        }
        Ok(Self::from_raw(self.channels, h, w, data))
    }

    /// Channel-wise concatenation, in argument order.
    pub fn concat(parts: &[&FeatureMap]) -> Result<FeatureMap> {
        let first = parts.first().ok_or_else(|| Error::input("concat of zero maps"))?;
        let dims = first.dims();
        let mut channels = 0;
        for p in parts {
            if p.dims() != dims {
                return Err(Error::shape(format!("concat operands differ: {} vs {}", dims, p.dims())));
            }
            channels += p.channels;
        }
        let mut data = Vec::with_capacity(channels * dims.area());
        for p in parts {
            data.extend_from_slice(&p.data);
        }
        Ok(Self::from_raw(channels, dims.height, dims.width, data))
    }

    /// Channels `[start, start + count)` as a new map.
    pub fn channel_range(&self, start: usize, count: usize) -> Result<FeatureMap> {
        if count == 0 || start + count > self.channels {
            return Err(Error::shape(format!("channel range {start}..{} outside 0..{}", start + count, self.channels)));
        }
        let n = self.plane_len();
        Ok(Self::from_raw(count, self.height, self.width, self.data[start * n..(start + count) * n].to_vec()))
    }

    /// Sum of squared sample differences, accumulated in `f64`.
    pub fn squared_distance(&self, other: &FeatureMap) -> Result<f64> {
        if self.channels != other.channels || self.dims() != other.dims() {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.channels,
                self.dims(),
                other.channels,
                other.dims()
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a as f64 - b as f64;
                d * d
            })
            .sum())
    }
}

/// An image with 1 or 3 channels and samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePlane {
    map: FeatureMap,
}

impl ImagePlane {
    pub fn new(channels: usize, height: usize, width: usize, samples: Vec<f32>) -> Result<Self> {
        Self::from_map(FeatureMap::new(channels, height, width, samples)?)
    }

    pub fn from_map(map: FeatureMap) -> Result<Self> {
        if map.channels != 1 && map.channels != 3 {
            return Err(Error::input(format!("images have 1 or 3 channels, got {}", map.channels)));
        }
        if let Some(i) = map.data.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::input(format!("image sample {} at flat index {i} outside [0, 1]", map.data[i])));
        }
        Ok(Self { map })
    }

    /// Builds an image by clamping every sample into `[0, 1]`.
    pub fn from_map_clamped(mut map: FeatureMap) -> Result<Self> {
        for v in map.data_mut() {
            *v = v.clamp(0.0, 1.0);
        }
        Self::from_map(map)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(channels, height, width, vec![value; channels * height * width])
    }

    pub fn channels(&self) -> usize {
        self.map.channels
    }

    pub fn height(&self) -> usize {
        self.map.height
    }

    pub fn width(&self) -> usize {
        self.map.width
    }

    pub fn dims(&self) -> Dims {
        self.map.dims()
    }

    pub fn samples(&self) -> &[f32] {
        &self.map.data
    }

    pub fn as_map(&self) -> &FeatureMap {
        &self.map
    }

    pub fn into_map(self) -> FeatureMap {
        self.map
    }

    pub fn pad_replicate(&self, multiple: usize) -> Result<(ImagePlane, Dims)> {
        let (map, dims) = self.map.pad_replicate(multiple)?;
        Ok((ImagePlane { map }, dims))
    }

    pub fn crop_to(&self, dims: Dims) -> Result<ImagePlane> {
        Ok(ImagePlane { map: self.map.crop_to(dims)? })
    }

    /// Removes `top`, `bottom` rows and `sides` columns on each side.
    pub fn crop_border(&self, top: usize, bottom: usize, sides: usize) -> Result<ImagePlane> {
        let (h, w) = (self.height(), self.width());
        if top + bottom >= h || 2 * sides >= w {
            return Err(Error::input(format!("border crop ({top}, {bottom}, {sides}) removes all of a {h}x{w} image")));
        }
        let (nh, nw) = (h - top - bottom, w - 2 * sides);
        let mut data = Vec::with_capacity(self.channels() * nh * nw);
        for c in 0..self.channels() {
            for y in top..top + nh {
                data.extend_from_slice(&self.map.row(c, y)[sides..sides + nw]);
            }
        }
        Self::new(self.channels(), nh, nw, data)
    }
}

/// Non-overlapping (or strided) patch layout over a map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGrid {
    pub patch: usize,
    pub stride: usize,
    pub rows: usize,
    pub cols: usize,
}

impl PatchGrid {
    pub fn new(dims: Dims, patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 || stride > patch {
            return Err(Error::input(format!("patch grid needs B >= 1 and 1 <= S <= B, got B={patch} S={stride}")));
        }
        if patch > dims.height || patch > dims.width {
            return Err(Error::input(format!("patch size {patch} exceeds map dims {dims}")));
        }
        Ok(Self { patch, stride, rows: (dims.height - patch) / stride + 1, cols: (dims.width - patch) / stride + 1 })
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Top-left cell `(row, col)` of patch `(m, n)`.
    pub fn origin(&self, m: usize, n: usize) -> (usize, usize) {
        (m * self.stride, n * self.stride)
    }
}

pub fn patch_grid(map: &FeatureMap, patch: usize, stride: usize) -> Result<PatchGrid> {
    PatchGrid::new(map.dims(), patch, stride)
}
