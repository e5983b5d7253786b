//! Fine alignment: cost volumes, the hourglass disparity network, channel
//! selection and sparse horizontal warping.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matcher::Direction;
use crate::nn::{add, conv2d, leaky_relu};
use crate::tensor::FeatureMap;
use crate::weights::NetworkWeights;

/// Levels that get a cost volume; the coarsest level is passed through.
pub const REFINED_LEVELS: usize = 3;

/// Default signed residual disparities, in level-1 cells.
pub fn default_hypotheses() -> Vec<f32> {
    (-4..4).map(|d| d as f32).collect()
}

/// Main features stacked on top of coarsely aligned side features.
#[derive(Debug, Clone, PartialEq)]
pub struct CostVolume {
    level: usize,
    map: FeatureMap,
}

impl CostVolume {
    pub fn level(&self) -> usize {
        self.level
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    /// Channels of each half.
    pub fn half_channels(&self) -> usize {
        self.map.channels() / 2
    }
}

pub fn build_cost_volume(level: usize, h_x: &FeatureMap, h_y_star: &FeatureMap) -> Result<CostVolume> {
    if !(1..=REFINED_LEVELS).contains(&level) {
        return Err(Error::input(format!("cost volumes exist for levels 1..={REFINED_LEVELS}, not level {level}")));
    }
    if h_x.channels() != h_y_star.channels() || h_x.dims() != h_y_star.dims() {
        return Err(Error::shape(format!(
            "cost volume halves {}x{} and {}x{}",
            h_x.channels(),
            h_x.dims(),
            h_y_star.channels(),
            h_y_star.dims()
        )));
    }
    Ok(CostVolume { level, map: FeatureMap::concat(&[h_x, h_y_star])? })
}

fn apply(weights: &NetworkWeights, name: &str, spec: &crate::nn::ConvSpec, x: &FeatureMap) -> Result<FeatureMap> {
    let (w, b) = weights.layer(name, spec)?;
    conv2d(x, spec, w, b).map_err(|e| match e {
        Error::Shape(msg) => Error::weights(name, msg),
        other => other,
    })
}

/// Runs the hourglass over the level 1..3 volumes and returns `D x H1 x W1` scores.
pub fn hourglass_forward(volumes: &[CostVolume], weights: &NetworkWeights) -> Result<FeatureMap> {
    if volumes.len() != REFINED_LEVELS {
        return Err(Error::input(format!("hourglass takes {REFINED_LEVELS} volumes, got {}", volumes.len())));
    }
    for (i, v) in volumes.iter().enumerate() {
        if v.level != i + 1 {
            return Err(Error::input(format!("volume {i} is for level {}, expected {}", v.level, i + 1)));
        }
        if i > 0 {
            let prev = volumes[i - 1].map.dims();
            let cur = v.map.dims();
            if prev.height != 2 * cur.height || prev.width != 2 * cur.width {
                return Err(Error::shape(format!(
                    "level {} volume {cur} is not half of level {} volume {prev}",
                    i + 1,
                    i
                )));
            }
        }
    }
    weights.validate()?;
    let layers: std::collections::HashMap<String, crate::nn::ConvSpec> =
        weights.config().refinement_layers().into_iter().collect();
    let run = |name: &str, x: &FeatureMap| apply(weights, name, &layers[name], x);

    let mut paths = Vec::with_capacity(REFINED_LEVELS);
    for v in volumes {
        let l = v.level;
        let mut a = leaky_relu(run(&format!("hg.l{l}.stem"), &v.map)?);
        for block in 0..2 {
            let t = leaky_relu(run(&format!("hg.l{l}.res{block}.conv0"), &a)?);
            let t = run(&format!("hg.l{l}.res{block}.conv1"), &t)?;
            a = add(a, &t)?;
        }
        paths.push(a);
    }
    let mut paths = paths.into_iter();
    let e1 = paths.next().expect("three paths");
    let e2 = leaky_relu(add(paths.next().expect("three paths"), &run("hg.down1", &e1)?)?);
    let e3 = leaky_relu(add(paths.next().expect("three paths"), &run("hg.down2", &e2)?)?);
    let d2 = leaky_relu(add(run("hg.up2", &e3)?, &e2)?);
    let d1 = leaky_relu(add(run("hg.up1", &d2)?, &e1)?);
    run("hg.head", &d1)
}

/// Soft-argmax over the hypothesis axis.
pub fn soft_disparity(scores: &FeatureMap, hypotheses: &[f32]) -> Result<FeatureMap> {
    let d = hypotheses.len();
    if d == 0 || scores.channels() != d {
        return Err(Error::shape(format!("{} score channels for {d} hypotheses", scores.channels())));
    }
    let n = scores.plane_len();
    let out: Vec<f32> = (0..n)
        .into_par_iter()
        .map(|p| {
            let max = (0..d).map(|k| scores.channel(k)[p] as f64).fold(f64::NEG_INFINITY, f64::max);
            let (mut num, mut den) = (0.0f64, 0.0f64);
            for (k, &h) in hypotheses.iter().enumerate() {
                let e = (scores.channel(k)[p] as f64 - max).exp();
                num += e * h as f64;
                den += e;
            }
            (num / den) as f32
        })
        .collect();
    FeatureMap::new(1, scores.height(), scores.width(), out)
}

/// Pools `dp_1` down to level `level`, halving the values at every step.
pub fn downsample_disparity(dp1: &FeatureMap, level: usize) -> Result<FeatureMap> {
    if !(1..=4).contains(&level) {
        return Err(Error::input(format!("disparity level {level} outside 1..=4")));
    }
    let mut dp = dp1.clone();
    for _ in 1..level {
        dp = dp.avg_pool2()?;
        for v in dp.data_mut() {
            *v *= 0.5;
        }
    }
    Ok(dp)
}

/// Disparity scores and the per-level maps derived from them.
#[derive(Debug, Clone, PartialEq)]
pub struct DisparityField {
    /// `D x H1 x W1` hourglass output; absent when no network ran.
    pub score_volume: Option<FeatureMap>,
    pub hypotheses: Vec<f32>,
    /// `dp_1 ..= dp_4`, in cells of their own level.
    pub levels: Vec<FeatureMap>,
}

impl DisparityField {
    pub fn from_scores(scores: FeatureMap, hypotheses: Vec<f32>) -> Result<Self> {
        let dp1 = soft_disparity(&scores, &hypotheses)?;
        let mut levels = vec![dp1];
        for level in 2..=4 {
            levels.push(downsample_disparity(&levels[0], level)?);
        }
        Ok(Self { score_volume: Some(scores), hypotheses, levels })
    }

    /// Zero disparity at every level for level-1 dims `height x width`.
    pub fn zero(height: usize, width: usize, hypotheses: Vec<f32>) -> Self {
        let levels = (0..4).map(|i| FeatureMap::zeros(1, height >> i, width >> i)).collect();
        Self { score_volume: None, hypotheses, levels }
    }

    /// `dp_level` for `level` in `1..=4`.
    pub fn level(&self, level: usize) -> &FeatureMap {
        &self.levels[level - 1]
    }
}

/// Per-channel difference measure used for selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Root-mean-square difference, independent of the map size.
    #[default]
    Rms,
    /// Plain L2 norm of the difference.
    RawL2,
}

/// Channels whose main/side difference reaches the threshold.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ChannelSelection {
    selected: Vec<usize>,
    channels: usize,
    pub mu: f64,
    pub mode: SelectionMode,
}

impl ChannelSelection {
    /// Selection of explicit channel indices out of `channels`.
    pub fn from_indices(mut selected: Vec<usize>, channels: usize, mu: f64, mode: SelectionMode) -> Result<Self> {
        selected.sort_unstable();
        selected.dedup();
        if selected.last().is_some_and(|&g| g >= channels) {
            return Err(Error::input(format!("channel index out of range for {channels} channels")));
        }
        Ok(Self { selected, channels, mu, mode })
    }

    pub fn indices(&self) -> &[usize] {
        &self.selected
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn contains(&self, g: usize) -> bool {
        self.selected.binary_search(&g).is_ok()
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    /// Channels that stay frozen.
    pub fn complement(&self) -> Vec<usize> {
        (0..self.channels).filter(|&g| !self.contains(g)).collect()
    }
}

/// Per-channel difference statistics, in channel order.
pub fn channel_differences(h_x: &FeatureMap, h_y_star: &FeatureMap, mode: SelectionMode) -> Result<Vec<f64>> {
    if h_x.channels() != h_y_star.channels() || h_x.dims() != h_y_star.dims() {
        return Err(Error::shape(format!(
            "selection inputs {}x{} and {}x{}",
            h_x.channels(),
            h_x.dims(),
            h_y_star.channels(),
            h_y_star.dims()
        )));
    }
    let n = h_x.plane_len() as f64;
    Ok((0..h_x.channels())
        .map(|g| {
            let ss: f64 = h_x
                .channel(g)
                .iter()
                .zip(h_y_star.channel(g))
                .map(|(&a, &b)| {
                    let d = a as f64 - b as f64;
                    d * d
                })
                .sum();
            match mode {
                SelectionMode::Rms => (ss / n).sqrt(),
                SelectionMode::RawL2 => ss.sqrt(),
            }
        })
        .collect())
}

pub fn select_channels(
    h_x: &FeatureMap,
    h_y_star: &FeatureMap,
    mu: f64,
    mode: SelectionMode,
) -> Result<ChannelSelection> {
    if mu.is_nan() || mu < 0.0 {
        return Err(Error::input(format!("selection threshold must be >= 0, got {mu}")));
    }
    let diffs = channel_differences(h_x, h_y_star, mode)?;
    let selected = diffs.iter().enumerate().filter(|(_, &d)| d >= mu).map(|(g, _)| g).collect();
    Ok(ChannelSelection { selected, channels: h_x.channels(), mu, mode })
}

/// Warps the selected channels horizontally by `dp`; other channels are copied untouched.
pub fn sparse_warp(
    h_y_star: &FeatureMap,
    dp: &FeatureMap,
    selection: &ChannelSelection,
    direction: Direction,
) -> Result<FeatureMap> {
    if dp.channels() != 1 || dp.dims() != h_y_star.dims() {
        return Err(Error::shape(format!(
            "disparity {}x{} for features {}",
            dp.channels(),
            dp.dims(),
            h_y_star.dims()
        )));
    }
    if selection.channels != h_y_star.channels() {
        return Err(Error::shape(format!(
            "selection over {} channels for {}-channel features",
            selection.channels,
            h_y_star.channels()
        )));
    }
    let (h, w) = (h_y_star.height(), h_y_star.width());
    let sign = direction.sign() as f64;
    let offsets = dp.channel(0);
    let mut data = h_y_star.data().to_vec();
    data.par_chunks_mut(h * w).enumerate().for_each(|(g, plane)| {
        if !selection.contains(g) {
            return;
        }
        let src = h_y_star.channel(g);
        let last = (w - 1) as f64;
        for y in 0..h {
            let row = &src[y * w..(y + 1) * w];
            for x in 0..w {
                let pos = (x as f64 + sign * offsets[y * w + x] as f64).clamp(0.0, last);
                let x0 = pos.floor();
                let t = pos - x0;
                let i0 = x0 as usize;
                let i1 = (i0 + 1).min(w - 1);
                plane[y * w + x] =
                    if t == 0.0 { row[i0] } else { ((1.0 - t) * row[i0] as f64 + t * row[i1] as f64) as f32 };
            }
        }
    });
    FeatureMap::new(h_y_star.channels(), h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::weights::NetworkConfig;
    use rand::{Rng, SeedableRng};

    fn random_map(c: usize, h: usize, w: usize, seed: u64) -> FeatureMap {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap()
    }

    fn volumes(c: usize, h: usize, w: usize, seed: u64) -> Vec<CostVolume> {
        (1..=3)
            .map(|l| {
                let s = 1 << (l - 1);
                let a = random_map(c, h / s, w / s, seed + l as u64);
                let b = random_map(c, h / s, w / s, seed + 10 + l as u64);
                build_cost_volume(l, &a, &b).unwrap()
            })
            .collect()
    }

    #[test]
    fn cost_volume_layout() {
        let a = random_map(16, 8, 12, 1);
        let b = random_map(16, 8, 12, 2);
        let v = build_cost_volume(1, &a, &b).unwrap();
        assert_eq!((v.map().channels(), v.map().height(), v.map().width()), (32, 8, 12));
        assert_eq!(&v.map().data()[..a.data().len()], a.data());
        assert_eq!(&v.map().data()[a.data().len()..], b.data());
        let same = build_cost_volume(2, &a, &a).unwrap();
        assert_eq!(same.map().channel_range(0, 16).unwrap(), same.map().channel_range(16, 16).unwrap());
        assert!(build_cost_volume(4, &a, &b).is_err());
        assert!(build_cost_volume(1, &a, &random_map(16, 8, 10, 3)).is_err());
    }

    #[test]
    fn cost_volume_anchor_shape() {
        let a = FeatureMap::zeros(16, 416, 512);
        let v = build_cost_volume(1, &a, &a).unwrap();
        assert_eq!((v.map().channels(), v.map().height(), v.map().width()), (32, 416, 512));
    }

    #[test]
    fn hourglass_shape_finite_deterministic() {
        let cfg = NetworkConfig { channels: 8, hypotheses: 8, groups: 4, hidden: 8, image_channels: 3 };
        let w = NetworkWeights::random(cfg, 5).unwrap();
        let v = volumes(8, 16, 24, 7);
        let a = hourglass_forward(&v, &w).unwrap();
        assert_eq!((a.channels(), a.height(), a.width()), (8, 16, 24));
        assert!(a.data().iter().all(|x| x.is_finite()));
        assert_eq!(a, hourglass_forward(&v, &w).unwrap());
    }

    #[test]
    fn zero_weights_give_mean_hypothesis() {
        let cfg = NetworkConfig { channels: 4, hypotheses: 8, groups: 4, hidden: 8, image_channels: 3 };
        let w = NetworkWeights::zeros(cfg).unwrap();
        let scores = hourglass_forward(&volumes(4, 8, 8, 1), &w).unwrap();
        assert!(scores.data().iter().all(|&x| x == 0.0));
        let dp = soft_disparity(&scores, &default_hypotheses()).unwrap();
        assert!(dp.data().iter().all(|&x| x == -0.5));
    }

    #[test]
    fn hourglass_rejects_mismatched_channels() {
        let cfg = NetworkConfig { channels: 8, hypotheses: 8, groups: 4, hidden: 8, image_channels: 3 };
        let w = NetworkWeights::random(cfg, 5).unwrap();
        let err = hourglass_forward(&volumes(4, 8, 8, 1), &w).unwrap_err();
        assert!(err.to_string().contains("hg.l1.stem"), "{err}");
    }

    #[test]
    fn soft_argmax_examples() {
        let hyp = default_hypotheses();
        let mut scores = FeatureMap::zeros(8, 2, 3);
        for v in &mut scores.data_mut()[5 * 6..6 * 6] {
            *v = 1e4;
        }
        let dp = soft_disparity(&scores, &hyp).unwrap();
        assert!(dp.data().iter().all(|&x| x == 1.0));
        let one = soft_disparity(&FeatureMap::zeros(1, 2, 2), &[2.5]).unwrap();
        assert!(one.data().iter().all(|&x| x == 2.5));
        assert!(soft_disparity(&scores, &[1.0]).is_err());
    }

    #[test]
    fn disparity_downsampling() {
        let dp = FeatureMap::from_fn(1, 416, 512, |_, _, _| 4.0).unwrap();
        let d2 = downsample_disparity(&dp, 2).unwrap();
        assert_eq!(d2.dims(), crate::tensor::Dims::new(208, 256));
        assert!(d2.data().iter().all(|&x| x == 2.0));
        assert!(downsample_disparity(&dp, 3).unwrap().data().iter().all(|&x| x == 1.0));
        let z = FeatureMap::zeros(1, 16, 16);
        for l in 1..=4 {
            assert!(downsample_disparity(&z, l).unwrap().data().iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn selection_examples() {
        let a = random_map(6, 10, 10, 1);
        assert!(select_channels(&a, &a, 0.5, SelectionMode::Rms).unwrap().is_empty());
        assert_eq!(select_channels(&a, &a, 0.0, SelectionMode::Rms).unwrap().len(), 6);
        let b = FeatureMap::from_fn(6, 10, 10, |c, y, x| {
            let d = if c == 2 { 0.7 } else { 0.1 };
            a.get(c, y, x) + if (x + y) % 2 == 0 { d } else { -d }
        })
        .unwrap();
        let g = select_channels(&a, &b, 0.5, SelectionMode::Rms).unwrap();
        assert_eq!(g.indices(), &[2]);
        assert_eq!(g.complement(), vec![0, 1, 3, 4, 5]);
        // the raw norm of a 100-cell channel with RMS 0.1 is 1.0
        let raw = select_channels(&a, &b, 0.5, SelectionMode::RawL2).unwrap();
        assert_eq!(raw.len(), 6);
    }

    #[test]
    fn warp_integer_shift_and_freeze() {
        let w = 10;
        let map = FeatureMap::from_fn(3, 2, w, |c, _, x| (c * 100 + x) as f32).unwrap();
        let dp = FeatureMap::from_fn(1, 2, w, |_, _, _| 3.0).unwrap();
        let g = ChannelSelection::from_indices(vec![0], 3, 0.5, SelectionMode::Rms).unwrap();
        let out = sparse_warp(&map, &dp, &g, Direction::Leftward).unwrap();
        for x in 0..w {
            assert_eq!(out.get(0, 1, x), (x + 3).min(w - 1) as f32);
        }
        assert_eq!(out.channel(1), map.channel(1));
        assert_eq!(out.channel(2), map.channel(2));
        let back = sparse_warp(&map, &dp, &g, Direction::Rightward).unwrap();
        assert_eq!(back.get(0, 0, 5), 2.0);
        assert_eq!(back.get(0, 0, 1), 0.0);
    }

    #[test]
    fn warp_identity_cases() {
        let map = random_map(5, 6, 7, 3);
        let all = ChannelSelection::from_indices((0..5).collect(), 5, 0.0, SelectionMode::Rms).unwrap();
        let zero = FeatureMap::zeros(1, 6, 7);
        assert_eq!(sparse_warp(&map, &zero, &all, Direction::Leftward).unwrap(), map);
        let none = ChannelSelection::from_indices(vec![], 5, 1.0, SelectionMode::Rms).unwrap();
        let dp = random_map(1, 6, 7, 4);
        assert_eq!(sparse_warp(&map, &dp, &none, Direction::Leftward).unwrap(), map);
    }

    #[test]
    fn warp_half_cell_interpolates() {
        let map = FeatureMap::from_fn(1, 1, 4, |_, _, x| (x * x) as f32).unwrap();
        let dp = FeatureMap::from_fn(1, 1, 4, |_, _, _| 0.5).unwrap();
        let g = ChannelSelection::from_indices(vec![0], 1, 0.0, SelectionMode::Rms).unwrap();
        let out = sparse_warp(&map, &dp, &g, Direction::Leftward).unwrap();
        assert_eq!(out.channel(0), &[0.5, 2.5, 6.5, 9.0]);
    }
}
