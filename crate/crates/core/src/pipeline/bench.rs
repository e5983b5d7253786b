//! Timing harness comparing row-restricted matching with full-search matching.
//!
//! Full search at the default size costs on the order of 10^15 multiply-adds,
//! so it is timed on a sample of target patches and extrapolated linearly over
//! the patch grid. Every target patch of the full search does identical work,
//! which makes the extrapolation exact up to timer noise.

use std::time::Instant;

use crate::error::{Error, Result};
use crate::fusion::fuse_features;
use crate::matcher::{match_row_restricted, FullSearch, MatchIndexMap, SearchWindow};
use crate::pyramid::{extract_pyramid, ExtractorConfig, FeaturePyramid, PyramidRole, LEVELS};
use crate::refine::{build_cost_volume, hourglass_forward, DisparityField, REFINED_LEVELS};
use crate::tensor::{Dims, FeatureMap};
use crate::weights::{NetworkConfig, NetworkWeights};

use super::synth::{synth_pair, TextureKind};
use super::PipelineConfig;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchOptions {
    /// Input image dims; level-1 features are half of this.
    pub image: Dims,
    pub repeats: usize,
    /// Target patches actually scored by the full search per repeat.
    pub oracle_samples: usize,
    /// Also time the full search at levels 2..=4.
    pub oracle_all_levels: bool,
    /// Time the refinement and fusion forward passes.
    pub networks: bool,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            image: Dims::new(832, 1024),
            repeats: 1,
            oracle_samples: 4,
            oracle_all_levels: true,
            networks: true,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchReport {
    pub image: Dims,
    /// `[C, H, W]` of level 1.
    pub features: [usize; 3],
    pub patch: usize,
    pub window: SearchWindow,
    pub grid: [usize; 2],
    pub repeats: usize,
    pub oracle_candidates_per_patch: usize,
    pub row_candidates_per_patch: usize,
    /// Candidates actually scored by the row-restricted matcher after edge clamping.
    pub row_candidates_scored: usize,
    pub analytic_reduction: f64,
    pub extract_s: f64,
    pub row_restricted_s: f64,
    pub oracle_norms_s: f64,
    pub oracle_sampled_patches: usize,
    pub oracle_sample_s: f64,
    /// Norm precomputation plus per-patch time scaled to the whole grid.
    pub oracle_extrapolated_s: f64,
    /// Same, summed over all four levels without index reuse.
    pub oracle_all_levels_extrapolated_s: Option<f64>,
    pub speedup: f64,
    pub speedup_all_levels: Option<f64>,
    /// Sampled patches where both matchers chose the same window.
    pub oracle_agreement: usize,
    pub refinement_forward_s: Option<f64>,
    pub fusion_forward_s: Option<f64>,
    pub refinement_params: usize,
    pub fusion_params: usize,
}

impl BenchReport {
    /// Fields that do not depend on timing.
    pub fn counts(&self) -> (usize, usize, usize, f64, usize, usize, usize) {
        (
            self.oracle_candidates_per_patch,
            self.row_candidates_per_patch,
            self.row_candidates_scored,
            self.analytic_reduction,
            self.oracle_agreement,
            self.refinement_params,
            self.fusion_params,
        )
    }
}

/// Closed-form candidate ratio of full search over row-restricted search.
pub fn analytic_reduction(features: Dims, patch: usize, window: &SearchWindow) -> f64 {
    let full = (features.height - patch + 1) * (features.width - patch + 1);
    full as f64 / window.candidates() as f64
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> Result<(T, f64)> {
    let t = Instant::now();
    let out = f()?;
    Ok((out, t.elapsed().as_secs_f64()))
}

fn sample_indices(total: usize, k: usize) -> Vec<usize> {
    let k = k.clamp(1, total);
    (0..k).map(|i| (2 * i + 1) * total / (2 * k)).collect()
}

/// Norm precompute seconds, search seconds and the sampled matches.
type OracleTiming = (f64, f64, Vec<(usize, usize)>);

/// Times norm precomputation and `samples` patch searches at one level.
fn oracle_at(h_x: &FeatureMap, h_y: &FeatureMap, patch: usize, samples: &[usize]) -> Result<OracleTiming> {
    let (search, norms_s) = timed(|| FullSearch::new(h_x, h_y, patch))?;
    let (_, cols) = search.grid();
    let (picked, sample_s) = timed(|| {
        Ok(samples
            .iter()
            .map(|&i| {
                let e = search.match_patch(i / cols, i % cols);
                (e.u, e.v)
            })
            .collect::<Vec<_>>())
    })?;
    Ok((norms_s, sample_s, picked))
}

fn row_candidates_scored(dims: Dims, patch: usize, window: &SearchWindow) -> usize {
    let rows = dims.height / patch;
    (0..dims.width / patch)
        .map(|n| {
            let (lo, hi) = window.column_range(n * patch, dims.width, patch);
            hi - lo + 1
        })
        .sum::<usize>()
        * rows
}

pub fn run_bench(config: &PipelineConfig, options: &BenchOptions) -> Result<BenchReport> {
    config.validate()?;
    if options.repeats == 0 {
        return Err(Error::input("repeats must be at least 1"));
    }
    let b = config.patch;
    let pair = synth_pair(TextureKind::FilteredNoise, 3, options.image.height, options.image.width, 32, options.seed)?;
    let extractor = ExtractorConfig { channels: config.channels };
    let mut extract_times = Vec::new();
    let mut pyramids: Option<(FeaturePyramid, FeaturePyramid)> = None;
    for _ in 0..options.repeats {
        let (p, t) = timed(|| {
            Ok((
                extract_pyramid(&pair.main, &extractor, PyramidRole::MainHat)?,
                extract_pyramid(&pair.side, &extractor, PyramidRole::SideLossless)?,
            ))
        })?;
        extract_times.push(t / 2.0);
        pyramids = Some(p);
    }
    let (hx, hy) = pyramids.expect("at least one repeat");
    let padded: Vec<(FeatureMap, FeatureMap)> = (1..=LEVELS)
        .map(|i| {
            let bi = b >> (i - 1);
            Ok((hx.level(i).pad_replicate(bi)?.0, hy.level(i).pad_replicate(bi)?.0))
        })
        .collect::<Result<_>>()?;
    let (x1, y1) = &padded[0];
    let dims = x1.dims();
    let window = config.window().clamped_to(dims.width);

    let grid = [dims.height / b, dims.width / b];
    let total = grid[0] * grid[1];
    let samples = sample_indices(total, options.oracle_samples);
    let mut row_times = Vec::new();
    let mut norm_times = Vec::new();
    let mut sample_times = Vec::new();
    let mut all_level_times = Vec::new();
    let mut matched: Option<MatchIndexMap> = None;
    let mut oracle_picks = Vec::new();
    for _ in 0..options.repeats {
        let (m, t) = timed(|| match_row_restricted(x1, y1, b, &window))?;
        row_times.push(t);
        matched = Some(m);
        let (ns, ss, picks) = oracle_at(x1, y1, b, &samples)?;
        norm_times.push(ns);
        sample_times.push(ss);
        oracle_picks = picks;
        if options.oracle_all_levels {
            let mut sum = ns + ss * total as f64 / samples.len() as f64;
            for (i, (xi, yi)) in padded.iter().enumerate().skip(1) {
                let (ns, ss, _) = oracle_at(xi, yi, b >> i, &samples)?;
                sum += ns + ss * total as f64 / samples.len() as f64;
            }
            all_level_times.push(sum);
        }
    }
    let matched = matched.expect("at least one repeat");
    let agreement = samples
        .iter()
        .zip(&oracle_picks)
        .filter(|(&i, pick)| {
            let e = matched.entries()[i];
            (e.u, e.v) == **pick
        })
        .count();

    let oracle_candidates = (dims.height - b + 1) * (dims.width - b + 1);
    let reduction = analytic_reduction(dims, b, &window);
    if reduction != oracle_candidates as f64 / window.candidates() as f64 {
        return Err(Error::Invariant("candidate reduction disagrees with its closed form".into()));
    }

    let net = NetworkConfig { image_channels: 3, ..config.network(3) };
    let (mut refine_s, mut fusion_s) = (None, None);
    if options.networks {
        let w = NetworkWeights::random(net, options.seed)?;
        let coarse: Vec<FeatureMap> = hy.levels().to_vec();
        let (mut rt, mut ft) = (Vec::new(), Vec::new());
        for _ in 0..options.repeats {
            let (_, t) = timed(|| {
                let volumes = (1..=REFINED_LEVELS)
                    .map(|i| build_cost_volume(i, hx.level(i), &coarse[i - 1]))
                    .collect::<Result<Vec<_>>>()?;
                DisparityField::from_scores(hourglass_forward(&volumes, &w)?, config.hypotheses.clone())
            })?;
            rt.push(t);
            let (_, t) = timed(|| fuse_features(hx.levels(), &coarse, &w))?;
            ft.push(t);
        }
        refine_s = Some(median(rt));
        fusion_s = Some(median(ft));
    }

    let row_s = median(row_times);
    let norms_s = median(norm_times);
    let sample_s = median(sample_times);
    let oracle_s = norms_s + sample_s * total as f64 / samples.len() as f64;
    let all_levels = options.oracle_all_levels.then(|| median(all_level_times));
    Ok(BenchReport {
        image: options.image,
        features: [x1.channels(), dims.height, dims.width],
        patch: b,
        window,
        grid,
        repeats: options.repeats,
        oracle_candidates_per_patch: oracle_candidates,
        row_candidates_per_patch: window.candidates(),
        row_candidates_scored: row_candidates_scored(dims, b, &window),
        analytic_reduction: reduction,
        extract_s: median(extract_times),
        row_restricted_s: row_s,
        oracle_norms_s: norms_s,
        oracle_sampled_patches: samples.len(),
        oracle_sample_s: sample_s,
        oracle_extrapolated_s: oracle_s,
        oracle_all_levels_extrapolated_s: all_levels,
        speedup: oracle_s / row_s,
        speedup_all_levels: all_levels.map(|t| t / row_s),
        oracle_agreement: agreement,
        refinement_forward_s: refine_s,
        fusion_forward_s: fusion_s,
        refinement_params: net.refinement_params(),
        fusion_params: net.fusion_params(),
    })
}
