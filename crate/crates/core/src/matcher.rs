//! Coarse alignment by patch matching on level-1 features.
//!
//! Target patches tile the main features without overlap; each is matched
//! against stride-1 windows of the side features. The row-restricted matcher
//! only considers windows in the same patch row and within the disparity
//! range, and scores a whole row of targets in one pass. The full-search
//! matcher considers every window of the map and is kept as the reference
//! the fast path is benchmarked against.
//!
//! All inner products accumulate in `f64` in `(channel, row, column)` order so
//! that batched and one-at-a-time scoring agree bit for bit.

use std::fmt::Write as _;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::FeatureMap;

/// Norms below this make the cosine distance fall back to 1.
pub const NORM_EPS: f64 = 1e-12;

/// `1 - <a,b> / (|a||b|)`, or 1.0 when either norm is (near) zero.
pub fn cosine_distance(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(format!("cosine distance of lengths {} and {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::input("cosine distance of empty vectors"));
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    Ok(distance_from_sums(dot, na, nb))
}

#[inline]
fn distance_from_sums(dot: f64, norm_a_sq: f64, norm_b_sq: f64) -> f64 {
    let (na, nb) = (norm_a_sq.sqrt(), norm_b_sq.sqrt());
    if na < NORM_EPS || nb < NORM_EPS {
        1.0
    } else {
        1.0 - dot / (na * nb)
    }
}

/// Copies the `b x b` window at `(row, col)` of every channel, channel-major.
pub fn flatten_window(map: &FeatureMap, row: usize, col: usize, b: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(map.channels() * b * b);
    for c in 0..map.channels() {
        for dy in 0..b {
            out.extend_from_slice(&map.row(c, row + dy)[col..col + b]);
        }
    }
    out
}

/// Where side content sits relative to the main view.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Side content appears at smaller column indices (left main, right side).
    Leftward,
    /// Side content appears at larger column indices.
    Rightward,
}

impl Direction {
    pub fn sign(self) -> i64 {
        match self {
            Direction::Leftward => 1,
            Direction::Rightward => -1,
        }
    }
}

/// Horizontal search range, in cells of the level being matched.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SearchWindow {
    pub d_max: usize,
    pub slack: usize,
    pub direction: Direction,
}

impl Default for SearchWindow {
    fn default() -> Self {
        Self { d_max: 64, slack: 4, direction: Direction::Leftward }
    }
}

impl SearchWindow {
    pub fn candidates(&self) -> usize {
        self.d_max + self.slack + 1
    }

    pub fn validate_for(&self, width: usize) -> Result<()> {
        if self.d_max + self.slack >= width {
            return Err(Error::input(format!(
                "search window d_max={} slack={} does not fit width {width}",
                self.d_max, self.slack
            )));
        }
        Ok(())
    }

    /// Shrinks `d_max` (then `slack`) so the window fits a map of `width` cells.
    pub fn clamped_to(&self, width: usize) -> Self {
        let limit = width.saturating_sub(1);
        let slack = self.slack.min(limit);
        let d_max = self.d_max.min(limit - slack);
        Self { d_max, slack, direction: self.direction }
    }

    /// Inclusive column range of candidate windows for a target at column `col`.
    pub fn column_range(&self, col: usize, width: usize, patch: usize) -> (usize, usize) {
        let last = width - patch;
        let (back, fwd) = match self.direction {
            Direction::Leftward => (self.d_max, self.slack),
            Direction::Rightward => (self.slack, self.d_max),
        };
        (col.saturating_sub(back), (col + fwd).min(last))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MatchEntry {
    /// Top row of the matched side window.
    pub u: usize,
    /// Left column of the matched side window.
    pub v: usize,
    /// Cosine distance of the match.
    pub rho: f64,
}

/// Per-patch correspondence from main to side features.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchIndexMap {
    pub rows: usize,
    pub cols: usize,
    /// Pyramid level the coordinates address (1-based).
    pub level: usize,
    /// Patch side at that level.
    pub patch: usize,
    entries: Vec<MatchEntry>,
}

impl MatchIndexMap {
    pub fn new(rows: usize, cols: usize, level: usize, patch: usize, entries: Vec<MatchEntry>) -> Result<Self> {
        if entries.len() != rows * cols {
            return Err(Error::shape(format!("{} entries for a {rows}x{cols} grid", entries.len())));
        }
        Ok(Self { rows, cols, level, patch, entries })
    }

    /// The zero-disparity map: patch `(m, n)` maps to `(m B, n B)`.
    pub fn identity(rows: usize, cols: usize, level: usize, patch: usize) -> Self {
        let entries =
            (0..rows * cols).map(|i| MatchEntry { u: (i / cols) * patch, v: (i % cols) * patch, rho: 0.0 }).collect();
        Self { rows, cols, level, patch, entries }
    }

    pub fn get(&self, m: usize, n: usize) -> MatchEntry {
        self.entries[m * self.cols + n]
    }

    pub fn entries(&self) -> &[MatchEntry] {
        &self.entries
    }

    /// Column offset `n B - v` of patch `(m, n)`; positive when the match lies to the left.
    pub fn column_offset(&self, m: usize, n: usize) -> i64 {
        (n * self.patch) as i64 - self.get(m, n).v as i64
    }

    pub fn is_row_restricted(&self) -> bool {
        self.entries.iter().enumerate().all(|(i, e)| e.u == (i / self.cols) * self.patch)
    }

    /// CSV with header `m,n,u,v,rho`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("m,n,u,v,rho\n");
        for m in 0..self.rows {
            for n in 0..self.cols {
                let e = self.get(m, n);
                let _ = writeln!(s, "{m},{n},{},{},{}", e.u, e.v, e.rho);
            }
        }
        s
    }

    pub fn from_csv(text: &str, level: usize, patch: usize) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("m,n,u,v,rho") {
            return Err(Error::format("index map CSV must start with `m,n,u,v,rho`"));
        }
        let mut raw = Vec::new();
        for (ln, line) in lines.enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(Error::format(format!("line {}: expected 5 fields", ln + 2)));
            }
            let p = |s: &str| -> Result<usize> {
                s.trim().parse().map_err(|_| Error::format(format!("line {}: bad integer `{s}`", ln + 2)))
            };
            let rho: f64 = f[4].trim().parse().map_err(|_| Error::format(format!("line {}: bad rho", ln + 2)))?;
            raw.push((p(f[0])?, p(f[1])?, MatchEntry { u: p(f[2])?, v: p(f[3])?, rho }));
        }
        let rows = raw.iter().map(|r| r.0 + 1).max().unwrap_or(0);
        let cols = raw.iter().map(|r| r.1 + 1).max().unwrap_or(0);
        if raw.len() != rows * cols {
            return Err(Error::format("index map CSV does not cover a full grid"));
        }
        let mut entries = vec![MatchEntry { u: 0, v: 0, rho: 0.0 }; rows * cols];
        for (m, n, e) in raw {
            entries[m * cols + n] = e;
        }
        Self::new(rows, cols, level, patch, entries)
    }
}

/// Tuning knobs that must not change results.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MatchOptions {
    /// Target patches scored together in one pass over a row strip.
    pub patches_per_pass: usize,
}

impl Default for MatchOptions {
    fn default() -> Self {
        Self { patches_per_pass: usize::MAX }
    }
}

fn check_pair(h_x: &FeatureMap, h_y: &FeatureMap, patch: usize) -> Result<()> {
    if h_x.channels() != h_y.channels() || h_x.dims() != h_y.dims() {
        return Err(Error::shape(format!(
            "main {}x{} vs side {}x{}",
            h_x.channels(),
            h_x.dims(),
            h_y.channels(),
            h_y.dims()
        )));
    }
    if patch == 0 || patch > h_x.height() || patch > h_x.width() {
        return Err(Error::input(format!("patch size {patch} does not fit {} features", h_x.dims())));
    }
    Ok(())
}

/// Row-restricted stereo patch matching.
pub fn match_row_restricted(
    h_x: &FeatureMap,
    h_y: &FeatureMap,
    patch: usize,
    window: &SearchWindow,
) -> Result<MatchIndexMap> {
    match_row_restricted_with(h_x, h_y, patch, window, &MatchOptions::default())
}

pub fn match_row_restricted_with(
    h_x: &FeatureMap,
    h_y: &FeatureMap,
    patch: usize,
    window: &SearchWindow,
    options: &MatchOptions,
) -> Result<MatchIndexMap> {
    check_pair(h_x, h_y, patch)?;
    if !h_x.height().is_multiple_of(patch) || !h_x.width().is_multiple_of(patch) {
        return Err(Error::input(format!("patch size {patch} must divide feature dims {}; pad first", h_x.dims())));
    }
    window.validate_for(h_x.width())?;
    let rows = h_x.height() / patch;
    let cols = h_x.width() / patch;
    let per_pass = options.patches_per_pass.clamp(1, cols);
    let entries: Vec<MatchEntry> = (0..rows)
        .into_par_iter()
        .flat_map_iter(|m| {
            let mut row = Vec::with_capacity(cols);
            for start in (0..cols).step_by(per_pass) {
                let end = (start + per_pass).min(cols);
                row.extend(score_row_pass(h_x, h_y, patch, window, m, start..end));
            }
            row
        })
        .collect();
    MatchIndexMap::new(rows, cols, 1, patch, entries)
}

/// Scores targets `n in targets` of patch row `m` against their candidate windows in one sweep.
fn score_row_pass(
    h_x: &FeatureMap,
    h_y: &FeatureMap,
    patch: usize,
    window: &SearchWindow,
    m: usize,
    targets: std::ops::Range<usize>,
) -> Vec<MatchEntry> {
    let width = h_x.width();
    let top = m * patch;
    let ranges: Vec<(usize, usize)> = targets.clone().map(|n| window.column_range(n * patch, width, patch)).collect();
    let span_lo = ranges.iter().map(|r| r.0).min().expect("nonempty");
    let span_hi = ranges.iter().map(|r| r.1).max().expect("nonempty");

    let mut dots: Vec<Vec<f64>> = ranges.iter().map(|(lo, hi)| vec![0.0; hi - lo + 1]).collect();
    let mut target_norm = vec![0.0f64; ranges.len()];
    let mut window_norm = vec![0.0f64; span_hi - span_lo + 1];

    for c in 0..h_x.channels() {
        for dy in 0..patch {
            let xrow = h_x.row(c, top + dy);
            let yrow = h_y.row(c, top + dy);
            for (k, v) in (span_lo..=span_hi).enumerate() {
                let acc = &mut window_norm[k];
                for &s in &yrow[v..v + patch] {
                    let s = s as f64;
                    *acc += s * s;
                }
            }
            for (t, n) in targets.clone().enumerate() {
                let xs = &xrow[n * patch..(n + 1) * patch];
                for &s in xs {
                    let s = s as f64;
                    target_norm[t] += s * s;
                }
                let (lo, hi) = ranges[t];
                let acc = &mut dots[t];
                for (dx, &xv) in xs.iter().enumerate() {
                    let xv = xv as f64;
                    let ys = &yrow[lo + dx..=hi + dx];
                    for (a, &yv) in acc.iter_mut().zip(ys) {
                        *a += xv * yv as f64;
                    }
                }
            }
        }
    }

    targets
        .enumerate()
        .map(|(t, n)| {
            let (lo, hi) = ranges[t];
            let col = n * patch;
            let mut best: Option<(f64, usize, usize)> = None;
            for v in lo..=hi {
                let rho = distance_from_sums(dots[t][v - lo], target_norm[t], window_norm[v - span_lo]);
                let key = (rho, col.abs_diff(v), v);
                if best.is_none_or(|b| better_row(key, b)) {
                    best = Some(key);
                }
            }
            let (rho, _, v) = best.expect("at least one candidate");
            MatchEntry { u: top, v, rho }
        })
        .collect()
}

/// Lower distance wins; ties go to the smaller |d|, then the smaller column.
fn better_row(a: (f64, usize, usize), b: (f64, usize, usize)) -> bool {
    a.0 < b.0 || (a.0 == b.0 && (a.1, a.2) < (b.1, b.2))
}

/// Exhaustive matching over every stride-1 window of the side map.
pub struct FullSearch<'a> {
    h_x: &'a FeatureMap,
    h_y: &'a FeatureMap,
    patch: usize,
    norms: Vec<f64>,
}

impl<'a> FullSearch<'a> {
    /// Precomputes the squared norm of every candidate window.
    pub fn new(h_x: &'a FeatureMap, h_y: &'a FeatureMap, patch: usize) -> Result<Self> {
        check_pair(h_x, h_y, patch)?;
        let (rows, cols) = (h_y.height() - patch + 1, h_y.width() - patch + 1);
        let norms = (0..rows)
            .into_par_iter()
            .flat_map_iter(|u| {
                let mut acc = vec![0.0f64; cols];
                for c in 0..h_y.channels() {
                    for dy in 0..patch {
                        let yrow = h_y.row(c, u + dy);
                        for (v, a) in acc.iter_mut().enumerate() {
                            for &s in &yrow[v..v + patch] {
                                let s = s as f64;
                                *a += s * s;
                            }
                        }
                    }
                }
                acc
            })
            .collect();
        Ok(Self { h_x, h_y, patch, norms })
    }

    /// Candidate windows per target patch.
    pub fn candidates(&self) -> usize {
        self.norms.len()
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.h_x.height() / self.patch, self.h_x.width() / self.patch)
    }

    /// Best window for target patch `(m, n)`; ties go to smaller `u`, then smaller `v`.
    pub fn match_patch(&self, m: usize, n: usize) -> MatchEntry {
        let b = self.patch;
        let (rows, cols) = (self.h_y.height() - b + 1, self.h_y.width() - b + 1);
        let (top, left) = (m * b, n * b);
        let mut target_norm = 0.0f64;
        for c in 0..self.h_x.channels() {
            for dy in 0..b {
                for &s in &self.h_x.row(c, top + dy)[left..left + b] {
                    let s = s as f64;
                    target_norm += s * s;
                }
            }
        }
        let best_per_row: Vec<(f64, usize, usize)> = (0..rows)
            .into_par_iter()
            .map(|u| {
                let mut acc = vec![0.0f64; cols];
                for c in 0..self.h_x.channels() {
                    for dy in 0..b {
                        let xs = &self.h_x.row(c, top + dy)[left..left + b];
                        let yrow = self.h_y.row(c, u + dy);
                        for (dx, &xv) in xs.iter().enumerate() {
                            let xv = xv as f64;
                            for (a, &yv) in acc.iter_mut().zip(&yrow[dx..dx + cols]) {
                                *a += xv * yv as f64;
                            }
                        }
                    }
                }
                let mut best = (f64::INFINITY, u, 0);
                for (v, &dot) in acc.iter().enumerate() {
                    let rho = distance_from_sums(dot, target_norm, self.norms[u * cols + v]);
                    if rho < best.0 {
                        best = (rho, u, v);
                    }
                }
                best
            })
            .collect();
        let (rho, u, v) =
            best_per_row
                .into_iter()
                .fold((f64::INFINITY, usize::MAX, usize::MAX), |a, b| if b.0 < a.0 { b } else { a });
        MatchEntry { u, v, rho }
    }
}

/// Greedy full-search matching (reference for benchmarks and comparisons).
pub fn match_full_oracle(h_x: &FeatureMap, h_y: &FeatureMap, patch: usize) -> Result<MatchIndexMap> {
    if !h_x.height().is_multiple_of(patch) || !h_x.width().is_multiple_of(patch) {
        return Err(Error::input(format!("patch size {patch} must divide feature dims {}; pad first", h_x.dims())));
    }
    let search = FullSearch::new(h_x, h_y, patch)?;
    let (rows, cols) = search.grid();
    let entries = (0..rows * cols).map(|i| search.match_patch(i / cols, i % cols)).collect();
    MatchIndexMap::new(rows, cols, 1, patch, entries)
}

/// How level-1 indices map onto coarser levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexScale {
    /// `u_i = floor(u_1 / 2^(i-1))`: coordinates shrink with the feature maps.
    #[default]
    Divide,
    /// `u_i = 2^(i-1) u_1`, the literal reading of the reuse rule.
    Multiply,
}

/// Carries a level-1 map to level `level` in `2..=4`.
pub fn rescale_indices(map: &MatchIndexMap, level: usize, scale: IndexScale) -> Result<MatchIndexMap> {
    if map.level != 1 {
        return Err(Error::input(format!("rescaling expects a level-1 map, got level {}", map.level)));
    }
    if !(2..=4).contains(&level) {
        return Err(Error::input(format!("target level {level} outside 2..=4")));
    }
    let factor = 1usize << (level - 1);
    if !map.patch.is_multiple_of(factor) {
        return Err(Error::input(format!("patch size {} is not divisible by {factor} for level {level}", map.patch)));
    }
    let (patch, f): (usize, fn(usize, usize) -> usize) = match scale {
        IndexScale::Divide => (map.patch / factor, |x, k| x / k),
        IndexScale::Multiply => (map.patch / factor, |x, k| x * k),
    };
    let entries = map.entries.iter().map(|e| MatchEntry { u: f(e.u, factor), v: f(e.v, factor), rho: e.rho }).collect();
    MatchIndexMap::new(map.rows, map.cols, level, patch, entries)
}

/// Builds `h_y*` by copying, for every target patch, the matched side window.
pub fn rearrange_side(h_y: &FeatureMap, map: &MatchIndexMap) -> Result<FeatureMap> {
    let b = map.patch;
    if map.rows * b != h_y.height() || map.cols * b != h_y.width() {
        return Err(Error::shape(format!(
            "{}x{} grid of {b}-cell patches does not tile {} features",
            map.rows,
            map.cols,
            h_y.dims()
        )));
    }
    for (i, e) in map.entries.iter().enumerate() {
        if e.u + b > h_y.height() || e.v + b > h_y.width() {
            return Err(Error::input(format!(
                "patch {} maps to ({}, {}), outside {} features",
                i,
                e.u,
                e.v,
                h_y.dims()
            )));
        }
    }
    let (h, w) = (h_y.height(), h_y.width());
    let mut data = vec![0.0f32; h_y.channels() * h * w];
    data.par_chunks_mut(h * w).enumerate().for_each(|(c, plane)| {
        for m in 0..map.rows {
            for n in 0..map.cols {
                let e = map.get(m, n);
                for dy in 0..b {
                    let src = &h_y.row(c, e.u + dy)[e.v..e.v + b];
                    plane[(m * b + dy) * w + n * b..][..b].copy_from_slice(src);
                }
            }
        }
    });
    Ok(FeatureMap::from_raw(h_y.channels(), h, w, data))
}
