#![allow(dead_code)]

use std::path::Path;
use std::process::{Command, Output};

use ffca_core::matcher::{cosine_distance, flatten_window, MatchEntry, SearchWindow};
use ffca_core::tensor::FeatureMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_map(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(c, h, w, |_, _, _| rng.random_range(-1.0f32..1.0)).unwrap()
}

/// Brute-force match of one target patch: every column the window allows is
/// scored with the plain cosine distance, ties go to the smaller
/// |column offset| and then to the smaller column.
pub fn naive_match(
    h_x: &FeatureMap,
    h_y: &FeatureMap,
    patch: usize,
    window: &SearchWindow,
    m: usize,
    n: usize,
) -> MatchEntry {
    let (row, col) = (m * patch, n * patch);
    let target = flatten_window(h_x, row, col, patch);
    let sign = window.direction.sign();
    let last = (h_y.width() - patch) as i64;
    let mut best: Option<(f64, i64, usize)> = None;
    for d in -(window.slack as i64)..=window.d_max as i64 {
        let v = col as i64 - sign * d;
        if v < 0 || v > last {
            continue;
        }
        let v = v as usize;
        let rho = cosine_distance(&target, &flatten_window(h_y, row, v, patch)).unwrap();
        let better = match best {
            None => true,
            Some((r, ad, bv)) => rho < r || (rho == r && (d.abs(), v) < (ad, bv)),
        };
        if better {
            best = Some((rho, d.abs(), v));
        }
    }
    let (rho, _, v) = best.expect("window holds at least one candidate");
    MatchEntry { u: row, v, rho }
}

pub fn ffca(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ffca")).args(args).output().expect("binary runs")
}

pub fn ffca_ok(args: &[&str]) -> String {
    let out = ffca(args);
    assert!(
        out.status.success(),
        "ffca {args:?} failed with {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

pub fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Config file with a small channel count so end-to-end runs stay fast.
pub fn small_config(dir: &Path, channels: usize) -> std::path::PathBuf {
    let p = dir.join("small.toml");
    std::fs::write(&p, format!("channels = {channels}\n")).unwrap();
    p
}
