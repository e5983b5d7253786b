//! Image and feature distortion measures, the composite evaluation loss and
//! Bjøntegaard deltas between rate-distortion curves.

mod rd;

pub use rd::{bd_metrics, loss_eval, BdReport, D1Mode, RDCurve, RDPoint, RD_CSV_HEADER};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, ImagePlane};

/// Returned for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

fn check_same(a: &ImagePlane, b: &ImagePlane) -> Result<()> {
    if a.channels() != b.channels() || a.dims() != b.dims() {
        return Err(Error::shape(format!("images {}x{} and {}x{}", a.channels(), a.dims(), b.channels(), b.dims())));
    }
    Ok(())
}

/// Mean squared error of `[0,1]` samples.
pub fn mse(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same(a, b)?;
    Ok(a.as_map().squared_distance(b.as_map())? / a.samples().len() as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse <= 0.0 {
        PSNR_CAP_DB
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP_DB)
    }
}

/// Peak signal-to-noise ratio for a peak of 1.0, capped at 100 dB.
pub fn psnr(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

/// Mean squared difference of two feature maps.
pub fn feature_d2(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    Ok(a.squared_distance(b)? / a.data().len() as f64)
}

const WINDOW: usize = 11;
const SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;
/// Per-scale exponents, finest first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];
/// Smallest image side supported by five scales.
pub const MS_SSIM_MIN_SIDE: usize = 161;

fn gaussian() -> [f64; WINDOW] {
    let mut g = [0.0; WINDOW];
    let c = (WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SIGMA * SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable 'valid' Gaussian filtering.
fn blur(plane: &[f64], h: usize, w: usize, g: &[f64; WINDOW]) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h + 1 - WINDOW, w + 1 - WINDOW);
    let mut tmp = vec![0.0; h * ow];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            tmp[y * ow + x] = g.iter().zip(&row[x..x + WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..WINDOW).map(|k| g[k] * tmp[(y + k) * ow + x]).sum();
        }
    }
    (out, oh, ow)
}

/// Mean SSIM and mean contrast-structure term of one plane pair.
fn ssim_terms(a: &[f64], b: &[f64], h: usize, w: usize) -> (f64, f64) {
    let g = gaussian();
    let (c1, c2) = (K1 * K1, K2 * K2);
    let prod = |p: &[f64], q: &[f64]| -> Vec<f64> { p.iter().zip(q).map(|(x, y)| x * y).collect() };
    let (mu_a, _, _) = blur(a, h, w, &g);
    let (mu_b, _, _) = blur(b, h, w, &g);
    let (aa, _, _) = blur(&prod(a, a), h, w, &g);
    let (bb, _, _) = blur(&prod(b, b), h, w, &g);
    let (ab, _, _) = blur(&prod(a, b), h, w, &g);
    let n = mu_a.len() as f64;
    let (mut ssim, mut cs) = (0.0, 0.0);
    for i in 0..mu_a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let var_a = aa[i] - ma * ma;
        let var_b = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        let c = (2.0 * cov + c2) / (var_a + var_b + c2);
        let l = (2.0 * ma * mb + c1) / (ma * ma + mb * mb + c1);
        cs += c;
        ssim += l * c;
    }
    (ssim / n, cs / n)
}

/// 2x2 average pooling; an odd trailing row or column is replicated first.
fn downsample(p: &[f64], h: usize, w: usize) -> (Vec<f64>, usize, usize) {
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let at = |y: usize, x: usize| p[y.min(h - 1) * w + x.min(w - 1)];
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let (yy, xx) = (2 * y, 2 * x);
            out.push(((at(yy, xx) + at(yy, xx + 1)) + (at(yy + 1, xx) + at(yy + 1, xx + 1))) * 0.25);
        }
    }
    (out, oh, ow)
}

fn planes(img: &ImagePlane) -> Vec<Vec<f64>> {
    (0..img.channels()).map(|c| img.as_map().channel(c).iter().map(|&v| v as f64).collect()).collect()
}

/// Single-scale SSIM with an 11-tap Gaussian window, averaged over channels.
pub fn ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same(a, b)?;
    let (h, w) = (a.height(), a.width());
    if h < WINDOW || w < WINDOW {
        return Err(Error::input(format!("SSIM needs at least {WINDOW} pixels per side, got {}", a.dims())));
    }
    let (pa, pb) = (planes(a), planes(b));
    let total: f64 = pa.iter().zip(&pb).map(|(x, y)| ssim_terms(x, y, h, w).0).sum();
    Ok(total / pa.len() as f64)
}

/// Five-scale MS-SSIM, averaged over channels.
pub fn ms_ssim(a: &ImagePlane, b: &ImagePlane) -> Result<f64> {
    check_same(a, b)?;
    if a.height() < MS_SSIM_MIN_SIDE || a.width() < MS_SSIM_MIN_SIDE {
        return Err(Error::input(format!(
            "image {} is too small for 5-scale MS-SSIM (need at least {MS_SSIM_MIN_SIDE} pixels per side); \
             enable single-scale SSIM (`single_scale_ssim = true` or --single-scale-ssim)",
            a.dims()
        )));
    }
    let (pa, pb) = (planes(a), planes(b));
    let mut total = 0.0;
    for (x, y) in pa.into_iter().zip(pb) {
        let (mut x, mut y, mut h, mut w) = (x, y, a.height(), a.width());
        let mut score = 1.0;
        for (scale, &weight) in MS_SSIM_WEIGHTS.iter().enumerate() {
            let (s, cs) = ssim_terms(&x, &y, h, w);
            let term = if scale + 1 == MS_SSIM_WEIGHTS.len() { s } else { cs };
            score *= term.max(0.0).powf(weight);
            if scale + 1 < MS_SSIM_WEIGHTS.len() {
                let (nx, nh, nw) = downsample(&x, h, w);
                let (ny, _, _) = downsample(&y, h, w);
                (x, y, h, w) = (nx, ny, nh, nw);
            }
        }
        total += score;
    }
    Ok((total / a.channels() as f64).clamp(0.0, 1.0))
}
