use nalgebra::{DMatrix, DVector};
use std::fmt::Write as _;

use crate::error::{Error, Result};

pub const RD_CSV_HEADER: &str = "label,bpp,psnr_db,ms_ssim,d2,loss";

/// Image distortion term of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum D1Mode {
    /// Mean squared error of `[0,1]` samples.
    #[default]
    Mse,
    /// `1 - MS-SSIM`.
    MsSsim,
}

/// `bpp + lambda ((1 - alpha) d1 + alpha d2)`.
pub fn loss_eval(bpp: f64, d1: f64, d2: f64, lambda: f64, alpha: f64) -> Result<f64> {
    if ![bpp, d1, d2, lambda, alpha].iter().all(|v| v.is_finite()) {
        return Err(Error::input("loss terms must be finite"));
    }
    if lambda < 0.0 || !(0.0..=1.0).contains(&alpha) {
        return Err(Error::input(format!("need lambda >= 0 and alpha in [0, 1], got {lambda}, {alpha}")));
    }
    Ok(bpp + lambda * ((1.0 - alpha) * d1 + alpha * d2))
}

/// One evaluated operating point.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RDPoint {
    pub label: String,
    pub bpp: f64,
    pub psnr: f64,
    pub ms_ssim: f64,
    pub d1: f64,
    pub d2: f64,
    pub loss: f64,
    pub lambda: f64,
    pub alpha: f64,
}

impl RDPoint {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        label: impl Into<String>,
        bpp: f64,
        psnr: f64,
        ms_ssim: f64,
        d1: f64,
        d2: f64,
        lambda: f64,
        alpha: f64,
    ) -> Result<Self> {
        if bpp.is_nan() || bpp < 0.0 {
            return Err(Error::input(format!("bpp must be >= 0, got {bpp}")));
        }
        if !(0.0..=1.0).contains(&ms_ssim) {
            return Err(Error::input(format!("MS-SSIM {ms_ssim} outside [0, 1]")));
        }
        let loss = loss_eval(bpp, d1, d2, lambda, alpha)?;
        Ok(Self { label: label.into(), bpp, psnr, ms_ssim, d1, d2, loss, lambda, alpha })
    }

    fn csv_row(&self) -> String {
        format!("{},{},{},{},{},{}", self.label, self.bpp, self.psnr, self.ms_ssim, self.d2, self.loss)
    }
}

/// Operating points of one codec configuration, in strictly increasing bpp.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct RDCurve {
    pub name: String,
    points: Vec<RDPoint>,
}

impl RDCurve {
    pub fn new(name: impl Into<String>, points: Vec<RDPoint>) -> Result<Self> {
        if let Some(w) =
            points.windows(2).find(|w| w[1].bpp.partial_cmp(&w[0].bpp) != Some(std::cmp::Ordering::Greater))
        {
            return Err(Error::input(format!("curve bpp must strictly increase: {} then {}", w[0].bpp, w[1].bpp)));
        }
        Ok(Self { name: name.into(), points })
    }

    pub fn points(&self) -> &[RDPoint] {
        &self.points
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{RD_CSV_HEADER}\n");
        for p in &self.points {
            let _ = writeln!(s, "{}", p.csv_row());
        }
        s
    }
}

/// Result of comparing a test curve against a reference.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BdReport {
    pub reference: String,
    pub test: String,
    /// Average bitrate change at equal PSNR; negative means the test curve saves bits.
    pub bd_rate_percent: f64,
    /// Average PSNR change at equal bitrate.
    pub bd_psnr_db: f64,
    /// Shared bpp range the PSNR delta was integrated over.
    pub overlap: [f64; 2],
}

/// Least-squares cubic `c0 + c1 x + c2 x^2 + c3 x^3`.
fn fit_cubic(x: &[f64], y: &[f64]) -> Result<[f64; 4]> {
    let a = DMatrix::from_fn(x.len(), 4, |r, c| x[r].powi(c as i32));
    let b = DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-14).map_err(|e| Error::Invariant(format!("cubic fit failed: {e}")))?;
    Ok([sol[0], sol[1], sol[2], sol[3]])
}

fn integral(c: &[f64; 4], lo: f64, hi: f64) -> f64 {
    let prim = |x: f64| c[0] * x + c[1] * x * x / 2.0 + c[2] * x.powi(3) / 3.0 + c[3] * x.powi(4) / 4.0;
    prim(hi) - prim(lo)
}

fn overlap(a: &[f64], b: &[f64]) -> (f64, f64) {
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min(a).max(min(b)), max(a).min(max(b)))
}

/// Bjøntegaard delta rate and PSNR over the overlapping range.
pub fn bd_metrics(reference: &RDCurve, test: &RDCurve) -> Result<BdReport> {
    for c in [reference, test] {
        if c.points.len() < 4 {
            return Err(Error::input(format!("curve `{}` has {} points, need at least 4", c.name, c.points.len())));
        }
        if c.points.iter().any(|p| p.bpp.is_nan() || p.bpp <= 0.0) {
            return Err(Error::input(format!("curve `{}` has a non-positive bpp", c.name)));
        }
    }
    let lr = |c: &RDCurve| -> Vec<f64> { c.points.iter().map(|p| p.bpp.log10()).collect() };
    let ps = |c: &RDCurve| -> Vec<f64> { c.points.iter().map(|p| p.psnr).collect() };
    let (r_ref, r_test, p_ref, p_test) = (lr(reference), lr(test), ps(reference), ps(test));

    let (lo, hi) = overlap(&r_ref, &r_test);
    if hi.partial_cmp(&lo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::input("curves do not overlap in bitrate"));
    }
    let bd_psnr =
        (integral(&fit_cubic(&r_test, &p_test)?, lo, hi) - integral(&fit_cubic(&r_ref, &p_ref)?, lo, hi)) / (hi - lo);

    let (plo, phi) = overlap(&p_ref, &p_test);
    if phi.partial_cmp(&plo) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::input("curves do not overlap in quality"));
    }
    let avg = (integral(&fit_cubic(&p_test, &r_test)?, plo, phi) - integral(&fit_cubic(&p_ref, &r_ref)?, plo, phi))
        / (phi - plo);
    let bd_rate = (10f64.powf(avg) - 1.0) * 100.0;

    Ok(BdReport {
        reference: reference.name.clone(),
        test: test.name.clone(),
        bd_rate_percent: bd_rate,
        bd_psnr_db: bd_psnr,
        overlap: [10f64.powf(lo), 10f64.powf(hi)],
    })
}
