//! End-to-end orchestration: encoding a stereo pair into a bundle, decoding
//! with the alignment cascade, rate-distortion evaluation, benchmarking and
//! synthetic fixtures.

pub mod bench;
mod bundle;
mod cascade;
mod config;
pub mod synth;

pub use bundle::{Bundle, BUNDLE_MAGIC, BUNDLE_VERSION};
pub use cascade::{dump_debug, run_cascade, CascadeOutput, LevelReport};
pub use config::{PipelineConfig, CAR_HOOD_CROP, DEFAULT_LAMBDAS};

use crate::codec::{bpp, decode_image, encode_image, QualityLevel};
use crate::error::{Error, Result};
use crate::metrics::{bd_metrics, ms_ssim, mse, psnr, ssim, BdReport, D1Mode, RDCurve, RDPoint};
use crate::tensor::ImagePlane;
use crate::weights::NetworkWeights;

/// Applies the optional border crop configured for the dataset.
pub fn preprocess(image: &ImagePlane, config: &PipelineConfig) -> Result<ImagePlane> {
    if config.crop_car_hood {
        let (top, bottom, sides) = CAR_HOOD_CROP;
        image.crop_border(top, bottom, sides)
    } else {
        Ok(image.clone())
    }
}

/// Codes the main view at `config.quality`. The side view, if given, is stored
/// losslessly next to it and never influences the main bitstream.
pub fn encode_pair(main: &ImagePlane, side: Option<&ImagePlane>, config: &PipelineConfig) -> Result<Bundle> {
    config.validate()?;
    let main = preprocess(main, config)?;
    let side = side.map(|s| preprocess(s, config)).transpose()?;
    if let Some(s) = &side {
        if s.channels() != main.channels() || s.dims() != main.dims() {
            return Err(Error::input(format!(
                "main {}x{} and side {}x{} differ",
                main.channels(),
                main.dims(),
                s.channels(),
                s.dims()
            )));
        }
    }
    Ok(Bundle { main: encode_image(&main, config.quality_level())?, side, config: config.clone() })
}

/// Result of decoding a bundle.
#[derive(Debug, Clone)]
pub struct Decoded {
    pub x_hat: ImagePlane,
    pub cascade: CascadeOutput,
}

/// Decodes the main view and runs the cascade. `external_side` replaces a
/// stored side view and is required when the bundle has none.
pub fn decode_bundle(
    bundle: &Bundle,
    external_side: Option<&ImagePlane>,
    config: &PipelineConfig,
    weights: Option<&NetworkWeights>,
) -> Result<Decoded> {
    let side = match (external_side, &bundle.side) {
        (Some(s), _) => preprocess(s, config)?,
        (None, Some(s)) => s.clone(),
        (None, None) => return Err(Error::input("bundle carries no side view; supply one with --side-external")),
    };
    let x_hat = decode_image(&bundle.main)?;
    let cascade = run_cascade(&x_hat, &side, config, weights)?;
    Ok(Decoded { x_hat, cascade })
}

/// Quality measures shared by the baseline and fused curves.
fn similarity(a: &ImagePlane, b: &ImagePlane, config: &PipelineConfig) -> Result<f64> {
    if config.single_scale_ssim {
        Ok(ssim(a, b)?.clamp(0.0, 1.0))
    } else {
        ms_ssim(a, b)
    }
}

fn point(
    label: &str,
    original: &ImagePlane,
    recon: &ImagePlane,
    rate: f64,
    d2: f64,
    q: QualityLevel,
    config: &PipelineConfig,
) -> Result<RDPoint> {
    let s = similarity(original, recon, config)?;
    let d1 = match config.d1_mode {
        D1Mode::Mse => mse(original, recon)?,
        D1Mode::MsSsim => 1.0 - s,
    };
    RDPoint::new(label, rate, psnr(original, recon)?, s, d1, d2, config.lambda(q), config.alpha)
}

/// Per-quality record of one pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairEval {
    pub baseline: Vec<RDPoint>,
    pub fused: Vec<RDPoint>,
}

/// Encodes and decodes one pair at every quality in `qualities`.
pub fn evaluate_pair(
    main: &ImagePlane,
    side: &ImagePlane,
    qualities: &[QualityLevel],
    config: &PipelineConfig,
    weights: Option<&NetworkWeights>,
) -> Result<PairEval> {
    let original = preprocess(main, config)?;
    let mut out = PairEval { baseline: Vec::new(), fused: Vec::new() };
    for &q in qualities {
        let cfg = PipelineConfig { quality: q.index(), ..config.clone() };
        let bundle = encode_pair(main, Some(side), &cfg)?;
        let decoded = decode_bundle(&bundle, None, &cfg, weights)?;
        let rate = bpp(&bundle.main, bundle.main.dims);
        let d2 = decoded.cascade.d2();
        out.baseline.push(point("baseline", &original, &decoded.x_hat, rate, d2, q, &cfg)?);
        out.fused.push(point("fused", &original, &decoded.cascade.x_out, rate, d2, q, &cfg)?);
    }
    Ok(out)
}

/// Averages per-pair records quality by quality.
pub fn average_points(runs: &[Vec<RDPoint>]) -> Result<Vec<RDPoint>> {
    let first = runs.first().ok_or_else(|| Error::input("no evaluated pairs"))?;
    let n = runs.len() as f64;
    (0..first.len())
        .map(|k| {
            let mean = |f: fn(&RDPoint) -> f64| runs.iter().map(|r| f(&r[k])).sum::<f64>() / n;
            let p = &first[k];
            RDPoint::new(
                p.label.clone(),
                mean(|p| p.bpp),
                mean(|p| p.psnr),
                mean(|p| p.ms_ssim),
                mean(|p| p.d1),
                mean(|p| p.d2),
                p.lambda,
                p.alpha,
            )
        })
        .collect()
}

/// CSV body for points that need not be monotone in rate.
pub fn rd_csv(points: &[RDPoint]) -> String {
    let mut s = format!("{}\n", crate::metrics::RD_CSV_HEADER);
    for p in points {
        s.push_str(&format!("{},{},{},{},{},{}\n", p.label, p.bpp, p.psnr, p.ms_ssim, p.d2, p.loss));
    }
    s
}

/// BD report of the fused curve against the baseline, when both curves allow one.
pub fn compare_curves(baseline: &[RDPoint], fused: &[RDPoint]) -> Result<BdReport> {
    let reference = RDCurve::new("baseline", sorted(baseline))?;
    let test = RDCurve::new("fused", sorted(fused))?;
    bd_metrics(&reference, &test)
}

fn sorted(points: &[RDPoint]) -> Vec<RDPoint> {
    let mut v = points.to_vec();
    v.sort_by(|a, b| a.bpp.total_cmp(&b.bpp));
    v
}
