mod common;

use ffca_core::codec::QualityLevel;
use ffca_core::matcher::{match_row_restricted, Direction, SearchWindow};
use ffca_core::pipeline::synth::{synth_pair, texture, TextureKind};
use ffca_core::pipeline::{
    compare_curves, decode_bundle, encode_pair, evaluate_pair, run_cascade, Bundle, PipelineConfig,
};
use ffca_core::pyramid::{extract_pyramid, PyramidRole};
use ffca_core::weights::NetworkWeights;
use ffca_core::Error;

fn small() -> PipelineConfig {
    PipelineConfig { channels: 16, ..PipelineConfig::default() }
}

#[test]
fn identical_views_give_identity_alignment() {
    let img = texture(TextureKind::FilteredNoise, 3, 96, 160, 4).unwrap();
    let cfg = small();
    let out = run_cascade(&img, &img, &cfg, None).unwrap();
    for map in &out.matches {
        for m in 0..map.rows {
            for n in 0..map.cols {
                let e = map.get(m, n);
                assert_eq!((e.u, e.v), (m * map.patch, n * map.patch), "level {}", map.level);
            }
        }
    }
    assert!(out.levels.iter().all(|l| l.d2_unaligned == 0.0 && l.d2_coarse == 0.0 && l.d2_fine == 0.0));
    assert!(!out.fused);
    assert_eq!(out.x_out, img);
}

#[test]
fn coarse_alignment_lowers_feature_distance() {
    let cfg = small();
    for d0 in [8, 16, 32] {
        let pair = synth_pair(TextureKind::FilteredNoise, 3, 128, 256, d0, d0 as u64).unwrap();
        let out = run_cascade(&pair.main, &pair.side, &cfg, None).unwrap();
        // below one cell of shift the floored coarse indices overshoot
        for l in out.levels.iter().filter(|l| d0 >> l.level >= 1) {
            assert!(l.d2_coarse < l.d2_unaligned, "d0={d0} level {}: {l:?}", l.level);
        }
    }
}

#[test]
fn periodic_texture_ties_resolve_to_smallest_offset() {
    // a 32-pixel shift of a 32-periodic checkerboard leaves the interior unchanged,
    // so every candidate one period apart ties and the zero offset must win
    let pair = synth_pair(TextureKind::Checkerboard { period: 32 }, 1, 64, 256, 32, 0).unwrap();
    let ex = small().extractor();
    let hx = extract_pyramid(&pair.main, &ex, PyramidRole::MainHat).unwrap();
    let hy = extract_pyramid(&pair.side, &ex, PyramidRole::SideLossless).unwrap();
    let window = SearchWindow { d_max: 40, slack: 4, direction: Direction::Leftward };
    let map = match_row_restricted(hx.level(1), hy.level(1), 16, &window).unwrap();
    // the two rightmost patches see the replicated border through the wide filters
    for m in 0..map.rows {
        for n in 0..map.cols - 2 {
            assert_eq!(map.get(m, n).v, n * 16, "patch ({m},{n})");
        }
    }
}

#[test]
fn decode_is_deterministic_with_networks() {
    let cfg = small();
    let pair = synth_pair(TextureKind::FilteredNoise, 3, 64, 128, 16, 2).unwrap();
    let weights = NetworkWeights::random(cfg.network(3), 5).unwrap();
    let bundle = encode_pair(&pair.main, Some(&pair.side), &cfg).unwrap();
    let a = decode_bundle(&bundle, None, &cfg, Some(&weights)).unwrap();
    let b = decode_bundle(&bundle, None, &cfg, Some(&weights)).unwrap();
    assert!(a.cascade.fused);
    assert_eq!(a.cascade.x_out, b.cascade.x_out);
    assert_eq!(a.cascade.levels, b.cascade.levels);
    assert_ne!(a.cascade.x_out, a.x_hat);
}

#[test]
fn zero_weights_reproduce_the_baseline() {
    let cfg = small();
    let pair = synth_pair(TextureKind::Gradient, 3, 64, 96, 8, 1).unwrap();
    let weights = NetworkWeights::zeros(cfg.network(3)).unwrap();
    let bundle = encode_pair(&pair.main, Some(&pair.side), &cfg).unwrap();
    let d = decode_bundle(&bundle, None, &cfg, Some(&weights)).unwrap();
    assert!(d.cascade.fused);
    assert_eq!(d.cascade.x_out, d.x_hat);
}

#[test]
fn mismatched_weights_are_rejected() {
    let cfg = small();
    let pair = synth_pair(TextureKind::Gradient, 3, 64, 96, 8, 1).unwrap();
    let other = PipelineConfig { channels: 8, ..cfg.clone() };
    let weights = NetworkWeights::random(other.network(3), 1).unwrap();
    let bundle = encode_pair(&pair.main, Some(&pair.side), &cfg).unwrap();
    assert!(decode_bundle(&bundle, None, &cfg, Some(&weights)).is_err());
}

#[test]
fn side_view_is_required_somewhere() {
    let cfg = small();
    let pair = synth_pair(TextureKind::FilteredNoise, 3, 64, 96, 8, 1).unwrap();
    let bundle = encode_pair(&pair.main, None, &cfg).unwrap();
    let err = decode_bundle(&bundle, None, &cfg, None).unwrap_err();
    assert_eq!(err.exit_code(), 2, "{err}");
    let external = decode_bundle(&bundle, Some(&pair.side), &cfg, None).unwrap();
    let stored = decode_bundle(&encode_pair(&pair.main, Some(&pair.side), &cfg).unwrap(), None, &cfg, None).unwrap();
    assert_eq!(external.cascade.x_out, stored.cascade.x_out);
}

#[test]
fn bundle_corruption_is_a_format_error() {
    let cfg = small();
    let pair = synth_pair(TextureKind::FilteredNoise, 3, 64, 96, 8, 3).unwrap();
    let bytes = encode_pair(&pair.main, Some(&pair.side), &cfg).unwrap().to_bytes();
    assert_eq!(Bundle::from_bytes(&bytes).unwrap().to_bytes(), bytes);
    for i in [0, 5, bytes.len() / 2, bytes.len() - 1] {
        let mut bad = bytes.clone();
        bad[i] ^= 0x40;
        assert!(matches!(Bundle::from_bytes(&bad), Err(Error::Format(_))), "flip at {i}");
    }
    assert!(matches!(Bundle::from_bytes(&bytes[..bytes.len() - 3]), Err(Error::Format(_))));
}

#[test]
fn car_hood_crop_applies_to_both_views() {
    let cfg = PipelineConfig { crop_car_hood: true, ..small() };
    let pair = synth_pair(TextureKind::FilteredNoise, 3, 416, 320, 8, 3).unwrap();
    let bundle = encode_pair(&pair.main, Some(&pair.side), &cfg).unwrap();
    assert_eq!((bundle.main.dims.height, bundle.main.dims.width), (96, 64));
    assert_eq!(bundle.side.as_ref().unwrap().dims(), bundle.main.dims);
    let tiny = texture(TextureKind::Gradient, 3, 256, 256, 0).unwrap();
    assert_eq!(encode_pair(&tiny, Some(&tiny), &cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn identity_fusion_scores_equal_the_baseline() {
    let cfg = PipelineConfig { single_scale_ssim: true, ..small() };
    let pair = synth_pair(TextureKind::FilteredNoise, 3, 64, 128, 16, 8).unwrap();
    let qualities: Vec<QualityLevel> = QualityLevel::all().collect();
    let eval = evaluate_pair(&pair.main, &pair.side, &qualities, &cfg, None).unwrap();
    assert_eq!(eval.baseline.len(), 8);
    for (b, f) in eval.baseline.iter().zip(&eval.fused) {
        assert_eq!((b.bpp, b.psnr, b.ms_ssim), (f.bpp, f.psnr, f.ms_ssim));
    }
    assert!(eval.baseline.windows(2).all(|p| p[0].bpp < p[1].bpp));
    let bd = compare_curves(&eval.baseline, &eval.fused).unwrap();
    assert!(bd.bd_rate_percent.abs() < 1e-9 && bd.bd_psnr_db.abs() < 1e-9, "{bd:?}");
}
