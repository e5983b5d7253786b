use std::path::Path;

use crate::error::{Error, Result};
use crate::fusion::{fuse_features, fuse_reconstruct};
use crate::io::{write_pgm_scaled, write_pnm};
use crate::matcher::{match_row_restricted, rearrange_side, rescale_indices, MatchIndexMap};
use crate::metrics::feature_d2;
use crate::pyramid::{extract_pyramid, FeaturePyramid, PyramidRole, LEVELS};
use crate::refine::{
    build_cost_volume, hourglass_forward, select_channels, sparse_warp, ChannelSelection, DisparityField,
    REFINED_LEVELS,
};
use crate::tensor::{FeatureMap, ImagePlane};
use crate::weights::NetworkWeights;

use super::PipelineConfig;

/// Feature distances of one level through the cascade.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct LevelReport {
    pub level: usize,
    /// Main vs raw side features.
    pub d2_unaligned: f64,
    /// Main vs rearranged side features.
    pub d2_coarse: f64,
    /// Main vs warped side features.
    pub d2_fine: f64,
    pub selected_channels: usize,
}

/// Everything the decoder-side cascade produced.
#[derive(Debug, Clone)]
pub struct CascadeOutput {
    pub x_out: ImagePlane,
    pub main_features: FeaturePyramid,
    pub side_features: FeaturePyramid,
    pub side_coarse: FeaturePyramid,
    pub side_fine: FeaturePyramid,
    /// Matches at levels 1..=4.
    pub matches: Vec<MatchIndexMap>,
    pub disparity: DisparityField,
    /// Selections at levels 1..=3.
    pub selections: Vec<ChannelSelection>,
    pub levels: Vec<LevelReport>,
    /// Whether the fusion network ran.
    pub fused: bool,
}

impl CascadeOutput {
    /// Level-1 feature distortion after coarse alignment.
    pub fn d2(&self) -> f64 {
        self.levels[0].d2_coarse
    }
}

/// Rearranges one level of side features, padding to the patch size and cropping back.
fn coarse_align(h_y: &FeatureMap, map: &MatchIndexMap) -> Result<FeatureMap> {
    let (padded, dims) = h_y.pad_replicate(map.patch)?;
    rearrange_side(&padded, map)?.crop_to(dims)
}

/// Runs feature extraction, coarse matching, refinement and fusion on a decoded main view.
pub fn run_cascade(
    x_hat: &ImagePlane,
    side: &ImagePlane,
    config: &PipelineConfig,
    weights: Option<&NetworkWeights>,
) -> Result<CascadeOutput> {
    config.validate()?;
    if x_hat.channels() != side.channels() || x_hat.dims() != side.dims() {
        return Err(Error::input(format!(
            "main {}x{} and side {}x{} differ",
            x_hat.channels(),
            x_hat.dims(),
            side.channels(),
            side.dims()
        )));
    }
    if let Some(w) = weights {
        let expect = config.network(x_hat.channels());
        if *w.config() != expect {
            return Err(Error::weights(
                "meta",
                format!("weights built for {:?}, pipeline needs {:?}", w.config(), expect),
            ));
        }
    }
    let extractor = config.extractor();
    let hx = extract_pyramid(x_hat, &extractor, PyramidRole::MainHat)?;
    let hy = extract_pyramid(side, &extractor, PyramidRole::SideLossless)?;

    let (hx1, _) = hx.level(1).pad_replicate(config.patch)?;
    let (hy1, _) = hy.level(1).pad_replicate(config.patch)?;
    let window = config.window().clamped_to(hx1.width());
    let level1 = match_row_restricted(&hx1, &hy1, config.patch, &window)?;

    let mut matches = vec![level1];
    for level in 2..=LEVELS {
        matches.push(rescale_indices(&matches[0], level, config.index_scale_direction)?);
    }
    let coarse: Vec<FeatureMap> =
        (1..=LEVELS).map(|i| coarse_align(hy.level(i), &matches[i - 1])).collect::<Result<_>>()?;

    let l1 = hx.level(1);
    let disparity = match weights {
        Some(w) => {
            let volumes = (1..=REFINED_LEVELS)
                .map(|i| build_cost_volume(i, hx.level(i), &coarse[i - 1]))
                .collect::<Result<Vec<_>>>()?;
            let scores = hourglass_forward(&volumes, w)?;
            DisparityField::from_scores(scores, config.hypotheses.clone())?
        }
        None => DisparityField::zero(l1.height(), l1.width(), config.hypotheses.clone()),
    };

    let mut selections: Vec<ChannelSelection> = Vec::with_capacity(REFINED_LEVELS);
    let mut fine = Vec::with_capacity(LEVELS);
    for i in 1..=LEVELS {
        if i > REFINED_LEVELS {
            fine.push(coarse[i - 1].clone());
            continue;
        }
        let g = if config.reuse_level1_selection && i > 1 {
            selections[0].clone()
        } else {
            select_channels(hx.level(i), &coarse[i - 1], config.mu, config.selection_mode)?
        };
        fine.push(sparse_warp(&coarse[i - 1], disparity.level(i), &g, config.direction)?);
        selections.push(g);
    }

    let mut levels = Vec::with_capacity(LEVELS);
    for i in 1..=LEVELS {
        levels.push(LevelReport {
            level: i,
            d2_unaligned: feature_d2(hx.level(i), hy.level(i))?,
            d2_coarse: feature_d2(hx.level(i), &coarse[i - 1])?,
            d2_fine: feature_d2(hx.level(i), &fine[i - 1])?,
            selected_channels: selections.get(i - 1).map_or(0, |g| g.len()),
        });
    }

    let (x_out, fused) = match weights {
        Some(w) => {
            let residual = fuse_features(hx.levels(), &fine, w)?.crop_to(x_hat.dims())?;
            (fuse_reconstruct(x_hat, &residual)?, true)
        }
        None => (x_hat.clone(), false),
    };

    Ok(CascadeOutput {
        x_out,
        side_coarse: FeaturePyramid::new(coarse, PyramidRole::SideCoarse)?,
        side_fine: FeaturePyramid::new(fine, PyramidRole::SideFine)?,
        main_features: hx,
        side_features: hy,
        matches,
        disparity,
        selections,
        levels,
        fused,
    })
}

/// Writes the level-1 index map, the disparity maps and per-level distances into `dir`.
pub fn dump_debug(dir: impl AsRef<Path>, x_hat: &ImagePlane, out: &CascadeOutput) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("index_map_level1.csv"), out.matches[0].to_csv())?;
    let hyp = &out.disparity.hypotheses;
    let lo = hyp.iter().copied().fold(f32::INFINITY, f32::min);
    let hi = hyp.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    for i in 1..=REFINED_LEVELS {
        let scale = (1u32 << (i - 1)) as f32;
        write_pgm_scaled(dir.join(format!("disparity_level{i}.pgm")), out.disparity.level(i), lo / scale, hi / scale)?;
    }
    write_pnm(dir.join("x_hat.pnm"), x_hat)?;
    let stages = serde_json::json!({
        "fused": out.fused,
        "levels": out.levels,
        "selected": out.selections.iter().map(|g| g.indices().to_vec()).collect::<Vec<_>>(),
    });
    std::fs::write(dir.join("stages.json"), serde_json::to_string_pretty(&stages).expect("json"))?;
    Ok(())
}
