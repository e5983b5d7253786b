use std::path::{Path, PathBuf};

use crate::codec::{QualityLevel, QUANT_STEPS};
use crate::error::{Error, Result};
use crate::matcher::{Direction, IndexScale, SearchWindow};
use crate::metrics::D1Mode;
use crate::pyramid::ExtractorConfig;
use crate::refine::{default_hypotheses, SelectionMode};
use crate::weights::NetworkConfig;

/// Rate-distortion trade-off per quality index, lowest quality first.
pub const DEFAULT_LAMBDAS: [f64; 8] = [0.01, 0.02, 0.035, 0.07, 0.1, 0.2, 0.5, 1.0];

/// Top, bottom and side margins removed by `crop_car_hood`.
pub const CAR_HOOD_CROP: (usize, usize, usize) = (64, 256, 128);

/// Every tunable of the cascade. Loaded from TOML; missing keys take defaults.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Level-1 patch side.
    pub patch: usize,
    /// Channel selection threshold.
    pub mu: f64,
    /// Weight of the feature distortion in the loss.
    pub alpha: f64,
    /// One lambda per quality index.
    pub lambdas: Vec<f64>,
    pub d_max: usize,
    pub slack: usize,
    pub direction: Direction,
    /// Residual disparity hypotheses in level-1 cells.
    pub hypotheses: Vec<f32>,
    /// Feature channels per level.
    pub channels: usize,
    pub hourglass_groups: usize,
    pub hourglass_hidden: usize,
    pub selection_mode: SelectionMode,
    pub index_scale_direction: IndexScale,
    pub d1_mode: D1Mode,
    /// Select channels once at level 1 and reuse the set at levels 2 and 3.
    pub reuse_level1_selection: bool,
    /// Report single-scale SSIM where MS-SSIM is asked for.
    pub single_scale_ssim: bool,
    pub crop_car_hood: bool,
    pub weights: Option<PathBuf>,
    pub quality: u8,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let w = SearchWindow::default();
        Self {
            patch: 16,
            mu: 0.5,
            alpha: 0.1,
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            d_max: w.d_max,
            slack: w.slack,
            direction: w.direction,
            hypotheses: default_hypotheses(),
            channels: 128,
            hourglass_groups: 4,
            hourglass_hidden: 32,
            selection_mode: SelectionMode::Rms,
            index_scale_direction: IndexScale::Divide,
            d1_mode: D1Mode::Mse,
            reuse_level1_selection: false,
            single_scale_ssim: false,
            crop_car_hood: false,
            weights: None,
            quality: 4,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::input(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::input(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::input(m));
        if self.patch < 8 || !self.patch.is_multiple_of(8) {
            return bad(format!("patch must be a positive multiple of 8, got {}", self.patch));
        }
        if self.mu.is_nan() || self.mu < 0.0 {
            return bad(format!("mu must be >= 0, got {}", self.mu));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.lambdas.len() != QUANT_STEPS.len() || self.lambdas.iter().any(|l| !(l.is_finite() && *l >= 0.0)) {
            return bad(format!("lambdas needs {} finite non-negative values", QUANT_STEPS.len()));
        }
        if self.hypotheses.is_empty() || self.hypotheses.iter().any(|h| !h.is_finite()) {
            return bad("hypotheses must be a non-empty list of finite values".into());
        }
        if self.channels == 0 {
            return bad("channels must be positive".into());
        }
        QualityLevel::new(self.quality)?;
        self.network(3).validate()
    }

    pub fn window(&self) -> SearchWindow {
        SearchWindow { d_max: self.d_max, slack: self.slack, direction: self.direction }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig { channels: self.channels }
    }

    pub fn network(&self, image_channels: usize) -> NetworkConfig {
        NetworkConfig {
            channels: self.channels,
            hypotheses: self.hypotheses.len(),
            groups: self.hourglass_groups,
            hidden: self.hourglass_hidden,
            image_channels,
        }
    }

    pub fn quality_level(&self) -> QualityLevel {
        QualityLevel::new(self.quality).expect("validated")
    }

    pub fn lambda(&self, q: QualityLevel) -> f64 {
        self.lambdas[q.index() as usize]
    }
}
