use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cache::AreaMode;
use crate::error::{Error, Result};
use crate::query::DEFAULT_ALPHA;
use crate::sampling::SamplingStrategy;
use crate::tsdf::GridParams;

/// Resolution at which `min_mask_pixels` is stated; other resolutions scale it
/// by pixel count.
pub const REFERENCE_PIXELS: f64 = 640.0 * 480.0;

/// Engine settings. Loaded from TOML; every field is optional there.
/// Distances left unset derive from `voxel_size`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub voxel_size: f64,
    pub voxels_per_side: u32,
    /// Defaults to 4 voxels.
    pub truncation: Option<f64>,
    pub max_weight: f32,
    pub block_capacity: usize,
    pub sampling: SamplingStrategy,
    pub cache_capacity: usize,
    pub environment_cache_capacity: usize,
    pub area_mode: AreaMode,
    pub alpha: f64,
    /// Largest 1 − IoU cost still accepted as a match.
    pub accept_threshold: f64,
    /// Projection occlusion tolerance; defaults to 5 voxels.
    pub occlusion_tolerance: Option<f64>,
    /// Minimum valid-depth pixels for a new instance, at 640×480.
    pub min_mask_pixels: usize,
    /// Point-to-ground-truth association radius; defaults to 2 voxels.
    pub gt_match_radius: Option<f64>,
    pub seed: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            voxel_size: 8.0 / 512.0,
            voxels_per_side: 8,
            truncation: None,
            max_weight: 64.0,
            block_capacity: 16,
            sampling: SamplingStrategy::Confidence,
            cache_capacity: 3,
            environment_cache_capacity: 3,
            area_mode: AreaMode::Footprint,
            alpha: DEFAULT_ALPHA,
            accept_threshold: 0.8,
            occlusion_tolerance: None,
            min_mask_pixels: 50,
            gt_match_radius: None,
            seed: 0,
        }
    }
}

impl EngineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn truncation(&self) -> f64 {
        self.truncation.unwrap_or(4.0 * self.voxel_size)
    }

    pub fn occlusion_tolerance(&self) -> f64 {
        self.occlusion_tolerance.unwrap_or(5.0 * self.voxel_size)
    }

    pub fn gt_match_radius(&self) -> f64 {
        self.gt_match_radius.unwrap_or(2.0 * self.voxel_size)
    }

    pub fn grid_params(&self) -> GridParams {
        GridParams {
            voxel_size: self.voxel_size,
            voxels_per_side: self.voxels_per_side,
            truncation: self.truncation(),
            max_weight: self.max_weight,
        }
    }

    /// `min_mask_pixels` rescaled to a `width`×`height` image, rounded up.
    pub fn min_mask_pixels_at(&self, width: u32, height: u32) -> usize {
        let scale = width as f64 * height as f64 / REFERENCE_PIXELS;
        (self.min_mask_pixels as f64 * scale).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("voxel_size", self.voxel_size),
            ("truncation", self.truncation()),
            ("max_weight", self.max_weight as f64),
            ("occlusion_tolerance", self.occlusion_tolerance()),
            ("gt_match_radius", self.gt_match_radius()),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::Config(format!("{name} must be positive, got {value}")));
            }
        }
        let counts = [
            ("voxels_per_side", self.voxels_per_side as usize),
            ("block_capacity", self.block_capacity),
            ("cache_capacity", self.cache_capacity),
            ("environment_cache_capacity", self.environment_cache_capacity),
        ];
        for (name, value) in counts {
            if value == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!("alpha must lie in (0, 1), got {}", self.alpha)));
        }
        if !(0.0..=1.0).contains(&self.accept_threshold) {
            return Err(Error::Config(format!(
                "accept_threshold must lie in [0, 1], got {}",
                self.accept_threshold
            )));
        }
        Ok(())
    }
}
