//! Run configuration, read from TOML.
//!
//! Every table and field is optional; the defaults describe the 6-level
//! "mini" pyramid rendered by 8 workers. Annotated files live in this
//! crate's `examples/configs/`.

use crate::orchestrator::{FaultModel, HealthPolicy, NodeProfile, DEFAULT_GROUP_SIZE};
use crate::pyramid::{PlanError, PyramidSpec};
use crate::render::{CostModel, RendererConfig};
use crate::scene::{Colormap, GlyphPolicy, Plane, SceneOptions};
use crate::tiler::{EncodePolicy, Kernel};
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PyramidConfig {
    pub max_level: u32,
    pub tile_px: u64,
    pub task_px: u64,
    pub rendered_level_stride: u32,
    pub world_side_mm: f64,
}

impl Default for PyramidConfig {
    fn default() -> Self {
        Self {
            max_level: 6,
            tile_px: 512,
            task_px: 4096,
            rendered_level_stride: 4,
            world_side_mm: 1.28e6,
        }
    }
}

impl PyramidConfig {
    pub fn spec(&self) -> Result<PyramidSpec, PlanError> {
        PyramidSpec::new(
            self.max_level,
            self.tile_px,
            self.task_px,
            self.rendered_level_stride,
            self.world_side_mm,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    #[default]
    Box2,
    Binomial4,
}

impl KernelChoice {
    pub fn kernel(self) -> Kernel {
        match self {
            KernelChoice::Box2 => Kernel::box2(),
            KernelChoice::Binomial4 => Kernel::binomial4(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    /// Sensor readings file; when unset, `synthetic_sensors` are generated.
    pub readings: Option<PathBuf>,
    pub synthetic_sensors: usize,
    pub scene_id: String,
    /// Average only this hour (RFC 3339).
    pub hour: Option<DateTime<Utc>>,
    pub colormap: Colormap,
    pub glyphs: GlyphPolicy,
    pub plane: Plane,
}

impl Default for SceneConfig {
    fn default() -> Self {
        let o = SceneOptions::default();
        Self {
            readings: None,
            synthetic_sensors: 40,
            scene_id: o.scene_id,
            hour: o.hour,
            colormap: o.colormap,
            glyphs: o.glyphs,
            plane: o.plane,
        }
    }
}

impl SceneConfig {
    pub fn options(&self) -> SceneOptions {
        SceneOptions {
            scene_id: self.scene_id.clone(),
            colormap: self.colormap,
            glyphs: self.glyphs,
            plane: self.plane,
            hour: self.hour,
        }
    }
}

/// Per-node power and price used by the energy and cost tables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EconomicsConfig {
    pub p_av_kw_per_node: f64,
    /// Price per node-hour.
    pub c_hr_per_node: f64,
    /// Pixels in the image; defaults to the top level's pixel count.
    pub pixels: Option<f64>,
}

impl Default for EconomicsConfig {
    fn default() -> Self {
        Self {
            p_av_kw_per_node: 0.11625,
            c_hr_per_node: 0.6709,
            pixels: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub pyramid: PyramidConfig,
    pub scene: SceneConfig,
    pub workers: u32,
    pub group_size: u32,
    pub seed: u64,
    pub max_attempts: u32,
    pub output: PathBuf,
    /// Metrics log; defaults to `metrics.jsonl` next to the tiles.
    pub metrics: Option<PathBuf>,
    pub kernel: KernelChoice,
    pub encode: EncodePolicy,
    pub renderer: RendererConfig,
    pub cost: CostModel,
    pub faults: FaultModel,
    pub health: HealthPolicy,
    pub economics: EconomicsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pyramid: PyramidConfig::default(),
            scene: SceneConfig::default(),
            workers: 8,
            group_size: DEFAULT_GROUP_SIZE,
            seed: 1,
            max_attempts: 3,
            output: PathBuf::from("out"),
            metrics: None,
            kernel: KernelChoice::default(),
            encode: EncodePolicy::default(),
            renderer: RendererConfig::default(),
            cost: CostModel::default(),
            faults: FaultModel::default(),
            health: HealthPolicy::default(),
            economics: EconomicsConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn spec(&self) -> Result<PyramidSpec, ConfigError> {
        Ok(self.pyramid.spec()?)
    }

    pub fn nodes(&self) -> Vec<NodeProfile> {
        NodeProfile::pool(self.workers, self.group_size)
    }

    pub fn metrics_path(&self) -> PathBuf {
        self.metrics
            .clone()
            .unwrap_or_else(|| self.output.join("metrics.jsonl"))
    }

    /// Checks everything that can be checked before work starts.
    pub fn validate(&self) -> Result<PyramidSpec, ConfigError> {
        let spec = self.spec()?;
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.workers == 0 {
            return invalid("workers must be at least 1".into());
        }
        if self.max_attempts == 0 {
            return invalid("max_attempts must be at least 1".into());
        }
        if let EncodePolicy::Jpeg { quality } = self.encode {
            if !(1..=100).contains(&quality) {
                return invalid(format!("jpeg quality {quality} not in 1..=100"));
            }
        }
        if !(self.cost.base_seconds > 0.0) {
            return invalid("cost.base_seconds must be positive".into());
        }
        if !(0.0..1.0).contains(&self.cost.jitter_fraction) {
            return invalid("cost.jitter_fraction must be in [0, 1)".into());
        }
        if self.cost.phase_split.iter().any(|p| !(*p >= 0.0))
            || self.cost.phase_split.iter().sum::<f64>() <= 0.0
        {
            return invalid("cost.phase_split must be non-negative with a positive sum".into());
        }
        self.faults
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scene
            .colormap
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.scene
            .glyphs
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }
}
