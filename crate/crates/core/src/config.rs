//! Pipeline configuration: a flat `key = value` document with a version.

use serde::{Deserialize, Serialize};

use crate::field::{HashGridConfig, NerfConfig, NerfTrainConfig, PercentileMode};
use crate::ssan::{DistillConfig, LossWeights, RadialPrior, SsanConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: missing 'version' (expected {CONFIG_VERSION})")]
    MissingVersion,
    #[error("config: version {0} is not supported (expected {CONFIG_VERSION})")]
    Version(i64),
    #[error("config: bad override '{0}', expected key=value")]
    Override(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureMode {
    /// Per-vertex below the vertex threshold, atlas above.
    Auto,
    Vertex,
    Atlas,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PercentileKind {
    Quantile,
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub version: u32,
    pub seed: u64,

    pub nerf_levels: usize,
    pub nerf_log2_table_size: u32,
    pub nerf_features: usize,
    pub nerf_n_min: usize,
    pub nerf_n_max: usize,
    pub nerf_density_hidden: usize,
    pub nerf_geo_features: usize,
    pub nerf_color_hidden: usize,
    pub nerf_color_layers: usize,
    pub nerf_steps: usize,
    pub nerf_batch_rays: usize,
    pub nerf_samples: usize,
    pub nerf_lr: f64,

    pub ssan_levels: usize,
    pub ssan_log2_table_size: u32,
    pub ssan_features: usize,
    pub ssan_n_min: usize,
    pub ssan_n_max: usize,
    pub ssan_hidden: usize,
    pub ssan_shared_encoder: bool,
    pub ssan_truncation: f64,
    pub ssan_radial_prior: bool,
    pub eta_hidden: usize,
    pub eta_layers: usize,

    pub distill_steps: usize,
    pub distill_batch_rays: usize,
    pub distill_free_space_points: usize,
    pub distill_interior_points: usize,
    pub distill_lr: f64,
    pub distill_samples: usize,
    pub percentile_low: f64,
    pub percentile_mid: f64,
    pub percentile_high: f64,
    pub percentile_mode: PercentileKind,
    pub weight_surface: f64,
    pub weight_gradient_norm: f64,
    pub weight_smoothness: f64,
    pub weight_orientation: f64,
    pub weight_color: f64,
    pub weight_free_space: f64,
    pub weight_interior: f64,
    pub gradient_target: f64,
    pub projection: bool,
    pub projection_steps: usize,
    pub projection_rate: f64,

    pub extract_res: usize,
    pub feature_mode: FeatureMode,

    pub eval_samples: usize,
    pub observability_res: usize,
    pub eval_views: usize,
    /// Fibonacci-lattice phase of the held-out rig.
    pub eval_phase: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let nerf = NerfConfig::desk();
        let nt = NerfTrainConfig::default();
        let ssan = SsanConfig::desk();
        let d = DistillConfig::default();
        let w = LossWeights::default();
        Self {
            version: CONFIG_VERSION,
            seed: 0,
            nerf_levels: nerf.grid.levels,
            nerf_log2_table_size: nerf.grid.log2_table_size,
            nerf_features: nerf.grid.features,
            nerf_n_min: nerf.grid.n_min,
            nerf_n_max: nerf.grid.n_max,
            nerf_density_hidden: nerf.density_hidden,
            nerf_geo_features: nerf.geo_features,
            nerf_color_hidden: nerf.color_hidden,
            nerf_color_layers: nerf.color_layers,
            nerf_steps: nt.steps,
            nerf_batch_rays: nt.batch_rays,
            nerf_samples: nt.samples,
            nerf_lr: nt.lr,
            ssan_levels: ssan.geometry_grid.levels,
            ssan_log2_table_size: ssan.geometry_grid.log2_table_size,
            ssan_features: ssan.geometry_grid.features,
            ssan_n_min: ssan.geometry_grid.n_min,
            ssan_n_max: ssan.geometry_grid.n_max,
            ssan_hidden: ssan.hidden,
            ssan_shared_encoder: ssan.shared_encoder,
            ssan_truncation: ssan.truncation,
            ssan_radial_prior: ssan.prior.is_some(),
            eta_hidden: ssan.eta_hidden,
            eta_layers: ssan.eta_layers,
            distill_steps: d.steps,
            distill_batch_rays: d.batch_rays,
            distill_free_space_points: d.free_space_points,
            distill_interior_points: d.interior_points,
            distill_lr: d.lr,
            distill_samples: d.samples,
            percentile_low: d.percentiles[0],
            percentile_mid: d.percentiles[1],
            percentile_high: d.percentiles[2],
            percentile_mode: PercentileKind::Quantile,
            weight_surface: w.surface,
            weight_gradient_norm: w.gradient_norm,
            weight_smoothness: w.smoothness,
            weight_orientation: w.orientation,
            weight_color: w.color,
            weight_free_space: w.free_space,
            weight_interior: w.interior,
            gradient_target: w.n_c,
            projection: d.projection,
            projection_steps: d.projection_steps,
            projection_rate: d.projection_rate,
            extract_res: 128,
            feature_mode: FeatureMode::Auto,
            eval_samples: 100_000,
            observability_res: 256,
            eval_views: 8,
            eval_phase: 0.5,
        }
    }
}

fn parse_value(text: &str) -> toml::Value {
    // Bare words such as `atlas` are taken as strings.
    format!("v = {text}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(text.to_string()))
}

impl PipelineConfig {
    /// Parses a document, then applies `key=value` overrides in order.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        match table.get("version") {
            None => return Err(ConfigError::MissingVersion),
            Some(toml::Value::Integer(v)) if *v == CONFIG_VERSION as i64 => {}
            Some(toml::Value::Integer(v)) => return Err(ConfigError::Version(*v)),
            Some(other) => return Err(ConfigError::Parse(format!("version must be an integer, got {other}"))),
        }
        Self::apply(table, overrides)
    }

    /// Defaults with overrides applied.
    pub fn with_overrides(overrides: &[String]) -> Result<Self, ConfigError> {
        let table = toml::Table::try_from(Self::default()).expect("defaults serialize");
        Self::apply(table, overrides)
    }

    fn apply(mut table: toml::Table, overrides: &[String]) -> Result<Self, ConfigError> {
        for o in overrides {
            let (k, v) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            let k = k.trim();
            if k == "version" {
                return Err(ConfigError::Override(format!("{o} (version cannot be overridden)")));
            }
            table.insert(k.to_string(), parse_value(v.trim()));
        }
        let cfg: Self = table.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.ssan_config().geometry_grid.resolutions().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.nerf_config().grid.resolutions().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.distill_config().validate(self.ssan_truncation).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.extract_res < 2 || self.observability_res == 0 || self.eval_samples == 0 {
            return Err(ConfigError::Invalid("extract_res >= 2, observability_res and eval_samples > 0 required".into()));
        }
        if !(self.ssan_truncation > 0.0) {
            return Err(ConfigError::Invalid("ssan_truncation must be positive".into()));
        }
        Ok(())
    }

    pub fn nerf_config(&self) -> NerfConfig {
        NerfConfig {
            grid: HashGridConfig {
                levels: self.nerf_levels,
                log2_table_size: self.nerf_log2_table_size,
                features: self.nerf_features,
                n_min: self.nerf_n_min,
                n_max: self.nerf_n_max,
            },
            density_hidden: self.nerf_density_hidden,
            geo_features: self.nerf_geo_features,
            color_hidden: self.nerf_color_hidden,
            color_layers: self.nerf_color_layers,
        }
    }

    pub fn nerf_train_config(&self) -> NerfTrainConfig {
        NerfTrainConfig {
            steps: self.nerf_steps,
            batch_rays: self.nerf_batch_rays,
            samples: self.nerf_samples,
            lr: self.nerf_lr,
            seed: self.seed,
            ..NerfTrainConfig::default()
        }
    }

    pub fn ssan_config(&self) -> SsanConfig {
        let grid = HashGridConfig {
            levels: self.ssan_levels,
            log2_table_size: self.ssan_log2_table_size,
            features: self.ssan_features,
            n_min: self.ssan_n_min,
            n_max: self.ssan_n_max,
        };
        let base = SsanConfig::default();
        SsanConfig {
            geometry_grid: grid.clone(),
            appearance_grid: grid,
            hidden: self.ssan_hidden,
            eta_hidden: self.eta_hidden,
            eta_layers: self.eta_layers,
            shared_encoder: self.ssan_shared_encoder,
            prior: if self.ssan_radial_prior { base.prior.or(Some(RadialPrior { radius: 1.0, slope: 3.0 })) } else { None },
            truncation: self.ssan_truncation,
            ..base
        }
    }

    pub fn distill_config(&self) -> DistillConfig {
        DistillConfig {
            steps: self.distill_steps,
            batch_rays: self.distill_batch_rays,
            free_space_points: self.distill_free_space_points,
            interior_points: self.distill_interior_points,
            lr: self.distill_lr,
            seed: self.seed,
            weights: LossWeights {
                surface: self.weight_surface,
                gradient_norm: self.weight_gradient_norm,
                smoothness: self.weight_smoothness,
                orientation: self.weight_orientation,
                color: self.weight_color,
                free_space: self.weight_free_space,
                interior: self.weight_interior,
                epsilon: self.ssan_truncation,
                n_c: self.gradient_target,
            },
            percentiles: [self.percentile_low, self.percentile_mid, self.percentile_high],
            percentile_mode: match self.percentile_mode {
                PercentileKind::Quantile => PercentileMode::Quantile,
                PercentileKind::Truncated => PercentileMode::TruncatedSum,
            },
            samples: self.distill_samples,
            projection: self.projection,
            projection_steps: self.projection_steps,
            projection_rate: self.projection_rate,
            ..DistillConfig::default()
        }
    }
}
