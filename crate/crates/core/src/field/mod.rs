//! Radiance fields (trainable hash-grid network and analytic oracle),
//! cameras, volume rendering and percentile depths.

pub mod analytic;
pub mod camera;
pub mod hashgrid;
pub mod nerf;
pub mod percentile;
pub mod render;

pub use analytic::{Albedo, AnalyticField, Shape};
pub use camera::{Camera, CameraRecord, Ray, Vec3};
pub use hashgrid::{HashGrid, HashGridConfig};
pub use nerf::{NerfConfig, NerfField, NerfTrainConfig, NerfTrainReport};
pub use percentile::{depth_percentile, percentiles, percentiles_of, quantile_depth, DepthPercentiles, Percentile, PercentileMode};
pub use render::{opacity_weights, render_ray, render_samples, stratified_depths, Jitter, RayRender};

use crate::diffcore::DiffError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldSample {
    pub color: [f64; 3],
    pub sigma: f64,
}

/// Anything that maps positions and view directions to color and density.
pub trait RadianceField {
    fn query(&self, points: &[Vec3], dirs: &[Vec3]) -> Result<Vec<FieldSample>, FieldError>;

    /// Density alone; fields with a separate color branch can skip it.
    fn density(&self, points: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        let dirs = vec![Vec3::z(); points.len()];
        Ok(self.query(points, &dirs)?.into_iter().map(|s| s.sigma).collect())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum FieldError {
    #[error("invalid ray: {0}")]
    InvalidRay(String),
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("percentile of an empty weight list")]
    EmptyWeights,
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged { step: usize, loss: f64 },
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
