use rand::Rng;

use crate::diffcore::composite_ray;

use super::camera::{Ray, Vec3};
use super::{FieldError, RadianceField};

/// Where samples sit inside their strata.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Jitter {
    /// Bin centers.
    Centered,
    /// One uniform offset per bin, drawn from a stream keyed by this seed.
    Seeded(u64),
}

/// Stratified depths in `[t_near, t_far]` and spacings with `delta_M = t_far - t_M`.
pub fn stratified_depths(ray: &Ray, m: usize, jitter: Jitter) -> (Vec<f64>, Vec<f64>) {
    let bin = (ray.t_far - ray.t_near) / m as f64;
    let depths: Vec<f64> = match jitter {
        Jitter::Centered => (0..m).map(|i| ray.t_near + (i as f64 + 0.5) * bin).collect(),
        Jitter::Seeded(seed) => {
            let mut rng = crate::seed::rng(seed, &[]);
            (0..m).map(|i| ray.t_near + (i as f64 + rng.gen::<f64>()) * bin).collect()
        }
    };
    let deltas = spacings(&depths, ray.t_far);
    (depths, deltas)
}

pub fn spacings(depths: &[f64], t_far: f64) -> Vec<f64> {
    let m = depths.len();
    (0..m).map(|i| if i + 1 < m { depths[i + 1] - depths[i] } else { t_far - depths[i] }).collect()
}

/// Compositing weights `T_m (1 - exp(-sigma_m delta_m))` with exclusive transmittance.
pub fn opacity_weights(sigmas: &[f64], deltas: &[f64]) -> Vec<f64> {
    let mut trans = 1.0;
    sigmas
        .iter()
        .zip(deltas)
        .map(|(&s, &d)| {
            let a = 1.0 - (-s * d).exp();
            let w = trans * a;
            trans *= 1.0 - a;
            w
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct RayRender {
    pub color: [f64; 3],
    pub depths: Vec<f64>,
    pub deltas: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub weights: Vec<f64>,
    /// Transmittance after the last sample.
    pub transmittance: f64,
}

impl RayRender {
    pub fn opacity(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Volume rendering of one ray with `m >= 1` stratified samples.
pub fn render_ray<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    m: usize,
    jitter: Jitter,
    background: [f64; 3],
) -> Result<RayRender, FieldError> {
    if m == 0 {
        return Err(FieldError::InvalidConfig("render_ray needs at least one sample".into()));
    }
    let (depths, deltas) = stratified_depths(ray, m, jitter);
    render_samples(field, ray, depths, deltas, background)
}

/// Composites the field at the given depths.
pub fn render_samples<F: RadianceField + ?Sized>(
    field: &F,
    ray: &Ray,
    depths: Vec<f64>,
    deltas: Vec<f64>,
    background: [f64; 3],
) -> Result<RayRender, FieldError> {
    let points: Vec<Vec3> = depths.iter().map(|&t| ray.at(t)).collect();
    let dirs = vec![ray.direction; points.len()];
    let samples = field.query(&points, &dirs)?;
    let sigmas: Vec<f64> = samples.iter().map(|s| s.sigma).collect();
    let colors: Vec<f64> = samples.iter().flat_map(|s| s.color).collect();
    let res = composite_ray(&sigmas, &colors, &deltas, background);
    Ok(RayRender { color: res.color, depths, deltas, sigmas, weights: res.weights, transmittance: res.transmittance })
}
