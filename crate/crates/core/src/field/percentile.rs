//! Depth at an opacity percentile along a rendered ray.

use serde::{Deserialize, Serialize};

use super::render::RayRender;
use super::FieldError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PercentileMode {
    /// `sum_{m <= M_k} w_m t_m`, where `M_k` is the first sample whose
    /// accumulated opacity reaches `k / 100`.
    TruncatedSum,
    /// Depth at which accumulated opacity equals `k / 100`, inverting the
    /// exponential falloff inside the crossing bin.
    Quantile,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Percentile {
    pub depth: f64,
    /// The ray never reached the requested opacity; `depth` is the weighted mean depth.
    pub low_opacity: bool,
}

fn weighted_mean(weights: &[f64], depths: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return *depths.last().unwrap_or(&0.0);
    }
    weights.iter().zip(depths).map(|(w, t)| w * t).sum::<f64>() / total
}

fn check_inputs(weights: &[f64], depths: &[f64], k: f64) -> Result<(), FieldError> {
    if weights.is_empty() {
        return Err(FieldError::EmptyWeights);
    }
    if weights.len() != depths.len() {
        return Err(FieldError::InvalidConfig(format!("{} weights for {} depths", weights.len(), depths.len())));
    }
    if !(k > 0.0 && k < 100.0) {
        return Err(FieldError::InvalidConfig(format!("percentile {k} outside (0, 100)")));
    }
    Ok(())
}

/// First index where accumulated opacity reaches `q`.
fn crossing(weights: &[f64], q: f64) -> Option<(usize, f64)> {
    let mut acc = 0.0;
    for (m, &w) in weights.iter().enumerate() {
        let before = acc;
        acc += w;
        if acc >= q {
            return Some((m, before));
        }
    }
    None
}

/// Truncated weighted depth sum up to the first sample reaching opacity `k / 100`.
pub fn depth_percentile(weights: &[f64], depths: &[f64], k: f64) -> Result<Percentile, FieldError> {
    check_inputs(weights, depths, k)?;
    Ok(match crossing(weights, k / 100.0) {
        Some((m, _)) => Percentile {
            depth: weights[..=m].iter().zip(depths).map(|(w, t)| w * t).sum(),
            low_opacity: false,
        },
        None => Percentile { depth: weighted_mean(weights, depths), low_opacity: true },
    })
}

/// Depth where accumulated opacity equals `k / 100`; sample `m` covers
/// `[t_m, t_m + delta_m]` with constant density.
pub fn quantile_depth(weights: &[f64], depths: &[f64], deltas: &[f64], k: f64) -> Result<Percentile, FieldError> {
    check_inputs(weights, depths, k)?;
    if deltas.len() != depths.len() {
        return Err(FieldError::InvalidConfig("deltas and depths differ in length".into()));
    }
    let q = k / 100.0;
    Ok(match crossing(weights, q) {
        Some((m, before)) => {
            let trans = (1.0 - before).max(1e-300);
            let alpha = (weights[m] / trans).min(1.0);
            let r = ((q - before) / trans).clamp(0.0, 1.0);
            let frac = if alpha <= 1e-12 {
                r / alpha.max(1e-300)
            } else {
                (1.0 - r).max(1e-300).ln() / (1.0 - alpha).max(1e-300).ln()
            };
            Percentile { depth: depths[m] + frac.clamp(0.0, 1.0) * deltas[m], low_opacity: false }
        }
        None => Percentile { depth: weighted_mean(weights, depths), low_opacity: true },
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DepthPercentiles {
    /// Outside, surface and inside depths (defaults: 16th, 50th, 84th percentile).
    pub z: [f64; 3],
    /// Set when any of the three percentiles was not reached.
    pub low_opacity: bool,
}

pub fn percentiles(render: &RayRender, ks: [f64; 3], mode: PercentileMode) -> Result<DepthPercentiles, FieldError> {
    percentiles_of(&render.weights, &render.depths, &render.deltas, ks, mode)
}

pub fn percentiles_of(
    weights: &[f64],
    depths: &[f64],
    deltas: &[f64],
    ks: [f64; 3],
    mode: PercentileMode,
) -> Result<DepthPercentiles, FieldError> {
    let mut z = [0.0; 3];
    let mut low = false;
    for (slot, &k) in z.iter_mut().zip(&ks) {
        let p = match mode {
            PercentileMode::TruncatedSum => depth_percentile(weights, depths, k)?,
            PercentileMode::Quantile => quantile_depth(weights, depths, deltas, k)?,
        };
        *slot = p.depth;
        low |= p.low_opacity;
    }
    Ok(DepthPercentiles { z, low_opacity: low })
}
