//! Moves points along their rays toward the zero level set of the distance field.

use crate::field::{Ray, Vec3};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Projected {
    /// Depth of the projected point along the ray.
    pub depth: f64,
    pub point: Vec3,
    /// `|t|` before the first step.
    pub initial: f64,
    /// `|t|` at the projected point.
    pub residual: f64,
    /// `|t|` did not decrease.
    pub failed: bool,
}

/// `s <- s + rate * t(r(s))`, clamped to the ray segment, for `steps` iterations.
/// Positive distance means the point is in front of the surface, so it steps deeper.
pub fn project_to_zero_level<E>(
    tsdf: impl Fn(&[Vec3]) -> Result<Vec<f64>, E>,
    rays: &[Ray],
    depths: &[f64],
    steps: usize,
    rate: f64,
) -> Result<Vec<Projected>, E> {
    assert_eq!(rays.len(), depths.len(), "one start depth per ray");
    let mut s: Vec<f64> = depths.to_vec();
    let mut points: Vec<Vec3> = rays.iter().zip(&s).map(|(r, &d)| r.at(d)).collect();
    let mut t = tsdf(&points)?;
    let initial: Vec<f64> = t.iter().map(|v| v.abs()).collect();
    for _ in 0..steps {
        for ((si, ray), ti) in s.iter_mut().zip(rays).zip(&t) {
            *si = (*si + rate * ti).clamp(ray.t_near, ray.t_far);
        }
        points = rays.iter().zip(&s).map(|(r, &d)| r.at(d)).collect();
        t = tsdf(&points)?;
    }
    Ok((0..rays.len())
        .map(|i| {
            let residual = t[i].abs();
            Projected {
                depth: s[i],
                point: points[i],
                initial: initial[i],
                residual,
                failed: residual > 0.0 && residual >= initial[i],
            }
        })
        .collect())
}
