use serde::{Deserialize, Serialize};

use super::camera::{Ray, Vec3};
use super::{FieldError, FieldSample, RadianceField};

/// Closed-form shapes centered in the scene box.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Sphere { center: [f64; 3], radius: f64 },
    /// Ring in the xy-plane around the z axis.
    Torus { major: f64, minor: f64 },
    Box { half_extents: [f64; 3] },
    TwoSpheres { a: [f64; 3], ra: f64, b: [f64; 3], rb: f64 },
}

fn v(a: &[f64; 3]) -> Vec3 {
    Vec3::new(a[0], a[1], a[2])
}

impl Shape {
    pub fn sdf(&self, x: &Vec3) -> f64 {
        match self {
            Shape::Sphere { center, radius } => (x - v(center)).norm() - radius,
            Shape::Torus { major, minor } => {
                let q = (x.x * x.x + x.y * x.y).sqrt() - major;
                (q * q + x.z * x.z).sqrt() - minor
            }
            Shape::Box { half_extents } => {
                let q = x.abs() - v(half_extents);
                let outside = q.map(|c| c.max(0.0)).norm();
                outside + q.max().min(0.0)
            }
            Shape::TwoSpheres { a, ra, b, rb } => ((x - v(a)).norm() - ra).min((x - v(b)).norm() - rb),
        }
    }

    /// Axis-aligned bounds of the solid.
    pub fn bounds(&self) -> (Vec3, Vec3) {
        match self {
            Shape::Sphere { center, radius } => (v(center) - Vec3::repeat(*radius), v(center) + Vec3::repeat(*radius)),
            Shape::Torus { major, minor } => {
                let e = Vec3::new(major + minor, major + minor, *minor);
                (-e, e)
            }
            Shape::Box { half_extents } => (-v(half_extents), v(half_extents)),
            Shape::TwoSpheres { a, ra, b, rb } => {
                let (a, b) = (v(a), v(b));
                let lo = (a - Vec3::repeat(*ra)).inf(&(b - Vec3::repeat(*rb)));
                let hi = (a + Vec3::repeat(*ra)).sup(&(b + Vec3::repeat(*rb)));
                (lo, hi)
            }
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        let positive = match self {
            Shape::Sphere { radius, .. } => *radius > 0.0,
            Shape::Torus { major, minor } => *minor > 0.0 && major > minor,
            Shape::Box { half_extents } => half_extents.iter().all(|&h| h > 0.0),
            Shape::TwoSpheres { ra, rb, .. } => *ra > 0.0 && *rb > 0.0,
        };
        if !positive {
            return Err(FieldError::InvalidConfig(format!("degenerate shape {self:?}")));
        }
        let (lo, hi) = self.bounds();
        if lo.min() < -0.8 || hi.max() > 0.8 {
            return Err(FieldError::InvalidConfig(format!("shape {self:?} does not fit in [-0.8, 0.8]^3")));
        }
        Ok(())
    }

    /// First ray parameter in `[ray.t_near, ray.t_far]` where the ray enters the solid.
    pub fn first_hit(&self, ray: &Ray) -> Option<f64> {
        let hit = match self {
            Shape::Sphere { center, radius } => sphere_hit(ray, &v(center), *radius),
            Shape::TwoSpheres { a, ra, b, rb } => {
                match (sphere_hit(ray, &v(a), *ra), sphere_hit(ray, &v(b), *rb)) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                }
            }
            Shape::Box { half_extents } => {
                let h = v(half_extents);
                ray.box_hit(&-h, &h).map(|(lo, _)| lo.max(ray.t_near))
            }
            Shape::Torus { .. } => self.sphere_trace(ray),
        }?;
        (hit >= ray.t_near && hit <= ray.t_far).then_some(hit)
    }

    fn sphere_trace(&self, ray: &Ray) -> Option<f64> {
        let mut t = ray.t_near;
        if self.sdf(&ray.at(t)) <= 0.0 {
            return Some(t);
        }
        // Marching by the SDF never overshoots; stop at a tiny step then bisect.
        for _ in 0..10_000 {
            let d = self.sdf(&ray.at(t));
            if d < 1e-12 {
                let (mut lo, mut hi) = (t - 1e-9, t + 1e-9);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if self.sdf(&ray.at(mid)) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                return Some(0.5 * (lo + hi));
            }
            t += d;
            if t > ray.t_far {
                return None;
            }
        }
        None
    }
}

/// Entry point of a ray into a sphere, or the origin itself when it starts inside.
fn sphere_hit(ray: &Ray, c: &Vec3, r: f64) -> Option<f64> {
    let oc = ray.origin - c;
    let b = oc.dot(&ray.direction);
    let cc = oc.norm_squared() - r * r;
    let disc = b * b - cc;
    if disc < 0.0 {
        return None;
    }
    let s = disc.sqrt();
    let (t0, t1) = (-b - s, -b + s);
    if t1 < ray.t_near {
        return None;
    }
    Some(t0.max(ray.t_near))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Constant { rgb: [f64; 3] },
    /// Linear blend from `low` at coordinate -1 to `high` at +1 along `axis`.
    Gradient { axis: usize, low: [f64; 3], high: [f64; 3] },
}

impl Albedo {
    pub fn at(&self, x: &Vec3) -> [f64; 3] {
        match self {
            Albedo::Constant { rgb } => *rgb,
            Albedo::Gradient { axis, low, high } => {
                let s = ((x[*axis] + 1.0) * 0.5).clamp(0.0, 1.0);
                [0, 1, 2].map(|c| low[c] + s * (high[c] - low[c]))
            }
        }
    }
}

/// Oracle field: density `sigma_max` inside the shape, zero outside.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalyticField {
    pub shape: Shape,
    pub albedo: Albedo,
    pub sigma_max: f64,
}

impl AnalyticField {
    pub fn new(shape: Shape, albedo: Albedo, sigma_max: f64) -> Self {
        Self { shape, albedo, sigma_max }
    }

    pub fn sdf(&self, x: &Vec3) -> f64 {
        self.shape.sdf(x)
    }

    pub fn sample(&self, x: &Vec3) -> FieldSample {
        let x = x.map(|c| c.clamp(-1.0, 1.0));
        let sigma = if self.shape.sdf(&x) < 0.0 { self.sigma_max } else { 0.0 };
        FieldSample { color: self.albedo.at(&x), sigma }
    }
}

impl RadianceField for AnalyticField {
    fn query(&self, points: &[Vec3], _dirs: &[Vec3]) -> Result<Vec<FieldSample>, FieldError> {
        Ok(points.iter().map(|p| self.sample(p)).collect())
    }
}
