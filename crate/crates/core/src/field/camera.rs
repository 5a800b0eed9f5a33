use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::FieldError;

pub type Vec3 = Vector3<f64>;

/// Half-open ray segment `origin + t * direction`, `t` in `[t_near, t_far]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray {
    pub origin: Vec3,
    pub direction: Vec3,
    pub t_near: f64,
    pub t_far: f64,
}

impl Ray {
    pub fn new(origin: Vec3, direction: Vec3, t_near: f64, t_far: f64) -> Result<Self, FieldError> {
        let n = direction.norm();
        if (n - 1.0).abs() > 1e-6 {
            return Err(FieldError::InvalidRay(format!("direction norm {n}")));
        }
        if !(t_near > 0.0 && t_near < t_far) {
            return Err(FieldError::InvalidRay(format!("t_near {t_near} must be positive and below t_far {t_far}")));
        }
        Ok(Self { origin, direction, t_near, t_far })
    }

    pub fn at(&self, t: f64) -> Vec3 {
        self.origin + self.direction * t
    }

    /// Entry and exit parameters against an axis-aligned box, if the line hits it.
    pub fn box_hit(&self, min: &Vec3, max: &Vec3) -> Option<(f64, f64)> {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for a in 0..3 {
            let d = self.direction[a];
            if d.abs() < 1e-15 {
                if self.origin[a] < min[a] || self.origin[a] > max[a] {
                    return None;
                }
                continue;
            }
            let t0 = (min[a] - self.origin[a]) / d;
            let t1 = (max[a] - self.origin[a]) / d;
            lo = lo.max(t0.min(t1));
            hi = hi.min(t0.max(t1));
        }
        (lo < hi).then_some((lo, hi))
    }

    /// Restricts `[t_near, t_far]` to the part inside the box.
    pub fn clipped_to_box(&self, min: &Vec3, max: &Vec3) -> Option<Ray> {
        let (lo, hi) = self.box_hit(min, max)?;
        let near = self.t_near.max(lo);
        let far = self.t_far.min(hi);
        (far - near > 1e-9).then_some(Ray { t_near: near, t_far: far, ..*self })
    }
}

/// Pinhole camera; `rotation` maps camera axes (x right, y down, z forward) to world.
#[derive(Clone, Debug, PartialEq)]
pub struct Camera {
    pub rotation: Matrix3<f64>,
    pub translation: Vec3,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

/// JSON form used in `cameras.json`: `R` is row-major.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct CameraRecord {
    #[serde(rename = "R")]
    pub r: [f64; 9],
    pub t: [f64; 3],
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl Camera {
    pub fn validate(&self) -> Result<(), FieldError> {
        let r = &self.rotation;
        let err = (r.transpose() * r - Matrix3::identity()).abs().max();
        if err > 1e-5 {
            return Err(FieldError::InvalidCamera(format!("R^T R deviates from identity by {err:.3e}")));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-5 {
            return Err(FieldError::InvalidCamera(format!("det R = {det}")));
        }
        if !(self.fx > 0.0 && self.fy > 0.0) || self.width == 0 || self.height == 0 {
            return Err(FieldError::InvalidCamera("focal lengths and image size must be positive".into()));
        }
        Ok(())
    }

    /// Camera at `eye` looking at `target`; `up` fixes the roll.
    pub fn look_at(eye: Vec3, target: Vec3, up: Vec3, focal: f64, width: usize, height: usize) -> Self {
        let forward = (target - eye).normalize();
        let mut right = forward.cross(&up);
        if right.norm() < 1e-9 {
            right = forward.cross(&Vec3::new(1.0, 0.0, 0.0));
        }
        let right = right.normalize();
        let down = forward.cross(&right);
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        Self {
            rotation,
            translation: eye,
            fx: focal,
            fy: focal,
            cx: width as f64 / 2.0,
            cy: height as f64 / 2.0,
            width,
            height,
        }
    }

    pub fn center(&self) -> Vec3 {
        self.translation
    }

    /// World-space unit direction through continuous pixel coordinates `(u, v)`.
    pub fn direction(&self, u: f64, v: f64) -> Vec3 {
        let local = Vec3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0);
        (self.rotation * local).normalize()
    }

    /// Ray through continuous pixel coordinates; pixel `(i, j)` has its center at `(i + 0.5, j + 0.5)`.
    pub fn pixel_ray(&self, u: f64, v: f64, t_near: f64, t_far: f64) -> Ray {
        Ray { origin: self.translation, direction: self.direction(u, v), t_near, t_far }
    }

    pub fn pixel_center_ray(&self, i: usize, j: usize, t_near: f64, t_far: f64) -> Ray {
        self.pixel_ray(i as f64 + 0.5, j as f64 + 0.5, t_near, t_far)
    }

    /// Camera-space coordinates of a world point.
    pub fn to_camera(&self, p: &Vec3) -> Vec3 {
        self.rotation.transpose() * (p - self.translation)
    }

    /// Continuous pixel coordinates and view depth of a world point.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64, f64)> {
        let c = self.to_camera(p);
        (c.z > 1e-9).then(|| (self.fx * c.x / c.z + self.cx, self.fy * c.y / c.z + self.cy, c.z))
    }

    pub fn to_record(&self) -> CameraRecord {
        let r = &self.rotation;
        CameraRecord {
            r: [r[(0, 0)], r[(0, 1)], r[(0, 2)], r[(1, 0)], r[(1, 1)], r[(1, 2)], r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            t: [self.translation.x, self.translation.y, self.translation.z],
            fx: self.fx,
            fy: self.fy,
            cx: self.cx,
            cy: self.cy,
            width: self.width,
            height: self.height,
        }
    }

    pub fn from_record(rec: &CameraRecord) -> Result<Self, FieldError> {
        let cam = Self {
            rotation: Matrix3::from_row_slice(&rec.r),
            translation: Vec3::from_column_slice(&rec.t),
            fx: rec.fx,
            fy: rec.fy,
            cx: rec.cx,
            cy: rec.cy,
            width: rec.width,
            height: rec.height,
        };
        cam.validate()?;
        Ok(cam)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn identity_cam() -> Camera {
        Camera {
            rotation: Matrix3::identity(),
            translation: Vec3::zeros(),
            fx: 50.0,
            fy: 50.0,
            cx: 32.0,
            cy: 32.0,
            width: 64,
            height: 64,
        }
    }

    #[test]
    fn principal_point_looks_down_the_optical_axis() {
        let r = identity_cam().pixel_ray(32.0, 32.0, 0.1, 10.0);
        assert_relative_eq!(r.direction, Vec3::new(0.0, 0.0, 1.0), epsilon = 1e-12);
    }

    #[test]
    fn translation_moves_origin_only() {
        let mut cam = identity_cam();
        let base = cam.pixel_ray(10.5, 40.5, 0.1, 10.0);
        cam.translation = Vec3::new(1.0, -2.0, 3.0);
        let moved = cam.pixel_ray(10.5, 40.5, 0.1, 10.0);
        assert_eq!(moved.origin, cam.translation);
        assert_relative_eq!(moved.direction, base.direction, epsilon = 1e-15);
    }

    #[test]
    fn rotation_about_y_rotates_direction() {
        let mut cam = identity_cam();
        let base = cam.pixel_ray(12.5, 20.5, 0.1, 10.0).direction;
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::y_axis(), std::f64::consts::FRAC_PI_2);
        cam.rotation = *rot.matrix();
        cam.validate().unwrap();
        let turned = cam.pixel_ray(12.5, 20.5, 0.1, 10.0).direction;
        assert_relative_eq!(turned, rot * base, epsilon = 1e-12);
        assert_relative_eq!(cam.pixel_ray(32.0, 32.0, 0.1, 1.0).direction, Vec3::new(1.0, 0.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn look_at_projects_target_to_principal_point() {
        let cam = Camera::look_at(Vec3::new(2.0, 1.0, -1.5), Vec3::zeros(), Vec3::new(0.0, 0.0, 1.0), 60.0, 64, 48);
        cam.validate().unwrap();
        let (u, v, _) = cam.project(&Vec3::zeros()).unwrap();
        assert_relative_eq!(u, 32.0, epsilon = 1e-9);
        assert_relative_eq!(v, 24.0, epsilon = 1e-9);
    }

    #[test]
    fn non_orthonormal_rotation_rejected() {
        let mut cam = identity_cam();
        cam.rotation[(0, 1)] = 0.1;
        assert!(cam.validate().is_err());
        cam.rotation = -Matrix3::identity();
        assert!(cam.validate().is_err());
    }

    #[test]
    fn box_clipping() {
        let r = Ray::new(Vec3::new(0.0, 0.0, -3.0), Vec3::new(0.0, 0.0, 1.0), 0.1, 10.0).unwrap();
        let c = r.clipped_to_box(&Vec3::repeat(-1.0), &Vec3::repeat(1.0)).unwrap();
        assert_relative_eq!(c.t_near, 2.0);
        assert_relative_eq!(c.t_far, 4.0);
        let miss = Ray::new(Vec3::new(3.0, 0.0, -3.0), Vec3::new(0.0, 0.0, 1.0), 0.1, 10.0).unwrap();
        assert!(miss.clipped_to_box(&Vec3::repeat(-1.0), &Vec3::repeat(1.0)).is_none());
    }
}
