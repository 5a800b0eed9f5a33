//! Synthetic scenes with known geometry, camera rigs and ground-truth renders.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DatasetError};
use crate::field::{render_ray, Albedo, AnalyticField, Camera, FieldError, Jitter, Ray, Shape, Vec3};
use crate::image::RgbImage;

/// Samples per ray for ground-truth images.
pub const GT_SAMPLES: usize = 512;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub shape: Shape,
    pub albedo: Albedo,
    pub sigma_max: f64,
    pub background: [f64; 3],
}

impl SceneSpec {
    pub fn sphere() -> Self {
        Self {
            shape: Shape::Sphere { center: [0.0; 3], radius: 0.5 },
            albedo: Albedo::Constant { rgb: [0.8, 0.35, 0.2] },
            sigma_max: 1e3,
            background: [1.0; 3],
        }
    }

    pub fn torus() -> Self {
        Self {
            shape: Shape::Torus { major: 0.45, minor: 0.2 },
            albedo: Albedo::Gradient { axis: 0, low: [0.2, 0.4, 0.8], high: [0.8, 0.5, 0.2] },
            ..Self::sphere()
        }
    }

    pub fn cube() -> Self {
        Self { shape: Shape::Box { half_extents: [0.4, 0.35, 0.3] }, ..Self::sphere() }
    }

    pub fn two_spheres() -> Self {
        Self {
            shape: Shape::TwoSpheres { a: [-0.35, 0.0, 0.0], ra: 0.3, b: [0.4, 0.1, 0.05], rb: 0.25 },
            ..Self::sphere()
        }
    }

    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "sphere" => Some(Self::sphere()),
            "torus" => Some(Self::torus()),
            "box" => Some(Self::cube()),
            "two-spheres" | "two_spheres" => Some(Self::two_spheres()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<(), FieldError> {
        self.shape.validate()?;
        if !(self.sigma_max > 0.0 && self.sigma_max.is_finite()) {
            return Err(FieldError::InvalidConfig(format!("sigma_max must be positive, got {}", self.sigma_max)));
        }
        let colors = match &self.albedo {
            Albedo::Constant { rgb } => vec![*rgb],
            Albedo::Gradient { axis, low, high } => {
                if *axis > 2 {
                    return Err(FieldError::InvalidConfig(format!("albedo axis {axis}")));
                }
                vec![*low, *high]
            }
        };
        if colors.iter().chain([&self.background]).flatten().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(FieldError::InvalidConfig("colors must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn field(&self) -> AnalyticField {
        AnalyticField::new(self.shape.clone(), self.albedo.clone(), self.sigma_max)
    }
}

pub fn analytic_sdf(spec: &SceneSpec, x: &Vec3) -> f64 {
    spec.shape.sdf(x)
}

/// Cameras on a sphere around the origin, spread by a Fibonacci lattice.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraRig {
    pub count: usize,
    pub radius: f64,
    /// Horizontal field of view in degrees.
    pub fov_degrees: f64,
    pub width: usize,
    pub height: usize,
    /// Lattice rotation so held-out rigs do not coincide with training rigs.
    #[serde(default)]
    pub phase: f64,
}

impl Default for CameraRig {
    fn default() -> Self {
        Self { count: 32, radius: 2.5, fov_degrees: 40.0, width: 64, height: 64, phase: 0.0 }
    }
}

impl CameraRig {
    pub fn focal(&self) -> f64 {
        0.5 * self.width as f64 / (0.5 * self.fov_degrees.to_radians()).tan()
    }

    pub fn cameras(&self) -> Vec<Camera> {
        let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
        (0..self.count)
            .map(|i| {
                let z = 1.0 - 2.0 * (i as f64 + 0.5) / self.count as f64;
                let r = (1.0 - z * z).sqrt();
                let phi = golden * i as f64 + self.phase;
                let eye = Vec3::new(r * phi.cos(), r * phi.sin(), z) * self.radius;
                Camera::look_at(eye, Vec3::zeros(), Vec3::z(), self.focal(), self.width, self.height)
            })
            .collect()
    }

    pub fn validate(&self, spec: &SceneSpec) -> Result<(), FieldError> {
        if self.count == 0 || self.width == 0 || self.height == 0 || !(self.fov_degrees > 0.0 && self.fov_degrees < 170.0) {
            return Err(FieldError::InvalidConfig(format!("bad camera rig {self:?}")));
        }
        let (lo, hi) = spec.shape.bounds();
        let center = (lo + hi) * 0.5;
        let circumradius = (hi - lo).norm() * 0.5 + center.norm();
        if self.radius <= circumradius {
            return Err(FieldError::InvalidConfig(format!(
                "rig radius {} must exceed shape circumradius {circumradius:.3}",
                self.radius
            )));
        }
        for (i, cam) in self.cameras().iter().enumerate() {
            cam.validate()?;
            let visible = cam
                .project(&center)
                .is_some_and(|(u, v, _)| u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64);
            if !visible {
                return Err(FieldError::InvalidConfig(format!("camera {i} does not see the shape")));
            }
        }
        Ok(())
    }
}

/// Ray for a pixel restricted to the scene box, or `None` if it misses the box.
pub fn box_ray(cam: &Camera, u: f64, v: f64) -> Option<Ray> {
    cam.pixel_ray(u, v, 1e-3, 1e3).clipped_to_box(&Vec3::repeat(-1.0), &Vec3::repeat(1.0))
}

/// Ground-truth image by dense ray marching through the analytic field.
pub fn render_view(spec: &SceneSpec, cam: &Camera, samples: usize) -> Result<RgbImage, FieldError> {
    let field = spec.field();
    let bg = spec.background.map(|c| c as f32);
    let mut img = RgbImage::new(cam.width, cam.height, bg);
    for j in 0..cam.height {
        for i in 0..cam.width {
            if let Some(ray) = box_ray(cam, i as f64 + 0.5, j as f64 + 0.5) {
                let r = render_ray(&field, &ray, samples, Jitter::Centered, spec.background)?;
                img.set(i, j, r.color.map(|c| c as f32));
            }
        }
    }
    Ok(img)
}

/// Renders every rig view, quantized to 8 bits exactly as stored on disk.
pub fn make_dataset(spec: &SceneSpec, rig: &CameraRig) -> Result<Dataset, FieldError> {
    spec.validate()?;
    rig.validate(spec)?;
    let cameras = rig.cameras();
    let images = cameras
        .iter()
        .map(|c| render_view(spec, c, GT_SAMPLES).map(|img| img.quantized()))
        .collect::<Result<_, _>>()?;
    Ok(Dataset { cameras, images })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneFile {
    pub spec: SceneSpec,
    pub rig: CameraRig,
}

pub fn write_scene(dir: &Path, spec: &SceneSpec, rig: &CameraRig, data: &Dataset) -> Result<(), DatasetError> {
    data.write(dir)?;
    let json = serde_json::to_vec_pretty(&SceneFile { spec: spec.clone(), rig: rig.clone() }).expect("scene serializes");
    crate::io::write_atomic(&dir.join("scene.json"), &json)?;
    Ok(())
}

pub fn load_scene(path: &Path) -> Result<SceneFile, DatasetError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| DatasetError::Malformed { path: path.to_path_buf(), reason: e.to_string() })?;
    let scene: SceneFile = serde_json::from_str(&text)
        .map_err(|e| DatasetError::Malformed { path: path.to_path_buf(), reason: e.to_string() })?;
    scene
        .spec
        .validate()
        .map_err(|e| DatasetError::Malformed { path: path.to_path_buf(), reason: e.to_string() })?;
    Ok(scene)
}
