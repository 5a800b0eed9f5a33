//! Browser demo over the analytic scenes. Three operations:
//! extract a mesh with marching cubes, rasterize it from an orbit camera,
//! and show a percentile depth map from volume rendering.
//!
//! Everything below `wasm` is plain Rust so it can be tested natively.

use std::time::Duration;

use radmesh::field::{percentiles, render_ray, Camera, Jitter, PercentileMode, Vec3};
use radmesh::meshing::{bake_vertex_features, marching_cubes, sample_grid, FeaturedMesh, MeshError};
use radmesh::raster::{rasterize, shade, RasterError, Shader};
use radmesh::scenes::{box_ray, SceneSpec};
use radmesh::ssan::{SsanOutput, FEATURES};

#[derive(Clone, Debug, PartialEq)]
pub struct MeshStats {
    pub vertices: usize,
    pub faces: usize,
    pub euler: i64,
    pub closed: bool,
    /// Largest |sdf| over the vertices, in cell diagonals.
    pub max_vertex_error: f64,
}

impl MeshStats {
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "vertices": self.vertices,
            "faces": self.faces,
            "euler": self.euler,
            "closed": self.closed,
            "max_vertex_error": self.max_vertex_error,
        })
        .to_string()
    }
}

pub fn scene(name: &str) -> Result<SceneSpec, String> {
    SceneSpec::by_name(name).ok_or_else(|| format!("unknown scene '{name}'"))
}

/// Marching cubes on the exact distance, with albedo baked into the first three feature channels.
pub fn extract(spec: &SceneSpec, res: usize) -> Result<(FeaturedMesh, MeshStats), String> {
    if !(2..=160).contains(&res) {
        return Err(format!("resolution {res} outside 2..=160"));
    }
    let grid = sample_grid(
        |p: &[Vec3]| Ok::<_, MeshError>(p.iter().map(|x| spec.shape.sdf(x)).collect()),
        Vec3::repeat(-1.0),
        Vec3::repeat(1.0),
        [res; 3],
    )
    .map_err(|e| e.to_string())?;
    let mesh = marching_cubes(&grid, 0.0).map_err(|e| e.to_string())?;
    let diag = grid.cell_diagonal();
    let stats = MeshStats {
        vertices: mesh.positions.len(),
        faces: mesh.triangles.len(),
        euler: mesh.euler_characteristic(),
        closed: mesh.is_closed(),
        max_vertex_error: mesh.positions.iter().map(|p| spec.shape.sdf(p).abs()).fold(0.0, f64::max) / diag,
    };
    let fm = bake_vertex_features(&mesh, |p: &[Vec3]| {
        Ok::<_, MeshError>(
            p.iter()
                .map(|x| {
                    let mut f = [0.0; FEATURES];
                    f[..3].copy_from_slice(&spec.albedo.at(x));
                    SsanOutput { t: spec.shape.sdf(x), n: sdf_normal(spec, x), f }
                })
                .collect(),
        )
    })
    .map_err(|e| e.to_string())?;
    Ok((fm, stats))
}

fn sdf_normal(spec: &SceneSpec, x: &Vec3) -> Vec3 {
    let h = 1e-4;
    let d = |a: usize| {
        let mut e = Vec3::zeros();
        e[a] = h;
        spec.shape.sdf(&(x + e)) - spec.shape.sdf(&(x - e))
    };
    let g = Vec3::new(d(0), d(1), d(2));
    if g.norm() > 0.0 {
        g.normalize()
    } else {
        Vec3::z()
    }
}

/// Camera on a sphere of radius `distance` around the origin, angles in degrees.
pub fn orbit(azimuth: f64, elevation: f64, distance: f64, width: usize, height: usize) -> Camera {
    let (a, e) = (azimuth.to_radians(), elevation.clamp(-89.0, 89.0).to_radians());
    let eye = Vec3::new(e.cos() * a.cos(), e.cos() * a.sin(), e.sin()) * distance;
    let focal = 0.5 * width as f64 / 20f64.to_radians().tan();
    Camera::look_at(eye, Vec3::zeros(), Vec3::z(), focal, width, height)
}

/// Baked albedo under a headlight.
struct Headlight;

impl Shader for Headlight {
    fn shade(&self, features: &[[f32; FEATURES]], normals: &[Vec3], dirs: &[Vec3]) -> Result<Vec<[f32; 3]>, RasterError> {
        Ok(features
            .iter()
            .zip(normals)
            .zip(dirs)
            .map(|((f, n), d)| {
                let k = (0.25 + 0.75 * (-n.dot(d)).max(0.0)) as f32;
                [f[0] * k, f[1] * k, f[2] * k]
            })
            .collect())
    }
}

fn rgba(rgb: &[f32]) -> Vec<u8> {
    rgb.chunks(3).flat_map(|c| [q(c[0]), q(c[1]), q(c[2]), 255]).collect()
}

fn q(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// RGBA pixels of the mesh seen from `cam`, plus the time spent.
pub fn render_mesh(fm: &FeaturedMesh, cam: &Camera, background: [f32; 3]) -> Result<(Vec<u8>, Duration), String> {
    let t = web_time();
    let gb = rasterize(fm, cam);
    let (img, _) = shade(&gb, cam, &Headlight, background).map_err(|e| e.to_string())?;
    Ok((rgba(&img.data), elapsed(t)))
}

/// RGBA map of the `k`-th percentile depth from volume rendering `samples` points per ray.
/// Near is bright, far is dark, rays that never reach `k` percent opacity are red.
pub fn percentile_depth(spec: &SceneSpec, cam: &Camera, k: f64, samples: usize) -> Result<Vec<u8>, String> {
    if !(k > 0.0 && k < 100.0) || samples == 0 {
        return Err("percentile must be in (0, 100) and samples positive".into());
    }
    let field = spec.field();
    let dist = cam.center().norm();
    let (near, far) = ((dist - 3f64.sqrt()).max(0.0), dist + 3f64.sqrt());
    let mut out = Vec::with_capacity(cam.width * cam.height * 4);
    for j in 0..cam.height {
        for i in 0..cam.width {
            let px = match box_ray(cam, i as f64 + 0.5, j as f64 + 0.5) {
                None => [40, 40, 48, 255],
                Some(ray) => {
                    let r = render_ray(&field, &ray, samples, Jitter::Centered, spec.background).map_err(|e| e.to_string())?;
                    let p = percentiles(&r, [k, k, k], PercentileMode::Quantile).map_err(|e| e.to_string())?;
                    if p.low_opacity {
                        [160, 40, 40, 255]
                    } else {
                        let g = q((1.0 - (p.z[0] - near) / (far - near)) as f32);
                        [g, g, g, 255]
                    }
                }
            };
            out.extend_from_slice(&px);
        }
    }
    Ok(out)
}

#[cfg(target_arch = "wasm32")]
fn web_time() -> f64 {
    js_sys_now()
}
#[cfg(target_arch = "wasm32")]
fn elapsed(t: f64) -> Duration {
    Duration::from_secs_f64(((js_sys_now() - t) / 1e3).max(0.0))
}
#[cfg(target_arch = "wasm32")]
#[wasm_bindgen::prelude::wasm_bindgen]
extern "C" {
    #[wasm_bindgen(js_namespace = Date, js_name = now)]
    fn js_sys_now() -> f64;
}

#[cfg(not(target_arch = "wasm32"))]
fn web_time() -> std::time::Instant {
    std::time::Instant::now()
}
#[cfg(not(target_arch = "wasm32"))]
fn elapsed(t: std::time::Instant) -> Duration {
    t.elapsed()
}

pub mod wasm {
    use wasm_bindgen::prelude::*;

    use super::*;

    /// One scene and its current mesh.
    #[wasm_bindgen]
    pub struct Demo {
        spec: SceneSpec,
        mesh: Option<FeaturedMesh>,
    }

    #[wasm_bindgen]
    impl Demo {
        #[wasm_bindgen(constructor)]
        pub fn new(scene_name: &str) -> Result<Demo, JsError> {
            Ok(Demo { spec: scene(scene_name).map_err(|e| JsError::new(&e))?, mesh: None })
        }

        /// Marching cubes at `res` lattice points per axis; returns stats as JSON.
        pub fn extract(&mut self, res: usize) -> Result<String, JsError> {
            let (fm, stats) = super::extract(&self.spec, res).map_err(|e| JsError::new(&e))?;
            self.mesh = Some(fm);
            Ok(stats.to_json())
        }

        /// RGBA pixels of the extracted mesh from an orbit camera.
        pub fn render(&self, azimuth: f64, elevation: f64, width: usize, height: usize) -> Result<Vec<u8>, JsError> {
            let fm = self.mesh.as_ref().ok_or_else(|| JsError::new("extract a mesh first"))?;
            let bg = self.spec.background.map(|c| c as f32);
            Ok(render_mesh(fm, &orbit(azimuth, elevation, 3.0, width, height), bg).map_err(|e| JsError::new(&e))?.0)
        }

        /// RGBA percentile depth map from the same orbit camera.
        pub fn depth(&self, azimuth: f64, elevation: f64, width: usize, height: usize, k: f64) -> Result<Vec<u8>, JsError> {
            percentile_depth(&self.spec, &orbit(azimuth, elevation, 3.0, width, height), k, 128).map_err(|e| JsError::new(&e))
        }
    }
}
