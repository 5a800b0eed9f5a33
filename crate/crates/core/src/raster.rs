//! Software rasterizer into a per-pixel G-buffer, deferred shading and PSNR.

use crate::field::{Camera, Vec3};
use crate::image::{ImageError, RgbImage};
use crate::meshing::{FeaturedMesh, Features};
use crate::ssan::{EtaNet, SsanError, FEATURES};

/// View-space near plane; geometry in front of it is clipped.
pub const NEAR: f64 = 1e-3;
/// Depths closer than this count as a tie; the lower triangle index wins.
pub const DEPTH_EPS: f64 = 1e-7;
/// Reported in place of an infinite PSNR.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, thiserror::Error)]
pub enum RasterError {
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Shade(#[from] SsanError),
    #[error("shader returned {got} colors for {want} pixels")]
    ShaderCount { got: usize, want: usize },
}

/// Per-pixel surface attributes; `face` is `u32::MAX` where nothing is visible.
#[derive(Clone, Debug, PartialEq)]
pub struct GBuffer {
    pub width: usize,
    pub height: usize,
    pub face: Vec<u32>,
    pub depth: Vec<f64>,
    pub features: Vec<[f32; FEATURES]>,
    pub normals: Vec<Vec3>,
    pub positions: Vec<Vec3>,
}

impl GBuffer {
    fn empty(width: usize, height: usize) -> Self {
        let n = width * height;
        Self {
            width,
            height,
            face: vec![u32::MAX; n],
            depth: vec![f64::INFINITY; n],
            features: vec![[0.0; FEATURES]; n],
            normals: vec![Vec3::zeros(); n],
            positions: vec![Vec3::zeros(); n],
        }
    }

    pub fn visible(&self, pixel: usize) -> bool {
        self.face[pixel] != u32::MAX
    }

    pub fn visible_count(&self) -> usize {
        self.face.iter().filter(|&&f| f != u32::MAX).count()
    }
}

/// Camera-space vertex with its barycentric coordinate in the source triangle.
#[derive(Clone, Copy)]
struct ClipVert {
    c: Vec3,
    b: Vec3,
}

fn clip_near(tri: [ClipVert; 3]) -> Vec<ClipVert> {
    let mut out = Vec::with_capacity(4);
    for k in 0..3 {
        let (p, q) = (tri[k], tri[(k + 1) % 3]);
        let (pin, qin) = (p.c.z >= NEAR, q.c.z >= NEAR);
        if pin {
            out.push(p);
        }
        if pin != qin {
            let t = (NEAR - p.c.z) / (q.c.z - p.c.z);
            out.push(ClipVert { c: p.c + (q.c - p.c) * t, b: p.b + (q.b - p.b) * t });
        }
    }
    out
}

fn edge(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

/// Nearest surface per pixel center. Culling is off; interpolation is
/// perspective-correct; atlas features are read nearest-texel.
pub fn rasterize(fm: &FeaturedMesh, cam: &Camera) -> GBuffer {
    let (w, h) = (cam.width, cam.height);
    let mut gb = GBuffer::empty(w, h);
    let mut bary = vec![Vec3::zeros(); w * h];
    let unit = [Vec3::x(), Vec3::y(), Vec3::z()];
    for (f, tri) in fm.mesh.triangles.iter().enumerate() {
        let verts = std::array::from_fn(|k| ClipVert { c: cam.to_camera(&fm.mesh.positions[tri[k] as usize]), b: unit[k] });
        let poly = clip_near(verts);
        for k in 1..poly.len().saturating_sub(1) {
            let sub = [poly[0], poly[k], poly[k + 1]];
            let s = sub.map(|v| [cam.fx * v.c.x / v.c.z + cam.cx, cam.fy * v.c.y / v.c.z + cam.cy]);
            let area = edge(s[0], s[1], s[2]);
            if area == 0.0 || !area.is_finite() {
                continue;
            }
            let lo = |a: usize| s.iter().map(|p| p[a]).fold(f64::INFINITY, f64::min);
            let hi = |a: usize| s.iter().map(|p| p[a]).fold(f64::NEG_INFINITY, f64::max);
            let x0 = (lo(0) - 0.5).ceil().max(0.0) as usize;
            let y0 = (lo(1) - 0.5).ceil().max(0.0) as usize;
            let x1 = ((hi(0) - 0.5).floor().min(w as f64 - 1.0)).max(-1.0);
            let y1 = ((hi(1) - 0.5).floor().min(h as f64 - 1.0)).max(-1.0);
            if x1 < 0.0 || y1 < 0.0 {
                continue;
            }
            let inv_z = sub.map(|v| 1.0 / v.c.z);
            for y in y0..=y1 as usize {
                for x in x0..=x1 as usize {
                    let p = [x as f64 + 0.5, y as f64 + 0.5];
                    let l = [edge(s[1], s[2], p) / area, edge(s[2], s[0], p) / area, edge(s[0], s[1], p) / area];
                    if l.iter().any(|&v| v < 0.0) {
                        continue;
                    }
                    let wz: [f64; 3] = std::array::from_fn(|i| l[i] * inv_z[i]);
                    let sum = wz[0] + wz[1] + wz[2];
                    let z = 1.0 / sum;
                    let pix = y * w + x;
                    if z < gb.depth[pix] - DEPTH_EPS {
                        gb.depth[pix] = z;
                        gb.face[pix] = f as u32;
                        bary[pix] = (sub[0].b * wz[0] + sub[1].b * wz[1] + sub[2].b * wz[2]) / sum;
                    }
                }
            }
        }
    }
    for pix in 0..w * h {
        if !gb.visible(pix) {
            continue;
        }
        let f = gb.face[pix] as usize;
        let b = bary[pix];
        let tri = fm.mesh.triangles[f].map(|i| i as usize);
        gb.positions[pix] = fm.mesh.positions[tri[0]] * b.x + fm.mesh.positions[tri[1]] * b.y + fm.mesh.positions[tri[2]] * b.z;
        let n = fm.normals[tri[0]] * b.x + fm.normals[tri[1]] * b.y + fm.normals[tri[2]] * b.z;
        gb.normals[pix] = if n.norm() > 1e-12 { n.normalize() } else { fm.mesh.face_normal(f) };
        gb.features[pix] = match &fm.features {
            Features::Vertex(v) => std::array::from_fn(|c| {
                (v[tri[0]][c] as f64 * b.x + v[tri[1]][c] as f64 * b.y + v[tri[2]][c] as f64 * b.z) as f32
            }),
            Features::Atlas(a) => a.sample(f, a.uv_at(f, [b.x, b.y, b.z])),
        };
    }
    gb
}

/// Anything that maps `(feature, normal, view direction)` batches to colors.
pub trait Shader {
    fn shade(&self, features: &[[f32; FEATURES]], normals: &[Vec3], dirs: &[Vec3]) -> Result<Vec<[f32; 3]>, RasterError>;
}

impl Shader for EtaNet {
    fn shade(&self, features: &[[f32; FEATURES]], normals: &[Vec3], dirs: &[Vec3]) -> Result<Vec<[f32; 3]>, RasterError> {
        Ok(EtaNet::shade(self, features, normals, dirs)?)
    }
}

/// Pixels are shaded in batches of this many.
const SHADE_BATCH: usize = 16384;

/// Shades visible pixels in one pass each and fills the rest with `background`.
/// Returns the image and the number of shader evaluations.
pub fn shade(gb: &GBuffer, cam: &Camera, shader: &impl Shader, background: [f32; 3]) -> Result<(RgbImage, usize), RasterError> {
    let mut img = RgbImage::new(gb.width, gb.height, background);
    let visible: Vec<usize> = (0..gb.width * gb.height).filter(|&p| gb.visible(p)).collect();
    let mut evaluated = 0;
    for chunk in visible.chunks(SHADE_BATCH) {
        let f: Vec<_> = chunk.iter().map(|&p| gb.features[p]).collect();
        let n: Vec<_> = chunk.iter().map(|&p| gb.normals[p]).collect();
        let d: Vec<_> = chunk.iter().map(|&p| cam.direction((p % gb.width) as f64 + 0.5, (p / gb.width) as f64 + 0.5)).collect();
        let colors = shader.shade(&f, &n, &d)?;
        if colors.len() != chunk.len() {
            return Err(RasterError::ShaderCount { got: colors.len(), want: chunk.len() });
        }
        evaluated += chunk.len();
        for (&p, c) in chunk.iter().zip(colors) {
            img.set(p % gb.width, p / gb.width, c.map(|v| v.clamp(0.0, 1.0)));
        }
    }
    Ok((img, evaluated))
}

/// `10 log10(1 / MSE)`; identical images give infinity.
pub fn psnr(a: &RgbImage, b: &RgbImage) -> Result<f64, RasterError> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(ImageError::SizeMismatch(a.width, a.height, b.width, b.height).into());
    }
    let mse = a.data.iter().zip(&b.data).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>() / a.data.len().max(1) as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// PSNR with infinity replaced by the cap, for reports.
pub fn psnr_capped(a: &RgbImage, b: &RgbImage) -> Result<f64, RasterError> {
    Ok(psnr(a, b)?.min(PSNR_CAP))
}
