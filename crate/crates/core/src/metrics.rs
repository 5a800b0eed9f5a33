//! Observability-masked Chamfer distance and normal consistency.
//!
//! Chamfer here is the sum of the two directed mean Euclidean
//! nearest-neighbor distances, not their average and not squared.

use kiddo::{KdTree, SquaredEuclidean};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::field::{Camera, Shape, Vec3};
use crate::meshing::TriMesh;

pub const OBSERVABILITY_RES: usize = 256;
pub const SURFACE_SAMPLES: usize = 100_000;

#[derive(Debug, thiserror::Error)]
pub enum MetricsError {
    #[error("no cameras given")]
    NoCameras,
    #[error("{0} point set is empty after observability masking")]
    EmptySet(&'static str),
    #[error("mesh has no faces")]
    EmptyMesh,
    #[error("invalid input: {0}")]
    Invalid(String),
}

/// Voxels crossed by at least one training pixel ray.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservabilityGrid {
    pub res: usize,
    pub min: Vec3,
    pub max: Vec3,
    pub cells: Vec<bool>,
}

impl ObservabilityGrid {
    pub fn full(res: usize, min: Vec3, max: Vec3) -> Self {
        Self { res, min, max, cells: vec![true; res * res * res] }
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res * (j + self.res * k)
    }

    pub fn voxel_of(&self, p: &Vec3) -> Option<[usize; 3]> {
        let mut out = [0; 3];
        for a in 0..3 {
            if !(p[a] >= self.min[a] && p[a] <= self.max[a]) {
                return None;
            }
            let s = (p[a] - self.min[a]) / (self.max[a] - self.min[a]) * self.res as f64;
            out[a] = (s as usize).min(self.res - 1);
        }
        Some(out)
    }

    /// Points outside the box are unobservable.
    pub fn contains(&self, p: &Vec3) -> bool {
        self.voxel_of(p).is_some_and(|[i, j, k]| self.cells[self.index(i, j, k)])
    }

    pub fn count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn voxel_bounds(&self, i: usize, j: usize, k: usize) -> (Vec3, Vec3) {
        let size = (self.max - self.min) / self.res as f64;
        let lo = self.min + Vec3::new(i as f64 * size.x, j as f64 * size.y, k as f64 * size.z);
        (lo, lo + size)
    }

    /// Marks every voxel a segment passes through (Amanatides-Woo traversal).
    fn trace(&mut self, origin: Vec3, dir: Vec3, t0: f64, t1: f64) {
        let size = (self.max - self.min) / self.res as f64;
        let start = origin + dir * t0;
        let mut cell = [0isize; 3];
        let mut step = [0isize; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let s = ((start[a] - self.min[a]) / size[a]).floor() as isize;
            cell[a] = s.clamp(0, self.res as isize - 1);
            if dir[a] > 0.0 {
                step[a] = 1;
                let edge = self.min[a] + (cell[a] + 1) as f64 * size[a];
                t_max[a] = t0 + (edge - start[a]) / dir[a];
                t_delta[a] = size[a] / dir[a];
            } else if dir[a] < 0.0 {
                step[a] = -1;
                let edge = self.min[a] + cell[a] as f64 * size[a];
                t_max[a] = t0 + (edge - start[a]) / dir[a];
                t_delta[a] = -size[a] / dir[a];
            }
        }
        loop {
            let idx = self.index(cell[0] as usize, cell[1] as usize, cell[2] as usize);
            self.cells[idx] = true;
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] > t1 {
                break;
            }
            cell[a] += step[a];
            if cell[a] < 0 || cell[a] >= self.res as isize {
                break;
            }
            t_max[a] += t_delta[a];
        }
    }
}

/// Traces every pixel-center ray of every camera through the box. Occlusion
/// is ignored: a voxel inside the object but on a ray counts as observed.
pub fn build_observability_grid(cameras: &[Camera], min: Vec3, max: Vec3, res: usize) -> Result<ObservabilityGrid, MetricsError> {
    if cameras.is_empty() {
        return Err(MetricsError::NoCameras);
    }
    if res == 0 || (0..3).any(|a| !(max[a] > min[a])) {
        return Err(MetricsError::Invalid("observability grid needs a non-empty box and res > 0".into()));
    }
    let mut grid = ObservabilityGrid { res, min, max, cells: vec![false; res * res * res] };
    for cam in cameras {
        for j in 0..cam.height {
            for i in 0..cam.width {
                let ray = cam.pixel_center_ray(i, j, 1e-6, f64::INFINITY);
                if let Some((t0, t1)) = ray.box_hit(&min, &max) {
                    grid.trace(ray.origin, ray.direction, t0.max(0.0), t1);
                }
            }
        }
    }
    Ok(grid)
}

/// Points with unit normals, area-uniform on a surface.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SampledSurface {
    pub points: Vec<Vec3>,
    pub normals: Vec<Vec3>,
}

impl SampledSurface {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn masked(&self, grid: &ObservabilityGrid) -> Self {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| grid.contains(&self.points[i])).collect();
        Self { points: keep.iter().map(|&i| self.points[i]).collect(), normals: keep.iter().map(|&i| self.normals[i]).collect() }
    }

    pub fn transformed(&self, rot: &nalgebra::Rotation3<f64>, shift: &Vec3) -> Self {
        Self { points: self.points.iter().map(|p| rot * p + shift).collect(), normals: self.normals.iter().map(|n| rot * n).collect() }
    }
}

/// Area-weighted sampling of a triangle mesh; normals are face normals.
pub fn sample_mesh(mesh: &TriMesh, n: usize, rng: &mut impl Rng) -> Result<SampledSurface, MetricsError> {
    if mesh.is_empty() {
        return Err(MetricsError::EmptyMesh);
    }
    let mut cdf = Vec::with_capacity(mesh.triangles.len());
    let mut acc = 0.0;
    for f in 0..mesh.triangles.len() {
        acc += mesh.area(f);
        cdf.push(acc);
    }
    if !(acc > 0.0) {
        return Err(MetricsError::EmptyMesh);
    }
    let mut out = SampledSurface::default();
    for _ in 0..n {
        let r = rng.gen::<f64>() * acc;
        let f = cdf.partition_point(|&c| c <= r).min(cdf.len() - 1);
        let [a, b, c] = mesh.corners(f);
        let (s, t): (f64, f64) = (rng.gen(), rng.gen());
        let su = s.sqrt();
        out.points.push(a * (1.0 - su) + b * (su * (1.0 - t)) + c * (su * t));
        out.normals.push(mesh.face_normal(f));
    }
    Ok(out)
}

fn unit_vector(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

fn sample_shape_once(shape: &Shape, rng: &mut impl Rng) -> Option<(Vec3, Vec3)> {
    match shape {
        Shape::Sphere { center, radius } => {
            let n = unit_vector(rng);
            Some((Vec3::from(*center) + n * *radius, n))
        }
        Shape::Torus { major, minor } => {
            // Area element is proportional to major + minor cos(v).
            let (u, v) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.0..std::f64::consts::TAU));
            if rng.gen::<f64>() * (major + minor) > major + minor * v.cos() {
                return None;
            }
            let n = Vec3::new(v.cos() * u.cos(), v.cos() * u.sin(), v.sin());
            let ring = Vec3::new(major * u.cos(), major * u.sin(), 0.0);
            Some((ring + n * *minor, n))
        }
        Shape::Box { half_extents: h } => {
            let areas = [h[1] * h[2], h[0] * h[2], h[0] * h[1]];
            let r = rng.gen::<f64>() * areas.iter().sum::<f64>();
            let axis = if r < areas[0] { 0 } else if r < areas[0] + areas[1] { 1 } else { 2 };
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            let mut p = Vec3::new(rng.gen_range(-h[0]..h[0]), rng.gen_range(-h[1]..h[1]), rng.gen_range(-h[2]..h[2]));
            p[axis] = sign * h[axis];
            let mut n = Vec3::zeros();
            n[axis] = sign;
            Some((p, n))
        }
        Shape::TwoSpheres { a, ra, b, rb } => {
            let pick_a = rng.gen::<f64>() * (ra * ra + rb * rb) < ra * ra;
            let (c, r, oc, or) = if pick_a { (a, ra, b, rb) } else { (b, rb, a, ra) };
            let n = unit_vector(rng);
            let p = Vec3::from(*c) + n * *r;
            // Parts of one sphere buried in the other are not surface.
            ((p - Vec3::from(*oc)).norm() > *or).then_some((p, n))
        }
    }
}

/// Area-uniform samples on an analytic shape with exact normals.
pub fn sample_shape(shape: &Shape, n: usize, rng: &mut impl Rng) -> SampledSurface {
    let mut out = SampledSurface::default();
    while out.len() < n {
        if let Some((p, nn)) = sample_shape_once(shape, rng) {
            out.points.push(p);
            out.normals.push(nn);
        }
    }
    out
}

fn tree_of(points: &[Vec3]) -> KdTree<f64, 3> {
    let mut tree: KdTree<f64, 3> = KdTree::with_capacity(points.len());
    for (i, p) in points.iter().enumerate() {
        tree.add(&[p.x, p.y, p.z], i as u64);
    }
    tree
}

/// Mean distance from each point of `from` to its nearest neighbor in `to`.
pub fn directed_mean(from: &[Vec3], to: &[Vec3]) -> f64 {
    let tree = tree_of(to);
    let sum: f64 = from
        .iter()
        .map(|p| {
            let nn = tree.nearest_one::<SquaredEuclidean>(&[p.x, p.y, p.z]);
            // Recompute from the coordinates so the result does not depend on tree arithmetic.
            (to[nn.item as usize] - p).norm()
        })
        .sum();
    sum / from.len() as f64
}

pub struct ChamferResult {
    pub chamfer: f64,
    pub pred_retained: usize,
    pub gt_retained: usize,
}

/// Symmetric Chamfer after discarding unobservable points on both sides.
pub fn chamfer_masked(pred: &SampledSurface, gt: &SampledSurface, grid: Option<&ObservabilityGrid>) -> Result<ChamferResult, MetricsError> {
    let (p, g) = match grid {
        Some(grid) => (pred.masked(grid), gt.masked(grid)),
        None => (pred.clone(), gt.clone()),
    };
    if p.is_empty() {
        return Err(MetricsError::EmptySet("predicted"));
    }
    if g.is_empty() {
        return Err(MetricsError::EmptySet("reference"));
    }
    let chamfer = directed_mean(&p.points, &g.points) + directed_mean(&g.points, &p.points);
    Ok(ChamferResult { chamfer, pred_retained: p.len(), gt_retained: g.len() })
}

/// Closest point to `p` on triangle `abc`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let (ab, ac, ap) = (b - a, c - a, p - a);
    let (d1, d2) = (ab.dot(&ap), ac.dot(&ap));
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let (d3, d4) = (ab.dot(&bp), ac.dot(&bp));
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let (d5, d6) = (ab.dot(&cp), ac.dot(&cp));
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

struct BvhNode {
    lo: Vec3,
    hi: Vec3,
    /// Leaf: range into the face order. Inner: children indices.
    start: usize,
    end: usize,
    children: Option<(usize, usize)>,
}

/// Bounding-volume hierarchy for closest-triangle queries.
pub struct TriangleBvh<'a> {
    mesh: &'a TriMesh,
    order: Vec<usize>,
    nodes: Vec<BvhNode>,
}

const LEAF_SIZE: usize = 4;

impl<'a> TriangleBvh<'a> {
    pub fn new(mesh: &'a TriMesh) -> Self {
        let mut bvh = Self { mesh, order: (0..mesh.triangles.len()).collect(), nodes: Vec::new() };
        let centroids: Vec<Vec3> = (0..mesh.triangles.len()).map(|f| mesh.corners(f).iter().sum::<Vec3>() / 3.0).collect();
        if !mesh.is_empty() {
            bvh.build(0, mesh.triangles.len(), &centroids);
        }
        bvh
    }

    fn build(&mut self, start: usize, end: usize, centroids: &[Vec3]) -> usize {
        let (mut lo, mut hi) = (Vec3::repeat(f64::INFINITY), Vec3::repeat(f64::NEG_INFINITY));
        for &f in &self.order[start..end] {
            for c in self.mesh.corners(f) {
                lo = lo.inf(&c);
                hi = hi.sup(&c);
            }
        }
        let id = self.nodes.len();
        self.nodes.push(BvhNode { lo, hi, start, end, children: None });
        if end - start > LEAF_SIZE {
            let ext = hi - lo;
            let axis = ext.imax();
            let mid = (start + end) / 2;
            self.order[start..end].select_nth_unstable_by(mid - start, |&x, &y| centroids[x][axis].total_cmp(&centroids[y][axis]));
            let l = self.build(start, mid, centroids);
            let r = self.build(mid, end, centroids);
            self.nodes[id].children = Some((l, r));
        }
        id
    }

    fn box_dist2(n: &BvhNode, p: &Vec3) -> f64 {
        (0..3).map(|a| (n.lo[a] - p[a]).max(0.0).max(p[a] - n.hi[a]).powi(2)).sum()
    }

    /// Nearest face and the closest point on it.
    pub fn closest(&self, p: &Vec3) -> Option<(usize, Vec3)> {
        let mut best: Option<(f64, usize, Vec3)> = None;
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            let Some(node) = self.nodes.get(id) else { break };
            let d = Self::box_dist2(node, p);
            if best.is_some_and(|(bd, _, _)| d > bd) {
                continue;
            }
            match node.children {
                Some((l, r)) => {
                    let (dl, dr) = (Self::box_dist2(&self.nodes[l], p), Self::box_dist2(&self.nodes[r], p));
                    if dl <= dr {
                        stack.extend([r, l]);
                    } else {
                        stack.extend([l, r]);
                    }
                }
                None => {
                    for &f in &self.order[node.start..node.end] {
                        let [a, b, c] = self.mesh.corners(f);
                        let q = closest_point_on_triangle(p, &a, &b, &c);
                        let d = (q - p).norm_squared();
                        if best.is_none_or(|(bd, bf, _)| d < bd || (d == bd && f < bf)) {
                            best = Some((d, f, q));
                        }
                    }
                }
            }
        }
        best.map(|(_, f, q)| (f, q))
    }
}

/// Mean `|n_gt . n_face|` over reference samples, matching each to its closest face.
pub fn normal_consistency(pred: &TriMesh, gt: &SampledSurface) -> Result<f64, MetricsError> {
    if pred.is_empty() {
        return Err(MetricsError::EmptyMesh);
    }
    if gt.is_empty() {
        return Err(MetricsError::EmptySet("reference"));
    }
    let bvh = TriangleBvh::new(pred);
    let sum: f64 = gt
        .points
        .iter()
        .zip(&gt.normals)
        .map(|(p, n)| {
            let (f, _) = bvh.closest(p).expect("non-empty mesh");
            n.dot(&pred.face_normal(f)).abs()
        })
        .sum();
    Ok(sum / gt.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub psnr: Option<f64>,
}

/// The `eval` report. PSNR values are capped so the JSON stays finite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub chamfer: f64,
    pub normal_consistency: f64,
    pub psnr_per_view: Vec<f64>,
    pub means: Means,
    pub pred_points_retained: usize,
    pub gt_points_retained: usize,
    pub observable_voxels: usize,
    pub warnings: Vec<String>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meshing::{marching_cubes, sample_grid, MeshError};

    fn rng(s: u64) -> rand_chacha::ChaCha8Rng {
        crate::seed::rng(s, &[])
    }

    fn camera_down_z(w: usize) -> Camera {
        Camera::look_at(Vec3::new(0.0, 0.0, -3.0), Vec3::zeros(), Vec3::y(), w as f64, w, w)
    }

    fn sphere_mesh(r: f64, res: usize) -> TriMesh {
        let g = sample_grid(|p| Ok::<_, MeshError>(p.iter().map(|x| x.norm() - r).collect()), Vec3::repeat(-1.0), Vec3::repeat(1.0), [res; 3])
            .unwrap();
        marching_cubes(&g, 0.0).unwrap()
    }

    /// Slab test of a pixel ray against a voxel box.
    fn ray_hits_box(o: &Vec3, d: &Vec3, lo: &Vec3, hi: &Vec3) -> bool {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            if d[a].abs() < 1e-15 {
                if o[a] < lo[a] || o[a] > hi[a] {
                    return false;
                }
                continue;
            }
            let (ta, tb) = ((lo[a] - o[a]) / d[a], (hi[a] - o[a]) / d[a]);
            t0 = t0.max(ta.min(tb));
            t1 = t1.min(ta.max(tb));
        }
        t0 < t1
    }

    #[test]
    fn traversal_matches_brute_force_ray_box_tests() {
        let cams = [
            camera_down_z(6),
            Camera::look_at(Vec3::new(2.0, 1.0, 0.5), Vec3::new(0.1, 0.0, 0.0), Vec3::z(), 3.0, 5, 4),
        ];
        let (lo, hi) = (Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let g = build_observability_grid(&cams, lo, hi, 8).unwrap();
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    let (a, b) = g.voxel_bounds(i, j, k);
                    // Shrink slightly so rays grazing a face do not count.
                    let e = Vec3::repeat(1e-9);
                    let want = cams.iter().any(|c| {
                        (0..c.height).any(|y| (0..c.width).any(|x| ray_hits_box(&c.center(), &c.pixel_center_ray(x, y, 0.0, 1.0).direction, &(a + e), &(b - e))))
                    });
                    if want {
                        assert!(g.cells[g.index(i, j, k)], "voxel {i},{j},{k} missed");
                    }
                }
            }
        }
        assert!(g.count() > 0);
    }

    #[test]
    fn frustum_membership_on_coarse_grid() {
        // Dense pixels relative to voxels: every voxel whose center is well inside
        // the frustum is hit; voxels fully outside are not.
        let cam = camera_down_z(64);
        let g = build_observability_grid(std::slice::from_ref(&cam), Vec3::repeat(-1.0), Vec3::repeat(1.0), 8).unwrap();
        let half_fov = 0.5; // tan of the half-angle for focal = width
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    let (a, b) = g.voxel_bounds(i, j, k);
                    let corners: Vec<Vec3> = (0..8).map(|c| Vec3::new(if c & 1 == 0 { a.x } else { b.x }, if c & 2 == 0 { a.y } else { b.y }, if c & 4 == 0 { a.z } else { b.z })).collect();
                    let inside = |p: &Vec3| {
                        let c = cam.to_camera(p);
                        c.z > 0.0 && c.x.abs() < half_fov * c.z && c.y.abs() < half_fov * c.z
                    };
                    let cell = g.cells[g.index(i, j, k)];
                    if corners.iter().all(inside) {
                        assert!(cell, "voxel {i},{j},{k} inside the frustum");
                    }
                    if !corners.iter().any(inside) && {
                        let c = cam.to_camera(&((a + b) / 2.0));
                        c.x.abs() > half_fov * c.z + 0.4 || c.y.abs() > half_fov * c.z + 0.4
                    } {
                        assert!(!cell, "voxel {i},{j},{k} outside the frustum");
                    }
                }
            }
        }
    }

    #[test]
    fn axis_camera_marks_frustum_not_behind() {
        // Box partly behind the camera at z = -3.
        let cam = camera_down_z(16);
        let g = build_observability_grid(&[cam], Vec3::new(-1.0, -1.0, -5.0), Vec3::new(1.0, 1.0, 1.0), 12).unwrap();
        assert!(g.contains(&Vec3::zeros()));
        assert!(!g.contains(&Vec3::new(0.0, 0.0, -4.0)));
        assert!(!g.contains(&Vec3::new(0.9, 0.9, -2.8)));
    }

    #[test]
    fn sphere_rig_sees_center() {
        let rig = crate::scenes::CameraRig { count: 12, ..crate::scenes::CameraRig::default() };
        let g = build_observability_grid(&rig.cameras(), Vec3::repeat(-1.0), Vec3::repeat(1.0), 32).unwrap();
        assert!(g.contains(&Vec3::zeros()));
        assert!(build_observability_grid(&[], Vec3::repeat(-1.0), Vec3::repeat(1.0), 8).is_err());
    }

    #[test]
    fn kd_nearest_matches_brute_force() {
        let mut r = rng(1);
        let a = sample_shape(&Shape::Sphere { center: [0.0; 3], radius: 0.5 }, 2000, &mut r);
        let b = sample_shape(&Shape::Sphere { center: [0.0; 3], radius: 0.55 }, 2000, &mut r);
        let brute = |from: &[Vec3], to: &[Vec3]| from.iter().map(|p| to.iter().map(|q| (q - p).norm()).fold(f64::INFINITY, f64::min)).sum::<f64>() / from.len() as f64;
        let c = chamfer_masked(&a, &b, None).unwrap().chamfer;
        let want = brute(&a.points, &b.points) + brute(&b.points, &a.points);
        assert!((c - want).abs() < 1e-12, "{c} vs {want}");
    }

    #[test]
    fn chamfer_definition_cases() {
        let one = |p: Vec3| SampledSurface { points: vec![p], normals: vec![Vec3::z()] };
        let c = chamfer_masked(&one(Vec3::zeros()), &one(Vec3::new(0.2, 0.0, 0.0)), None).unwrap();
        assert!((c.chamfer - 0.4).abs() < 1e-15);
        let s = sample_shape(&Shape::Torus { major: 0.45, minor: 0.2 }, 500, &mut rng(2));
        assert_eq!(chamfer_masked(&s, &s, None).unwrap().chamfer, 0.0);
        let t = sample_shape(&Shape::Torus { major: 0.45, minor: 0.21 }, 500, &mut rng(3));
        assert_eq!(chamfer_masked(&s, &t, None).unwrap().chamfer, chamfer_masked(&t, &s, None).unwrap().chamfer);
    }

    #[test]
    fn masking_is_symmetric_and_monotone() {
        let s = sample_shape(&Shape::Sphere { center: [0.0; 3], radius: 0.5 }, 3000, &mut rng(4));
        let full = ObservabilityGrid::full(8, Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let mut half = full.clone();
        for k in 0..4 {
            for j in 0..8 {
                for i in 0..8 {
                    let idx = half.index(i, j, k);
                    half.cells[idx] = false;
                }
            }
        }
        let a = chamfer_masked(&s, &s, Some(&full)).unwrap();
        let b = chamfer_masked(&s, &s, Some(&half)).unwrap();
        assert!(b.pred_retained <= a.pred_retained && b.gt_retained <= a.gt_retained);
        assert!(b.pred_retained < a.pred_retained);
        let none = ObservabilityGrid { cells: vec![false; 512], ..full };
        assert!(matches!(chamfer_masked(&s, &s, Some(&none)), Err(MetricsError::EmptySet(_))));
    }

    #[test]
    fn rigid_motion_leaves_chamfer_unchanged() {
        let a = sample_shape(&Shape::Torus { major: 0.45, minor: 0.2 }, 1500, &mut rng(5));
        let b = sample_shape(&Shape::Sphere { center: [0.1, 0.0, 0.0], radius: 0.5 }, 1500, &mut rng(6));
        let rot = nalgebra::Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let shift = Vec3::new(0.4, -2.0, 7.0);
        let c0 = chamfer_masked(&a, &b, None).unwrap().chamfer;
        let c1 = chamfer_masked(&a.transformed(&rot, &shift), &b.transformed(&rot, &shift), None).unwrap().chamfer;
        assert!((c0 - c1).abs() < 1e-9);
    }

    #[test]
    fn analytic_samples_lie_on_their_surfaces() {
        for shape in [
            Shape::Sphere { center: [0.1, 0.0, -0.1], radius: 0.5 },
            Shape::Torus { major: 0.45, minor: 0.2 },
            Shape::Box { half_extents: [0.4, 0.3, 0.2] },
            Shape::TwoSpheres { a: [-0.3, 0.0, 0.0], ra: 0.35, b: [0.3, 0.0, 0.0], rb: 0.3 },
        ] {
            let s = sample_shape(&shape, 2000, &mut rng(7));
            for (p, n) in s.points.iter().zip(&s.normals) {
                assert!(shape.sdf(p).abs() < 1e-9, "{shape:?} {p}");
                assert!((n.norm() - 1.0).abs() < 1e-12);
                // Normal agrees with the SDF gradient.
                let h = 1e-6;
                let g = Vec3::from_fn(|a, _| {
                    let mut e = Vec3::zeros();
                    e[a] = h;
                    (shape.sdf(&(p + e)) - shape.sdf(&(p - e))) / (2.0 * h)
                });
                if g.norm() > 0.5 {
                    assert!(g.normalize().dot(n) > 0.999, "{shape:?}");
                }
            }
        }
    }

    #[test]
    fn mesh_samples_are_area_uniform() {
        let m = TriMesh {
            positions: vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(0.0, 0.0, 3.0), Vec3::new(3.0, 0.0, 3.0), Vec3::new(0.0, 3.0, 3.0)],
            triangles: vec![[0, 1, 2], [3, 4, 5]],
            normals: None,
        };
        let s = sample_mesh(&m, 20_000, &mut rng(8)).unwrap();
        let big = s.points.iter().filter(|p| p.z > 1.0).count() as f64 / s.len() as f64;
        assert!((big - 0.9).abs() < 0.01, "{big}");
        assert!(sample_mesh(&TriMesh::default(), 10, &mut rng(8)).is_err());
    }

    #[test]
    fn closest_point_matches_dense_search() {
        let mut r = rng(9);
        for _ in 0..200 {
            let v: Vec<Vec3> = (0..4).map(|_| Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0))).collect();
            let q = closest_point_on_triangle(&v[3], &v[0], &v[1], &v[2]);
            let mut best = f64::INFINITY;
            let n = 300;
            for i in 0..=n {
                for j in 0..=n - i {
                    let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                    let p = v[0] + (v[1] - v[0]) * s + (v[2] - v[0]) * t;
                    best = best.min((p - v[3]).norm());
                }
            }
            let d = (q - v[3]).norm();
            assert!(d <= best + 1e-12 && d > best - 0.01, "{d} vs {best}");
        }
    }

    #[test]
    fn bvh_matches_linear_scan() {
        let m = sphere_mesh(0.5, 20);
        let bvh = TriangleBvh::new(&m);
        let mut r = rng(10);
        for _ in 0..300 {
            let p = Vec3::new(r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0), r.gen_range(-1.0..1.0));
            let (f, q) = bvh.closest(&p).unwrap();
            let brute = (0..m.triangles.len())
                .map(|g| {
                    let [a, b, c] = m.corners(g);
                    (closest_point_on_triangle(&p, &a, &b, &c) - p).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(((q - p).norm() - brute).abs() < 1e-12);
            assert!(f < m.triangles.len());
        }
    }

    #[test]
    fn normal_consistency_cases() {
        let m = sphere_mesh(0.5, 64);
        let own = sample_mesh(&m, 10_000, &mut rng(11)).unwrap();
        assert!(normal_consistency(&m, &own).unwrap() >= 0.999);
        let analytic = sample_shape(&Shape::Sphere { center: [0.0; 3], radius: 0.5 }, 10_000, &mut rng(12));
        assert!(normal_consistency(&m, &analytic).unwrap() > 0.99);
        // A plane against samples of the same plane rotated by 90 degrees.
        let plane = TriMesh {
            positions: vec![Vec3::new(-1.0, -1.0, 0.0), Vec3::new(1.0, -1.0, 0.0), Vec3::new(1.0, 1.0, 0.0), Vec3::new(-1.0, 1.0, 0.0)],
            triangles: vec![[0, 1, 2], [0, 2, 3]],
            normals: None,
        };
        let rot = nalgebra::Rotation3::from_axis_angle(&Vec3::x_axis(), std::f64::consts::FRAC_PI_2);
        let side = sample_mesh(&plane, 1000, &mut rng(13)).unwrap().transformed(&rot, &Vec3::zeros());
        assert!(normal_consistency(&plane, &side).unwrap() < 1e-12);
        assert!(normal_consistency(&TriMesh::default(), &side).is_err());
    }

    #[test]
    fn report_serializes() {
        let r = EvalReport {
            chamfer: 0.01,
            normal_consistency: 0.98,
            psnr_per_view: vec![30.0, 99.0],
            means: Means { psnr: Some(64.5) },
            pred_points_retained: 10,
            gt_points_retained: 12,
            observable_voxels: 5,
            warnings: vec![],
        };
        let back: EvalReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
