//! Distillation of a frozen radiance field into the surface network.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::dataset::Dataset;
use crate::diffcore::{AdamConfig, AdamState, DiffError, Graph, Real, Tensor, Var};
use crate::field::nerf::direction_tensor;
use crate::field::{opacity_weights, percentiles_of, stratified_depths, Camera, Jitter, PercentileMode, RadianceField, Ray, Vec3};

use super::losses::{self, LossWeights};
use super::model::{SsanModel, SsanNet};
use super::projection::project_to_zero_level;
use super::SsanError;

#[derive(Clone, Debug, PartialEq)]
pub struct DistillConfig {
    pub steps: usize,
    pub batch_rays: usize,
    pub free_space_points: usize,
    pub lr: f64,
    pub lr_final_fraction: f64,
    pub seed: u64,
    pub weights: LossWeights,
    /// Outside, surface and inside percentiles.
    pub percentiles: [f64; 3],
    pub percentile_mode: PercentileMode,
    /// Samples per ray when rendering percentiles from the frozen field.
    pub samples: usize,
    pub projection: bool,
    pub projection_steps: usize,
    pub projection_rate: f64,
    pub fd_step: f64,
    /// Gap left in front of the outside percentile when sampling free space.
    pub free_space_margin: f64,
    pub interior_points: usize,
    /// Depth a point must lie behind the inside percentile, in every view, to count as interior.
    pub interior_margin: f64,
    /// Uniform box samples tested for interior membership when the cache is built.
    pub interior_candidates: usize,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_rays: 512,
            free_space_points: 512,
            lr: 1e-2,
            lr_final_fraction: 0.1,
            seed: 0,
            weights: LossWeights::default(),
            percentiles: [16.0, 50.0, 84.0],
            percentile_mode: PercentileMode::Quantile,
            samples: 512,
            projection: true,
            projection_steps: 4,
            projection_rate: 0.1,
            fd_step: 1e-3,
            free_space_margin: 0.02,
            interior_points: 512,
            interior_margin: 0.02,
            interior_candidates: 1 << 18,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self, truncation: f64) -> Result<(), SsanError> {
        let bad = |m: String| Err(SsanError::InvalidConfig(m));
        self.weights.validate(truncation).map_err(SsanError::InvalidConfig)?;
        let [a, b, c] = self.percentiles;
        if !(0.0 < a && a < b && b < c && c < 100.0) {
            return bad(format!("percentiles must increase inside (0, 100): {:?}", self.percentiles));
        }
        if self.batch_rays == 0 || self.samples == 0 {
            return bad("batch_rays and samples must be positive".into());
        }
        if !(self.fd_step > 0.0) || !(self.lr > 0.0) || !(self.lr_final_fraction > 0.0) {
            return bad("fd_step, lr and lr_final_fraction must be positive".into());
        }
        if !(self.projection_rate > 0.0) || (self.projection && self.projection_steps == 0) {
            return bad("projection needs a positive rate and at least one step".into());
        }
        if !(self.free_space_margin >= 0.0) {
            return bad("free_space_margin must be nonnegative".into());
        }
        Ok(())
    }
}

/// A training ray with its percentile depths.
#[derive(Clone, Debug, PartialEq)]
pub struct CachedRay {
    pub ray: Ray,
    pub z: [f64; 3],
    pub opacity: f64,
    /// Some percentile was not reached.
    pub low_opacity: bool,
    pub color: [f64; 3],
}

/// Percentile depths of every training pixel, rendered once from the frozen field.
#[derive(Clone, Debug, Default)]
pub struct PercentileCache {
    pub rays: Vec<CachedRay>,
    pub percentiles: [f64; 3],
    /// Points that every view sees behind its inside percentile.
    pub interior: Vec<[f64; 3]>,
    hits: Vec<usize>,
    /// Per camera, the cached ray of each pixel (row major).
    pixel_map: Vec<Vec<Option<usize>>>,
}

const RAYS_PER_CHUNK: usize = 64;

impl PercentileCache {
    pub fn build<F: RadianceField + ?Sized>(
        field: &F,
        data: &Dataset,
        percentiles: [f64; 3],
        mode: PercentileMode,
        samples: usize,
    ) -> Result<Self, SsanError> {
        let (lo, hi) = (Vec3::repeat(-1.0), Vec3::repeat(1.0));
        let mut pixels = Vec::new();
        let mut pixel_map = Vec::with_capacity(data.cameras.len());
        for (cam, img) in data.cameras.iter().zip(&data.images) {
            let mut map = vec![None; cam.width * cam.height];
            for j in 0..cam.height {
                for i in 0..cam.width {
                    if let Some(ray) = cam.pixel_center_ray(i, j, 1e-3, 1e3).clipped_to_box(&lo, &hi) {
                        map[j * cam.width + i] = Some(pixels.len());
                        pixels.push((ray, img.get(i, j).map(|c| c as f64)));
                    }
                }
            }
            pixel_map.push(map);
        }
        let mut rays = Vec::with_capacity(pixels.len());
        for chunk in pixels.chunks(RAYS_PER_CHUNK) {
            let mut points = Vec::with_capacity(chunk.len() * samples);
            let mut per_ray = Vec::with_capacity(chunk.len());
            for (ray, _) in chunk {
                let (depths, deltas) = stratified_depths(ray, samples, Jitter::Centered);
                points.extend(depths.iter().map(|&t| ray.at(t)));
                per_ray.push((depths, deltas));
            }
            let sigma = field.density(&points)?;
            for (((ray, color), (depths, deltas)), s) in chunk.iter().zip(per_ray).zip(sigma.chunks(samples)) {
                let w = opacity_weights(s, &deltas);
                let p = percentiles_of(&w, &depths, &deltas, percentiles, mode)?;
                rays.push(CachedRay {
                    ray: ray.clone(),
                    z: p.z,
                    opacity: w.iter().sum(),
                    low_opacity: p.low_opacity,
                    color: *color,
                });
            }
        }
        let mut cache = Self::from_rays(rays, percentiles);
        cache.pixel_map = pixel_map;
        Ok(cache)
    }

    /// Visual-hull carving. Keeps uniform box samples that lie, for every
    /// camera whose image contains them, at least `margin` behind the inside
    /// percentile of the pixel they land in. Pixels that never turn opaque
    /// carve everything along them.
    pub fn carve_interior(&mut self, cameras: &[Camera], candidates: usize, margin: f64, seed: u64) {
        let mut rng = crate::seed::rng(seed, &[0x1a7e]);
        let mut interior = Vec::new();
        'next: for _ in 0..candidates {
            let p = Vec3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let mut seen = false;
            for (cam, map) in cameras.iter().zip(&self.pixel_map) {
                let Some((u, v, _)) = cam.project(&p) else { continue };
                if !(u >= 0.0 && v >= 0.0 && u < cam.width as f64 && v < cam.height as f64) {
                    continue;
                }
                seen = true;
                let Some(r) = map[v as usize * cam.width + u as usize] else { continue 'next };
                let r = &self.rays[r];
                if r.low_opacity || (p - r.ray.origin).dot(&r.ray.direction) < r.z[2] + margin {
                    continue 'next;
                }
            }
            if seen {
                interior.push([p.x, p.y, p.z]);
            }
        }
        self.interior = interior;
    }

    pub fn from_rays(rays: Vec<CachedRay>, percentiles: [f64; 3]) -> Self {
        let hits = rays.iter().enumerate().filter(|(_, r)| !r.low_opacity).map(|(i, _)| i).collect();
        Self { rays, percentiles, interior: Vec::new(), hits, pixel_map: Vec::new() }
    }

    /// Indices of rays that reached every percentile.
    pub fn hits(&self) -> &[usize] {
        &self.hits
    }
}

/// Inputs of one optimization step. Geometry enters only through positions.
#[derive(Clone, Debug, Default)]
pub struct StepBatch {
    /// Outside, surface and inside points per ray.
    pub z_points: [Vec<[f64; 3]>; 3],
    pub dirs: Vec<Vec3>,
    /// One point per ray between the outside and inside percentiles.
    pub delta_points: Vec<[f64; 3]>,
    pub free_points: Vec<[f64; 3]>,
    pub interior_points: Vec<[f64; 3]>,
    /// Points where appearance is supervised, with their (frozen) normals and colors.
    pub color_points: Vec<[f64; 3]>,
    pub color_normals: Vec<Vec3>,
    pub color_dirs: Vec<Vec3>,
    pub colors: Vec<[f64; 3]>,
}

/// Loss terms left out of the step are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub surface: Option<Var>,
    pub gradient_norm: Option<Var>,
    pub smoothness: Option<Var>,
    pub orientation: Option<Var>,
    pub color: Option<Var>,
    pub free_space: Option<Var>,
    pub interior: Option<Var>,
    pub total: Var,
}

/// Combined distillation loss on a prepared batch. Terms with zero weight are skipped.
pub fn step_loss<R: Real>(
    model: &SsanModel,
    g: &mut Graph<'_, R>,
    batch: &StepBatch,
    w: &LossWeights,
    h: f64,
) -> Result<LossVars, DiffError> {
    let n = batch.dirs.len();
    let m = batch.free_points.len();
    let q = batch.interior_points.len();
    let mut pts = Vec::with_capacity(15 * n + m + q);
    for z in &batch.z_points {
        pts.extend_from_slice(z);
    }
    pts.extend(losses::fd_stencil(&batch.z_points[1], h));
    pts.extend(losses::fd_stencil(&batch.delta_points, h));
    pts.extend_from_slice(&batch.free_points);
    pts.extend_from_slice(&batch.interior_points);

    let mut terms: Vec<(f64, Var)> = Vec::new();
    let mut out = LossVars {
        surface: None,
        gradient_norm: None,
        smoothness: None,
        orientation: None,
        color: None,
        free_space: None,
        interior: None,
        total: g.constant(Tensor::scalar(R::zero())),
    };
    if !pts.is_empty() {
        let geo = model.geometry(g, &pts)?;
        if n > 0 {
            let t16 = g.slice_rows(geo.t, 0, n)?;
            let t50 = g.slice_rows(geo.t, n, n)?;
            let t84 = g.slice_rows(geo.t, 2 * n, n)?;
            let n_hat = g.slice_rows(geo.n, n, n)?;
            let st50 = g.slice_rows(geo.t, 3 * n, 6 * n)?;
            let grad50 = losses::fd_gradient(g, st50, n, h)?;
            let std = g.slice_rows(geo.t, 9 * n, 6 * n)?;
            let grad_d = losses::fd_gradient(g, std, n, h)?;
            if w.surface > 0.0 {
                let l = losses::surface_loss(g, t16, t50, t84, w.epsilon)?;
                out.surface = Some(l);
                terms.push((w.surface, l));
            }
            if w.gradient_norm > 0.0 {
                let l = losses::gradient_norm_loss(g, grad_d, w.n_c);
                out.gradient_norm = Some(l);
                terms.push((w.gradient_norm, l));
            }
            let normal = g.normalize(grad50);
            if w.smoothness > 0.0 {
                let valid: Vec<bool> = losses::zero_rows(g, grad50).into_iter().map(|z| !z).collect();
                if let Some(l) = losses::smoothness_loss(g, normal, n_hat, &valid)? {
                    out.smoothness = Some(l);
                    terms.push((w.smoothness, l));
                }
            }
            if w.orientation > 0.0 {
                let l = losses::orientation_loss(g, normal, &batch.dirs)?;
                out.orientation = Some(l);
                terms.push((w.orientation, l));
            }
        }
        if m > 0 && w.free_space > 0.0 {
            let tf = g.slice_rows(geo.t, 15 * n, m)?;
            let l = losses::free_space_loss(g, tf, w.epsilon);
            out.free_space = Some(l);
            terms.push((w.free_space, l));
        }
        if q > 0 && w.interior > 0.0 {
            let ti = g.slice_rows(geo.t, 15 * n + m, q)?;
            let l = losses::interior_loss(g, ti);
            out.interior = Some(l);
            terms.push((w.interior, l));
        }
    }
    let k = batch.color_points.len();
    if k > 0 && w.color > 0.0 {
        let f = model.appearance(g, &batch.color_points)?;
        let normals = g.constant(Tensor::new(
            &[k, 3],
            batch.color_normals.iter().flat_map(|v| [R::of(v.x), R::of(v.y), R::of(v.z)]).collect(),
        )?);
        let d = g.constant(direction_tensor(&batch.color_dirs));
        let c = model.eta.forward(g, f, normals, d)?;
        let l = losses::color_loss(g, c, &batch.colors)?;
        out.color = Some(l);
        terms.push((w.color, l));
    }
    for (weight, l) in terms {
        let s = g.scale(l, weight);
        out.total = g.add(out.total, s)?;
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossRow {
    pub step: usize,
    pub surface: f64,
    pub gradient_norm: f64,
    pub smoothness: f64,
    pub orientation: f64,
    pub color: f64,
    pub free_space: f64,
    pub interior: f64,
    pub total: f64,
}

impl LossRow {
    fn read<R: Real>(g: &Graph<'_, R>, step: usize, v: &LossVars) -> Self {
        let get = |x: Option<Var>| x.map(|x| g.value(x).item().as_f64()).unwrap_or(0.0);
        Self {
            step,
            surface: get(v.surface),
            gradient_norm: get(v.gradient_norm),
            smoothness: get(v.smoothness),
            orientation: get(v.orientation),
            color: get(v.color),
            free_space: get(v.free_space),
            interior: get(v.interior),
            total: g.value(v.total).item().as_f64(),
        }
    }

    fn breakdown(&self) -> String {
        format!(
            "surface={} gradient_norm={} smoothness={} orientation={} color={} free_space={} interior={}",
            self.surface, self.gradient_norm, self.smoothness, self.orientation, self.color, self.free_space, self.interior
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct DistillReport {
    pub rows: Vec<LossRow>,
}

impl DistillReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("step,surface,gradient_norm,smoothness,orientation,color,free_space,interior,total\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.step, r.surface, r.gradient_norm, r.smoothness, r.orientation, r.color, r.free_space, r.interior, r.total
            );
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SsanError> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())?;
        Ok(())
    }
}

fn clamp_box(p: Vec3) -> [f64; 3] {
    [p.x.clamp(-1.0, 1.0), p.y.clamp(-1.0, 1.0), p.z.clamp(-1.0, 1.0)]
}

/// Samples the rays and points of step `step`. Projection uses the current network.
pub fn build_batch(net: &SsanNet, cache: &PercentileCache, cfg: &DistillConfig, step: usize) -> Result<StepBatch, SsanError> {
    let hits = cache.hits();
    if hits.is_empty() {
        return Err(SsanError::EmptyBatch);
    }
    let mut rng = crate::seed::rng(cfg.seed, &[3, step as u64]);
    let chosen: Vec<&CachedRay> = (0..cfg.batch_rays).map(|_| &cache.rays[hits[rng.gen_range(0..hits.len())]]).collect();
    let mut b = StepBatch::default();
    for r in &chosen {
        for k in 0..3 {
            b.z_points[k].push(clamp_box(r.ray.at(r.z[k])));
        }
        b.dirs.push(r.ray.direction);
        let (lo, hi) = (r.z[0].min(r.z[2]), r.z[0].max(r.z[2]));
        let s = if hi > lo { rng.gen_range(lo..hi) } else { lo };
        b.delta_points.push(clamp_box(r.ray.at(s)));
    }
    let outside = cache.percentiles[0] / 100.0;
    for _ in 0..cfg.free_space_points {
        let r = &cache.rays[rng.gen_range(0..cache.rays.len())];
        let end = if r.opacity >= outside { r.z[0] - cfg.free_space_margin } else { r.ray.t_far };
        if end > r.ray.t_near {
            b.free_points.push(clamp_box(r.ray.at(rng.gen_range(r.ray.t_near..end))));
        }
    }
    if !cache.interior.is_empty() && cfg.weights.interior > 0.0 {
        for _ in 0..cfg.interior_points {
            b.interior_points.push(cache.interior[rng.gen_range(0..cache.interior.len())]);
        }
    }
    if cfg.weights.color > 0.0 {
        let rays: Vec<Ray> = chosen.iter().map(|r| r.ray.clone()).collect();
        let points: Vec<Vec3> = if cfg.projection {
            let starts: Vec<f64> = chosen.iter().map(|r| r.z[1]).collect();
            project_to_zero_level(|p| net.tsdf(p), &rays, &starts, cfg.projection_steps, cfg.projection_rate)?
                .into_iter()
                .map(|p| p.point)
                .collect()
        } else {
            chosen.iter().map(|r| r.ray.at(r.z[1])).collect()
        };
        let out = net.query(&points)?;
        b.color_points = points.iter().map(|p| clamp_box(*p)).collect();
        b.color_normals = out.iter().map(|o| o.n).collect();
        b.color_dirs = rays.iter().map(|r| r.direction).collect();
        b.colors = chosen.iter().map(|r| r.color).collect();
    }
    Ok(b)
}

/// Runs `cfg.steps` Adam steps on `net` against the cached percentiles.
pub fn distill(
    net: &mut SsanNet,
    cache: &PercentileCache,
    cfg: &DistillConfig,
    mut on_step: impl FnMut(&LossRow),
) -> Result<DistillReport, SsanError> {
    cfg.validate(net.model.config.truncation)?;
    let mut report = DistillReport::default();
    if cfg.steps == 0 {
        return Ok(report);
    }
    let mut adam = AdamState::new(&net.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
    for step in 0..cfg.steps {
        let batch = build_batch(net, cache, cfg, step)?;
        let (row, grads) = {
            let mut g = Graph::new(&net.store);
            let vars = step_loss(&net.model, &mut g, &batch, &cfg.weights, cfg.fd_step)?;
            let row = LossRow::read(&g, step, &vars);
            if !row.total.is_finite() {
                return Err(SsanError::Diverged { step, breakdown: row.breakdown() });
            }
            (row, g.backward(vars.total)?)
        };
        let lr = cfg.lr * cfg.lr_final_fraction.powf(step as f64 / cfg.steps as f64);
        adam.step_with_lr(&mut net.store, &grads, lr).map_err(|e| match e {
            DiffError::NonFiniteGradient(p) => {
                SsanError::Diverged { step, breakdown: format!("{}; non-finite gradient for {p}", row.breakdown()) }
            }
            e => e.into(),
        })?;
        on_step(&row);
        report.rows.push(row);
    }
    Ok(report)
}

/// Builds the percentile cache from `field` and distills.
pub fn distill_field<F: RadianceField + ?Sized>(
    net: &mut SsanNet,
    field: &F,
    data: &Dataset,
    cfg: &DistillConfig,
    on_step: impl FnMut(&LossRow),
) -> Result<(PercentileCache, DistillReport), SsanError> {
    cfg.validate(net.model.config.truncation)?;
    let mut cache = PercentileCache::build(field, data, cfg.percentiles, cfg.percentile_mode, cfg.samples)?;
    if cfg.weights.interior > 0.0 && cfg.interior_points > 0 {
        cache.carve_interior(&data.cameras, cfg.interior_candidates, cfg.interior_margin, cfg.seed);
    }
    let report = distill(net, &cache, cfg, on_step)?;
    Ok((cache, report))
}

/// Signed distance at the surface percentile of every non-flagged ray.
pub fn median_point_residuals(net: &SsanNet, cache: &PercentileCache) -> Result<Vec<f64>, SsanError> {
    let pts: Vec<Vec3> = cache.hits().iter().map(|&i| {
        let r = &cache.rays[i];
        r.ray.at(r.z[1])
    }).collect();
    net.tsdf(&pts)
}
