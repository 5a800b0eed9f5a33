//! Trainable radiance field: hash encoding, a small density network and a
//! view-conditioned color network.

use std::path::Path;

use rand::Rng;

use crate::dataset::Dataset;
use crate::diffcore::checkpoint;
use crate::diffcore::nn::Mlp;
use crate::diffcore::{AdamConfig, AdamState, CompositeLayout, DiffError, Graph, ParamStore, Real, Tensor, Var};

use super::camera::{Ray, Vec3};
use super::hashgrid::{HashGrid, HashGridConfig};
use super::render::{stratified_depths, Jitter};
use super::{FieldError, FieldSample, RadianceField};

pub const DIR_ENCODING_DIM: usize = 27;
const DIR_FREQUENCIES: usize = 4;

/// `[d, sin(2^k pi d), cos(2^k pi d)]` for `k < 4`.
pub fn direction_encoding(d: &Vec3) -> [f64; DIR_ENCODING_DIM] {
    let mut out = [0.0; DIR_ENCODING_DIM];
    out[..3].copy_from_slice(d.as_slice());
    for k in 0..DIR_FREQUENCIES {
        let f = std::f64::consts::PI * (1u32 << k) as f64;
        for a in 0..3 {
            out[3 + k * 6 + a] = (f * d[a]).sin();
            out[3 + k * 6 + 3 + a] = (f * d[a]).cos();
        }
    }
    out
}

pub fn direction_tensor<R: Real>(dirs: &[Vec3]) -> Tensor<R> {
    let data = dirs.iter().flat_map(direction_encoding).map(R::of).collect();
    Tensor::new(&[dirs.len(), DIR_ENCODING_DIM], data).expect("direction encoding shape")
}

pub(crate) fn points_of(points: &[Vec3]) -> Vec<[f64; 3]> {
    points.iter().map(|p| [p.x, p.y, p.z]).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct NerfConfig {
    pub grid: HashGridConfig,
    pub density_hidden: usize,
    /// Features passed from the density network to the color network.
    pub geo_features: usize,
    pub color_hidden: usize,
    pub color_layers: usize,
}

impl Default for NerfConfig {
    fn default() -> Self {
        Self { grid: HashGridConfig::default(), density_hidden: 64, geo_features: 15, color_hidden: 64, color_layers: 2 }
    }
}

impl NerfConfig {
    pub fn desk() -> Self {
        Self { grid: HashGridConfig::desk(), ..Self::default() }
    }

    fn meta(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("levels", self.grid.levels as f64),
            ("log2_table_size", self.grid.log2_table_size as f64),
            ("features", self.grid.features as f64),
            ("n_min", self.grid.n_min as f64),
            ("n_max", self.grid.n_max as f64),
            ("density_hidden", self.density_hidden as f64),
            ("geo_features", self.geo_features as f64),
            ("color_hidden", self.color_hidden as f64),
            ("color_layers", self.color_layers as f64),
        ]
    }

    fn from_meta<R: Real>(t: &[(String, Tensor<R>)]) -> Result<Self, DiffError> {
        let u = |k: &str| checkpoint::meta(t, k).map(|v| v as usize);
        Ok(Self {
            grid: HashGridConfig {
                levels: u("levels")?,
                log2_table_size: u("log2_table_size")? as u32,
                features: u("features")?,
                n_min: u("n_min")?,
                n_max: u("n_max")?,
            },
            density_hidden: u("density_hidden")?,
            geo_features: u("geo_features")?,
            color_hidden: u("color_hidden")?,
            color_layers: u("color_layers")?,
        })
    }
}

/// Network structure; parameters live in a separate store.
#[derive(Clone, Debug)]
pub struct NerfModel {
    pub config: NerfConfig,
    pub grid: HashGrid,
    pub density: Mlp,
    pub color: Mlp,
}

impl NerfModel {
    pub fn new<R: Real>(store: &mut ParamStore<R>, config: NerfConfig, rng: &mut impl Rng) -> Result<Self, FieldError> {
        let grid = HashGrid::new(store, "nerf.grid", config.grid.clone(), rng)?;
        let density = Mlp::new(store, "nerf.density", &[grid.output_dim(), config.density_hidden, 1 + config.geo_features], false, rng);
        let mut widths = vec![config.geo_features + DIR_ENCODING_DIM];
        widths.extend(std::iter::repeat_n(config.color_hidden, config.color_layers));
        widths.push(3);
        let color = Mlp::new(store, "nerf.color", &widths, false, rng);
        Ok(Self { config, grid, density, color })
    }

    /// Density `[N, 1]` (softplus) and geometry features `[N, geo_features]`.
    pub fn density_forward<R: Real>(&self, g: &mut Graph<'_, R>, points: &[[f64; 3]]) -> Result<(Var, Var), DiffError> {
        let enc = self.grid.encode(g, points)?;
        let h = self.density.forward(g, enc)?;
        let raw = g.slice_cols(h, 0, 1)?;
        let sigma = g.softplus(raw);
        let geo = g.slice_cols(h, 1, self.config.geo_features)?;
        Ok((sigma, geo))
    }

    /// Color `[N, 3]` (sigmoid) from geometry features and encoded directions.
    pub fn color_forward<R: Real>(&self, g: &mut Graph<'_, R>, geo: Var, dirs: Var) -> Result<Var, DiffError> {
        let x = g.concat(&[geo, dirs])?;
        let c = self.color.forward(g, x)?;
        Ok(g.sigmoid(c))
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, points: &[[f64; 3]], dirs: Var) -> Result<(Var, Var), DiffError> {
        let (sigma, geo) = self.density_forward(g, points)?;
        let color = self.color_forward(g, geo, dirs)?;
        Ok((sigma, color))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NerfTrainConfig {
    pub steps: usize,
    pub batch_rays: usize,
    pub samples: usize,
    pub lr: f64,
    /// Learning rate at the last step, as a fraction of `lr` (exponential decay).
    pub lr_final_fraction: f64,
    pub seed: u64,
    pub background: [f64; 3],
    /// Samples whose compositing weight falls below this are left out of the
    /// color network and the loss; rays stop once transmittance drops below it.
    /// Zero keeps every sample.
    pub prune_weight: f64,
}

impl Default for NerfTrainConfig {
    fn default() -> Self {
        Self {
            steps: 5000,
            batch_rays: 256,
            samples: 64,
            lr: 1e-2,
            lr_final_fraction: 0.1,
            seed: 0,
            background: [1.0; 3],
            prune_weight: 1e-4,
        }
    }
}

/// Indices of samples that matter for compositing and the layout over them.
fn prune_samples(
    sigma: &[f32],
    offsets: &[usize],
    deltas: &[f64],
    threshold: f64,
    background: [f32; 3],
) -> (Vec<usize>, CompositeLayout<f32>) {
    let mut kept = Vec::with_capacity(sigma.len());
    let mut new_offsets = vec![0];
    for r in 0..offsets.len() - 1 {
        let mut trans = 1.0f64;
        for s in offsets[r]..offsets[r + 1] {
            let alpha = 1.0 - (-(sigma[s] as f64) * deltas[s]).exp();
            if threshold <= 0.0 || trans * alpha > threshold {
                kept.push(s);
            }
            trans *= 1.0 - alpha;
            if threshold > 0.0 && trans < threshold {
                break;
            }
        }
        new_offsets.push(kept.len());
    }
    let kept_deltas = kept.iter().map(|&s| deltas[s] as f32).collect();
    (kept, CompositeLayout { offsets: new_offsets, deltas: kept_deltas, background })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NerfTrainReport {
    /// `(step, batch MSE)` for every step.
    pub losses: Vec<(usize, f64)>,
}

impl NerfTrainReport {
    pub fn final_loss(&self) -> f64 {
        self.losses.last().map(|l| l.1).unwrap_or(f64::NAN)
    }
}

struct TrainRay {
    ray: Ray,
    target: [f32; 3],
}

/// Frozen-or-training field in `f32`.
#[derive(Clone, Debug)]
pub struct NerfField {
    pub store: ParamStore<f32>,
    pub model: NerfModel,
}

const QUERY_CHUNK: usize = 8192;

impl NerfField {
    pub fn new(config: NerfConfig, seed: u64) -> Result<Self, FieldError> {
        let mut store = ParamStore::new();
        let mut rng = crate::seed::rng(seed, &[0x4e45]);
        let model = NerfModel::new(&mut store, config, &mut rng)?;
        Ok(Self { store, model })
    }

    pub fn save(&self, path: &Path) -> Result<(), FieldError> {
        checkpoint::save_file(path, &self.store, &self.model.config.meta())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, FieldError> {
        let tensors = checkpoint::load_file::<f32>(path)?;
        let config = NerfConfig::from_meta(&tensors)?;
        let mut field = Self::new(config, 0)?;
        field.store.load_named(&tensors)?;
        if let Some(name) = field.store.first_non_finite() {
            return Err(FieldError::NonFinite(format!("weight '{name}' in {}", path.display())));
        }
        Ok(field)
    }

    /// Photometric training on every pixel ray that crosses the scene box.
    pub fn train(
        &mut self,
        data: &Dataset,
        cfg: &NerfTrainConfig,
        mut on_step: impl FnMut(usize, f64),
    ) -> Result<NerfTrainReport, FieldError> {
        if data.len() < 1 || cfg.batch_rays == 0 || cfg.samples == 0 {
            return Err(FieldError::InvalidConfig("training needs images, rays and samples".into()));
        }
        let rays = training_rays(data);
        if rays.is_empty() {
            return Err(FieldError::InvalidConfig("no training ray crosses the scene box".into()));
        }
        let mut adam = AdamState::new(&self.store, AdamConfig { lr: cfg.lr, ..AdamConfig::default() });
        let mut losses = Vec::with_capacity(cfg.steps);
        let bg = cfg.background.map(|c| c as f32);
        for step in 0..cfg.steps {
            let mut rng = crate::seed::rng(cfg.seed, &[1, step as u64]);
            let batch: Vec<usize> = (0..cfg.batch_rays).map(|_| rng.gen_range(0..rays.len())).collect();
            let mut points = Vec::with_capacity(batch.len() * cfg.samples);
            let mut dirs = Vec::with_capacity(batch.len() * cfg.samples);
            let mut deltas = Vec::with_capacity(batch.len() * cfg.samples);
            let mut offsets = vec![0];
            let mut target = Vec::with_capacity(batch.len() * 3);
            for &i in &batch {
                let r = &rays[i];
                let jitter = crate::seed::derive(cfg.seed, &[2, step as u64, i as u64]);
                let (ts, dt) = stratified_depths(&r.ray, cfg.samples, Jitter::Seeded(jitter));
                points.extend(ts.iter().map(|&t| {
                    let p = r.ray.at(t);
                    [p.x, p.y, p.z]
                }));
                dirs.extend(std::iter::repeat_n(r.ray.direction, ts.len()));
                deltas.extend(dt);
                offsets.push(points.len());
                target.extend_from_slice(&r.target);
            }
            let (loss_value, grads) = {
                let mut g = Graph::new(&self.store);
                let (sigma, geo) = self.model.density_forward(&mut g, &points)?;
                let (kept, layout) = prune_samples(g.value(sigma).data(), &offsets, &deltas, cfg.prune_weight, bg);
                let sigma = g.gather(sigma, &kept)?;
                let geo = g.gather(geo, &kept)?;
                let kept_dirs: Vec<Vec3> = kept.iter().map(|&s| dirs[s]).collect();
                let d = g.constant(direction_tensor(&kept_dirs));
                let color = self.model.color_forward(&mut g, geo, d)?;
                let pred = g.composite(sigma, color, layout)?;
                let t = g.constant(Tensor::new(&[batch.len(), 3], target)?);
                let diff = g.sub(pred, t)?;
                let sq = g.square(diff);
                let loss = g.mean(sq);
                let v = g.value(loss).item() as f64;
                if !v.is_finite() {
                    return Err(FieldError::Diverged { step, loss: v });
                }
                (v, g.backward(loss)?)
            };
            let frac = step as f64 / cfg.steps.max(1) as f64;
            let lr = cfg.lr * cfg.lr_final_fraction.powf(frac);
            adam.step_with_lr(&mut self.store, &grads, lr).map_err(|e| match e {
                DiffError::NonFiniteGradient(_) => FieldError::Diverged { step, loss: f64::NAN },
                e => e.into(),
            })?;
            losses.push((step, loss_value));
            on_step(step, loss_value);
        }
        Ok(NerfTrainReport { losses })
    }
}

fn training_rays(data: &Dataset) -> Vec<TrainRay> {
    let (lo, hi) = (Vec3::repeat(-1.0), Vec3::repeat(1.0));
    let mut out = Vec::new();
    for (cam, img) in data.cameras.iter().zip(&data.images) {
        for j in 0..cam.height {
            for i in 0..cam.width {
                let ray = cam.pixel_center_ray(i, j, 1e-3, 1e3);
                if let Some(ray) = ray.clipped_to_box(&lo, &hi) {
                    out.push(TrainRay { ray, target: img.get(i, j) });
                }
            }
        }
    }
    out
}

impl RadianceField for NerfField {
    fn query(&self, points: &[Vec3], dirs: &[Vec3]) -> Result<Vec<FieldSample>, FieldError> {
        let mut out = Vec::with_capacity(points.len());
        for (pc, dc) in points.chunks(QUERY_CHUNK).zip(dirs.chunks(QUERY_CHUNK)) {
            let mut g = Graph::inference(&self.store);
            let d = g.constant(direction_tensor(dc));
            let (sigma, color) = self.model.forward(&mut g, &points_of(pc), d)?;
            let (s, c) = (g.value(sigma).data(), g.value(color).data());
            for i in 0..pc.len() {
                let sigma = s[i] as f64;
                if !sigma.is_finite() {
                    return Err(FieldError::NonFinite("density".into()));
                }
                out.push(FieldSample { color: [c[3 * i] as f64, c[3 * i + 1] as f64, c[3 * i + 2] as f64], sigma });
            }
        }
        Ok(out)
    }

    fn density(&self, points: &[Vec3]) -> Result<Vec<f64>, FieldError> {
        let mut out = Vec::with_capacity(points.len());
        for pc in points.chunks(QUERY_CHUNK) {
            let mut g = Graph::inference(&self.store);
            let (sigma, _) = self.model.density_forward(&mut g, &points_of(pc))?;
            out.extend(g.value(sigma).data().iter().map(|&s| s as f64));
        }
        if out.iter().any(|s| !s.is_finite()) {
            return Err(FieldError::NonFinite("density".into()));
        }
        Ok(out)
    }
}
