//! Two-branch surface network: geometry (truncated signed distance and a
//! normal) and appearance (an 8-channel feature), plus the small appearance
//! network that turns features into color.

use std::path::Path;

use rand::Rng;

use crate::diffcore::checkpoint;
use crate::diffcore::nn::Mlp;
use crate::diffcore::{DiffError, Graph, ParamStore, Real, Tensor, Var};
use crate::field::hashgrid::{HashGrid, HashGridConfig};
use crate::field::nerf::{direction_tensor, points_of, DIR_ENCODING_DIM};
use crate::field::Vec3;

use super::SsanError;

pub const FEATURES: usize = 8;

/// Fixed radial term added before the squashing: `slope * (|x| - radius)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialPrior {
    pub radius: f64,
    pub slope: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SsanConfig {
    pub geometry_grid: HashGridConfig,
    pub appearance_grid: HashGridConfig,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub eta_hidden: usize,
    pub eta_layers: usize,
    /// One encoder feeds both heads.
    pub shared_encoder: bool,
    pub prior: Option<RadialPrior>,
    /// Bound on the signed distance output.
    pub truncation: f64,
}

impl Default for SsanConfig {
    fn default() -> Self {
        Self {
            geometry_grid: HashGridConfig::default(),
            appearance_grid: HashGridConfig::default(),
            hidden: 64,
            hidden_layers: 1,
            eta_hidden: 32,
            eta_layers: 4,
            shared_encoder: false,
            prior: Some(RadialPrior { radius: 1.0, slope: 3.0 }),
            truncation: 0.1,
        }
    }
}

impl SsanConfig {
    pub fn desk() -> Self {
        let grid = HashGridConfig { log2_table_size: 16, ..HashGridConfig::desk() };
        Self { geometry_grid: grid.clone(), appearance_grid: grid, ..Self::default() }
    }

    fn meta(&self) -> Vec<(&'static str, f64)> {
        let g = &self.geometry_grid;
        let a = &self.appearance_grid;
        let (pr, ps) = self.prior.map(|p| (p.radius, p.slope)).unwrap_or((0.0, 0.0));
        vec![
            ("geo.levels", g.levels as f64),
            ("geo.log2_table_size", g.log2_table_size as f64),
            ("geo.features", g.features as f64),
            ("geo.n_min", g.n_min as f64),
            ("geo.n_max", g.n_max as f64),
            ("app.levels", a.levels as f64),
            ("app.log2_table_size", a.log2_table_size as f64),
            ("app.features", a.features as f64),
            ("app.n_min", a.n_min as f64),
            ("app.n_max", a.n_max as f64),
            ("hidden", self.hidden as f64),
            ("hidden_layers", self.hidden_layers as f64),
            ("eta_hidden", self.eta_hidden as f64),
            ("eta_layers", self.eta_layers as f64),
            ("shared_encoder", self.shared_encoder as u8 as f64),
            ("prior", self.prior.is_some() as u8 as f64),
            ("prior_radius", pr),
            ("prior_slope", ps),
            ("truncation", self.truncation),
        ]
    }

    fn from_meta<R: Real>(t: &[(String, Tensor<R>)]) -> Result<Self, DiffError> {
        let f = |k: &str| checkpoint::meta(t, k);
        let u = |k: &str| f(k).map(|v| v as usize);
        let grid = |p: &str| -> Result<HashGridConfig, DiffError> {
            Ok(HashGridConfig {
                levels: u(&format!("{p}.levels"))?,
                log2_table_size: u(&format!("{p}.log2_table_size"))? as u32,
                features: u(&format!("{p}.features"))?,
                n_min: u(&format!("{p}.n_min"))?,
                n_max: u(&format!("{p}.n_max"))?,
            })
        };
        Ok(Self {
            geometry_grid: grid("geo")?,
            appearance_grid: grid("app")?,
            hidden: u("hidden")?,
            hidden_layers: u("hidden_layers")?,
            eta_hidden: u("eta_hidden")?,
            eta_layers: u("eta_layers")?,
            shared_encoder: f("shared_encoder")? != 0.0,
            prior: (f("prior")? != 0.0).then(|| RadialPrior {
                radius: f("prior_radius").unwrap_or(1.0),
                slope: f("prior_slope").unwrap_or(0.0),
            }),
            truncation: f("truncation")? as f64,
        })
    }
}

/// Appearance network: `(features, normal, encoded direction) -> rgb`.
#[derive(Clone, Debug)]
pub struct Eta {
    pub mlp: Mlp,
    pub hidden: usize,
    pub layers: usize,
}

pub const ETA_INPUTS: usize = FEATURES + 3 + DIR_ENCODING_DIM;

impl Eta {
    pub fn new<R: Real>(store: &mut ParamStore<R>, hidden: usize, layers: usize, rng: &mut impl Rng) -> Self {
        let mut widths = vec![ETA_INPUTS];
        widths.extend(std::iter::repeat_n(hidden, layers));
        widths.push(3);
        Self { mlp: Mlp::new(store, "eta", &widths, false, rng), hidden, layers }
    }

    pub fn forward<R: Real>(&self, g: &mut Graph<'_, R>, features: Var, normals: Var, dirs: Var) -> Result<Var, DiffError> {
        let x = g.concat(&[features, normals, dirs])?;
        let y = self.mlp.forward(g, x)?;
        Ok(g.sigmoid(y))
    }
}

/// Standalone appearance network, as exported next to a mesh.
#[derive(Clone, Debug)]
pub struct EtaNet {
    pub store: ParamStore<f32>,
    pub eta: Eta,
}

impl EtaNet {
    pub fn save(&self, path: &Path) -> Result<(), SsanError> {
        let meta = [("eta_hidden", self.eta.hidden as f64), ("eta_layers", self.eta.layers as f64)];
        checkpoint::save_file(path, &self.store, &meta)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SsanError> {
        let tensors = checkpoint::load_file::<f32>(path)?;
        let hidden = checkpoint::meta(&tensors, "eta_hidden")? as usize;
        let layers = checkpoint::meta(&tensors, "eta_layers")? as usize;
        let mut store = ParamStore::new();
        let eta = Eta::new(&mut store, hidden, layers, &mut crate::seed::rng(0, &[]));
        store.load_named(&tensors)?;
        if let Some(name) = store.first_non_finite() {
            return Err(SsanError::NonFinite(format!("appearance network weight '{name}'")));
        }
        Ok(Self { store, eta })
    }

    /// Colors for a batch of `(feature, normal, view direction)` triples.
    pub fn shade(&self, features: &[[f32; FEATURES]], normals: &[Vec3], dirs: &[Vec3]) -> Result<Vec<[f32; 3]>, SsanError> {
        let n = features.len();
        if n == 0 {
            return Ok(Vec::new());
        }
        let mut g = Graph::inference(&self.store);
        let f = g.constant(Tensor::new(&[n, FEATURES], features.iter().flatten().copied().collect())?);
        let nn = g.constant(Tensor::new(&[n, 3], normals.iter().flat_map(|v| [v.x as f32, v.y as f32, v.z as f32]).collect())?);
        let d = g.constant(direction_tensor(dirs));
        let c = self.eta.forward(&mut g, f, nn, d)?;
        Ok(g.value(c).data().chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect())
    }
}

#[derive(Clone, Debug)]
pub struct SsanModel {
    pub config: SsanConfig,
    pub geometry_grid: HashGrid,
    /// Absent when the encoder is shared.
    pub appearance_grid: Option<HashGrid>,
    pub geometry: Mlp,
    pub appearance: Mlp,
    pub eta: Eta,
}

/// Geometry branch outputs for a batch.
#[derive(Clone, Copy, Debug)]
pub struct GeometryVars {
    /// `[N, 1]` truncated signed distance.
    pub t: Var,
    /// `[N, 3]` unit normal.
    pub n: Var,
}

impl SsanModel {
    /// With `zero_heads`, the signed distance starts at the prior alone (zero
    /// without one), normals at `+z` and features at one half.
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        config: SsanConfig,
        zero_heads: bool,
        rng: &mut impl Rng,
    ) -> Result<Self, SsanError> {
        let geometry_grid = HashGrid::new(store, "ssan.geo_grid", config.geometry_grid.clone(), rng)?;
        let appearance_grid = if config.shared_encoder {
            None
        } else {
            Some(HashGrid::new(store, "ssan.app_grid", config.appearance_grid.clone(), rng)?)
        };
        let widths = |inputs: usize, outputs: usize| {
            let mut w = vec![inputs + 3];
            w.extend(std::iter::repeat_n(config.hidden, config.hidden_layers));
            w.push(outputs);
            w
        };
        let geometry = Mlp::new(store, "ssan.geo", &widths(geometry_grid.output_dim(), 4), zero_heads, rng);
        let app_in = appearance_grid.as_ref().unwrap_or(&geometry_grid).output_dim();
        let appearance = Mlp::new(store, "ssan.app", &widths(app_in, FEATURES), zero_heads, rng);
        if zero_heads {
            let bias = store.get_mut(geometry.head().bias);
            bias.data_mut()[3] = R::one();
        }
        let eta = Eta::new(store, config.eta_hidden, config.eta_layers, rng);
        Ok(Self { config, geometry_grid, appearance_grid, geometry, appearance, eta })
    }

    fn input<R: Real>(g: &mut Graph<'_, R>, grid: &HashGrid, points: &[[f64; 3]]) -> Result<Var, DiffError> {
        let enc = grid.encode(g, points)?;
        let x = g.constant(Tensor::new(&[points.len(), 3], points.iter().flatten().map(|&c| R::of(c.clamp(-1.0, 1.0))).collect())?);
        g.concat(&[enc, x])
    }

    pub fn geometry<R: Real>(&self, g: &mut Graph<'_, R>, points: &[[f64; 3]]) -> Result<GeometryVars, DiffError> {
        let x = Self::input(g, &self.geometry_grid, points)?;
        let h = self.geometry.forward(g, x)?;
        let mut u = g.slice_cols(h, 0, 1)?;
        if let Some(prior) = self.config.prior {
            let p: Vec<R> = points
                .iter()
                .map(|p| R::of(prior.slope * (Vec3::new(p[0], p[1], p[2]).norm() - prior.radius)))
                .collect();
            let p = g.constant(Tensor::new(&[points.len(), 1], p)?);
            u = g.add(u, p)?;
        }
        let squashed = g.tanh(u);
        let t = g.scale(squashed, self.config.truncation);
        let raw_n = g.slice_cols(h, 1, 3)?;
        let n = g.normalize(raw_n);
        Ok(GeometryVars { t, n })
    }

    /// `[N, 8]` features in `[0, 1]`.
    pub fn appearance<R: Real>(&self, g: &mut Graph<'_, R>, points: &[[f64; 3]]) -> Result<Var, DiffError> {
        let grid = self.appearance_grid.as_ref().unwrap_or(&self.geometry_grid);
        let x = Self::input(g, grid, points)?;
        let h = self.appearance.forward(g, x)?;
        Ok(g.sigmoid(h))
    }
}

/// Evaluated outputs at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsanOutput {
    pub t: f64,
    pub n: Vec3,
    pub f: [f64; FEATURES],
}

const CHUNK: usize = 16384;

/// Trained surface network in `f32`.
#[derive(Clone, Debug)]
pub struct SsanNet {
    pub store: ParamStore<f32>,
    pub model: SsanModel,
}

impl SsanNet {
    pub fn new(config: SsanConfig, seed: u64) -> Result<Self, SsanError> {
        let mut store = ParamStore::new();
        let model = SsanModel::new(&mut store, config, true, &mut crate::seed::rng(seed, &[0x55]))?;
        Ok(Self { store, model })
    }

    /// Truncated signed distance at each point.
    pub fn tsdf(&self, points: &[Vec3]) -> Result<Vec<f64>, SsanError> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let mut g = Graph::inference(&self.store);
            let geo = self.model.geometry(&mut g, &points_of(chunk))?;
            out.extend(g.value(geo.t).data().iter().map(|&v| v as f64));
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(SsanError::NonFinite("geometry branch".into()));
        }
        Ok(out)
    }

    pub fn query(&self, points: &[Vec3]) -> Result<Vec<SsanOutput>, SsanError> {
        let mut out = Vec::with_capacity(points.len());
        for chunk in points.chunks(CHUNK) {
            let pts = points_of(chunk);
            let mut g = Graph::inference(&self.store);
            let geo = self.model.geometry(&mut g, &pts)?;
            let f = self.model.appearance(&mut g, &pts)?;
            let (t, n, f) = (g.value(geo.t).data(), g.value(geo.n).data(), g.value(f).data());
            for i in 0..chunk.len() {
                let raw = Vec3::new(n[3 * i] as f64, n[3 * i + 1] as f64, n[3 * i + 2] as f64);
                let o = SsanOutput {
                    t: t[i] as f64,
                    // A zero head output has no direction; report +z.
                    n: if raw == Vec3::zeros() { Vec3::z() } else { raw.normalize() },
                    f: std::array::from_fn(|c| f[FEATURES * i + c] as f64),
                };
                if !o.t.is_finite() || !o.n.iter().all(|v| v.is_finite()) {
                    return Err(SsanError::NonFinite("geometry branch".into()));
                }
                if !o.f.iter().all(|v| v.is_finite()) {
                    return Err(SsanError::NonFinite("appearance branch".into()));
                }
                out.push(o);
            }
        }
        Ok(out)
    }

    pub fn eta_net(&self) -> EtaNet {
        let mut store = ParamStore::new();
        let eta = Eta::new(&mut store, self.model.eta.hidden, self.model.eta.layers, &mut crate::seed::rng(0, &[]));
        let named: Vec<(String, Tensor<f32>)> = self
            .store
            .named()
            .filter(|(n, _)| n.starts_with("eta."))
            .map(|(n, t)| (n.to_string(), t.clone()))
            .collect();
        store.load_named(&named).expect("appearance network layout matches");
        EtaNet { store, eta }
    }

    pub fn save(&self, path: &Path) -> Result<(), SsanError> {
        checkpoint::save_file(path, &self.store, &self.model.config.meta())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, SsanError> {
        let tensors = checkpoint::load_file::<f32>(path)?;
        let config = SsanConfig::from_meta(&tensors)?;
        let mut net = Self::new(config, 0)?;
        net.store.load_named(&tensors)?;
        if let Some(name) = net.store.first_non_finite() {
            return Err(SsanError::NonFinite(format!("weight '{name}'")));
        }
        Ok(net)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(prior: bool) -> SsanConfig {
        let grid = HashGridConfig { levels: 3, log2_table_size: 10, features: 2, n_min: 4, n_max: 16 };
        SsanConfig {
            geometry_grid: grid.clone(),
            appearance_grid: grid,
            hidden: 8,
            hidden_layers: 1,
            eta_hidden: 8,
            eta_layers: 2,
            shared_encoder: false,
            prior: prior.then_some(RadialPrior { radius: 1.0, slope: 3.0 }),
            truncation: 0.1,
        }
    }

    fn probe_points() -> Vec<Vec3> {
        let mut rng = crate::seed::rng(11, &[]);
        (0..200).map(|_| Vec3::from_fn(|_, _| rng.gen_range(-1.2..1.2))).collect()
    }

    #[test]
    fn zeroed_heads_give_zero_distance() {
        let net = SsanNet::new(tiny(false), 1).unwrap();
        for o in net.query(&probe_points()).unwrap() {
            assert_eq!(o.t, 0.0);
            assert_eq!(o.n, Vec3::z());
            assert!(o.f.iter().all(|&f| f == 0.5));
        }
    }

    #[test]
    fn outputs_respect_bounds_for_random_weights() {
        let mut store = ParamStore::<f32>::new();
        let model = SsanModel::new(&mut store, tiny(true), false, &mut crate::seed::rng(2, &[])).unwrap();
        let net = SsanNet { store, model };
        for o in net.query(&probe_points()).unwrap() {
            assert!(o.t.abs() <= 0.1);
            assert!((o.n.norm() - 1.0).abs() < 1e-6);
            assert!(o.f.iter().all(|f| (0.0..=1.0).contains(f)));
        }
    }

    #[test]
    fn prior_alone_is_negative_near_the_center() {
        let net = SsanNet::new(tiny(true), 1).unwrap();
        let t = net.tsdf(&[Vec3::zeros(), Vec3::new(1.0, 1.0, 1.0)]).unwrap();
        assert!(t[0] < -0.09 && t[1] > 0.0);
    }

    #[test]
    fn checkpoint_and_eta_export_round_trip() {
        let mut store = ParamStore::<f32>::new();
        let model = SsanModel::new(&mut store, tiny(true), false, &mut crate::seed::rng(3, &[])).unwrap();
        let net = SsanNet { store, model };
        let dir = tempfile::tempdir().unwrap();
        net.save(&dir.path().join("s.ckpt")).unwrap();
        let back = SsanNet::load(&dir.path().join("s.ckpt")).unwrap();
        assert_eq!(back.model.config, net.model.config);
        let pts = probe_points();
        assert_eq!(back.query(&pts).unwrap(), net.query(&pts).unwrap());

        let eta = net.eta_net();
        eta.save(&dir.path().join("eta.ckpt")).unwrap();
        let eta2 = EtaNet::load(&dir.path().join("eta.ckpt")).unwrap();
        let f = [[0.3f32; FEATURES], [0.9; FEATURES]];
        let n = [Vec3::x(), Vec3::z()];
        let d = [Vec3::y(), -Vec3::z()];
        assert_eq!(eta.shade(&f, &n, &d).unwrap(), eta2.shade(&f, &n, &d).unwrap());
    }

    #[test]
    fn shared_encoder_has_one_grid() {
        let mut store = ParamStore::<f64>::new();
        let cfg = SsanConfig { shared_encoder: true, ..tiny(false) };
        let m = SsanModel::new(&mut store, cfg, true, &mut crate::seed::rng(0, &[])).unwrap();
        assert!(m.appearance_grid.is_none());
        assert!(store.find("ssan.app_grid.table").is_none());
    }
}
