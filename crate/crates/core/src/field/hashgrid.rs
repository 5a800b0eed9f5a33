//! Multiresolution hash encoding over the `[-1, 1]^3` scene box.

use rand::Rng;

use crate::diffcore::{DiffError, GatherPattern, Graph, ParamId, ParamStore, Real, Tensor, Var};

use super::FieldError;

const PRIMES: [u64; 3] = [1, 2_654_435_761, 805_459_861];

#[derive(Clone, Debug, PartialEq)]
pub struct HashGridConfig {
    pub levels: usize,
    pub log2_table_size: u32,
    pub features: usize,
    pub n_min: usize,
    pub n_max: usize,
}

impl Default for HashGridConfig {
    fn default() -> Self {
        Self { levels: 15, log2_table_size: 19, features: 2, n_min: 16, n_max: 2048 }
    }
}

impl HashGridConfig {
    /// Small tables that train in seconds on one core.
    pub fn desk() -> Self {
        Self { levels: 8, log2_table_size: 15, features: 2, n_min: 16, n_max: 256 }
    }

    pub fn output_dim(&self) -> usize {
        self.levels * self.features
    }

    /// Per-level resolutions `floor(n_min * b^l)` with `b` spanning `n_min..n_max`.
    pub fn resolutions(&self) -> Result<Vec<usize>, FieldError> {
        if self.levels == 0 || self.features == 0 || self.n_min < 1 || self.log2_table_size > 26 {
            return Err(FieldError::InvalidConfig(format!("bad hash grid config {self:?}")));
        }
        if self.levels == 1 {
            return Ok(vec![self.n_min]);
        }
        let b = ((self.n_max as f64).ln() - (self.n_min as f64).ln()) / (self.levels - 1) as f64;
        let res: Vec<usize> =
            (0..self.levels).map(|l| (self.n_min as f64 * (b * l as f64).exp() + 1e-9).floor() as usize).collect();
        if res.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FieldError::InvalidConfig(format!("resolutions not strictly increasing: {res:?}")));
        }
        Ok(res)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Level {
    pub resolution: usize,
    pub entries: usize,
    pub offset: usize,
    pub dense: bool,
}

impl Level {
    /// Row of grid vertex `(x, y, z)` in the shared table.
    pub fn index(&self, x: u64, y: u64, z: u64) -> usize {
        let local = if self.dense {
            let n = self.resolution as u64 + 1;
            x + n * (y + n * z)
        } else {
            ((x.wrapping_mul(PRIMES[0])) ^ (y.wrapping_mul(PRIMES[1])) ^ (z.wrapping_mul(PRIMES[2]))) % self.entries as u64
        };
        self.offset + local as usize
    }
}

/// All levels share one `[total_entries, F]` parameter table.
#[derive(Clone, Debug)]
pub struct HashGrid {
    pub config: HashGridConfig,
    pub levels: Vec<Level>,
    pub table: ParamId,
}

impl HashGrid {
    pub fn new<R: Real>(
        store: &mut ParamStore<R>,
        name: &str,
        config: HashGridConfig,
        rng: &mut impl Rng,
    ) -> Result<Self, FieldError> {
        let levels = Self::layout(&config)?;
        let total: usize = levels.iter().map(|l| l.entries).sum();
        let data = (0..total * config.features).map(|_| R::of(rng.gen_range(-1e-4..1e-4))).collect();
        let table = store.add(format!("{name}.table"), Tensor::new(&[total, config.features], data)?);
        Ok(Self { config, levels, table })
    }

    fn layout(config: &HashGridConfig) -> Result<Vec<Level>, FieldError> {
        let cap = 1usize << config.log2_table_size;
        let mut offset = 0;
        let mut levels = Vec::new();
        for res in config.resolutions()? {
            let dense_size = (res + 1).pow(3);
            let (entries, dense) = if dense_size <= cap { (dense_size, true) } else { (cap, false) };
            levels.push(Level { resolution: res, entries, offset, dense });
            offset += entries;
        }
        Ok(levels)
    }

    pub fn output_dim(&self) -> usize {
        self.config.output_dim()
    }

    /// Trilinear taps for each point and level. Points are clamped to the box.
    pub fn pattern<R: Real>(&self, points: &[[f64; 3]]) -> GatherPattern<R> {
        let n = points.len();
        let groups = self.levels.len();
        let mut indices = Vec::with_capacity(n * groups * 8);
        let mut weights = Vec::with_capacity(n * groups * 8);
        for p in points {
            let u = p.map(|c| (c.clamp(-1.0, 1.0) + 1.0) * 0.5);
            for level in &self.levels {
                let res = level.resolution as f64;
                let mut base = [0u64; 3];
                let mut frac = [0.0; 3];
                for a in 0..3 {
                    let s = u[a] * res;
                    let cell = s.floor().min(res - 1.0).max(0.0);
                    base[a] = cell as u64;
                    frac[a] = s - cell;
                }
                for corner in 0..8u64 {
                    let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                    let w = (if dx == 1 { frac[0] } else { 1.0 - frac[0] })
                        * (if dy == 1 { frac[1] } else { 1.0 - frac[1] })
                        * (if dz == 1 { frac[2] } else { 1.0 - frac[2] });
                    indices.push(level.index(base[0] + dx, base[1] + dy, base[2] + dz) as u32);
                    weights.push(R::of(w));
                }
            }
        }
        GatherPattern { rows: n, groups, taps: 8, indices, weights }
    }

    /// `[N, L * F]` features, level-major within each row.
    pub fn encode<R: Real>(&self, g: &mut Graph<'_, R>, points: &[[f64; 3]]) -> Result<Var, DiffError> {
        let table = g.param(self.table);
        g.weighted_gather(table, self.pattern(points))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;

    fn small() -> HashGridConfig {
        HashGridConfig { levels: 3, log2_table_size: 8, features: 2, n_min: 2, n_max: 16 }
    }

    fn grid(store: &mut ParamStore<f64>) -> HashGrid {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        HashGrid::new(store, "enc", small(), &mut rng).unwrap()
    }

    #[test]
    fn paper_defaults_give_increasing_resolutions() {
        let res = HashGridConfig::default().resolutions().unwrap();
        assert_eq!(res.len(), 15);
        assert_eq!(res[0], 16);
        assert_eq!(*res.last().unwrap(), 2048);
        let res = HashGridConfig::desk().resolutions().unwrap();
        assert_eq!((res[0], *res.last().unwrap()), (16, 256));
    }

    #[test]
    fn coarse_levels_are_dense_fine_levels_hashed() {
        let mut store = ParamStore::new();
        let g = grid(&mut store);
        assert!(g.levels[0].dense);
        assert!(!g.levels[2].dense);
        assert_eq!(g.levels[2].entries, 256);
    }

    #[test]
    fn vertex_lookup_returns_table_entry() {
        let mut store = ParamStore::new();
        let hg = grid(&mut store);
        // x = 0 is vertex 1 on the resolution-2 level.
        let p = [[0.0, -1.0, 1.0]];
        let mut g = Graph::inference(&store);
        let out = hg.encode(&mut g, &p).unwrap();
        let level = &hg.levels[0];
        let row = level.index(1, 0, 2);
        let table = store.get(hg.table);
        assert_eq!(&g.value(out).data()[0..2], table.row(row));
    }

    #[test]
    fn edge_midpoint_averages_endpoints() {
        let mut store = ParamStore::new();
        let hg = grid(&mut store);
        let level = hg.levels[0].clone();
        let (ra, rb) = (level.index(0, 1, 1), level.index(1, 1, 1));
        let t = store.get_mut(hg.table);
        let f = 2;
        t.data_mut()[level.offset * f..(level.offset + level.entries) * f].iter_mut().for_each(|x| *x = 0.0);
        t.data_mut()[ra * f..ra * f + 2].copy_from_slice(&[1.0, 4.0]);
        t.data_mut()[rb * f..rb * f + 2].copy_from_slice(&[3.0, -2.0]);
        let mut g = Graph::inference(&store);
        let out = hg.encode(&mut g, &[[-0.5, 0.0, 0.0]]).unwrap();
        assert_eq!(&g.value(out).data()[0..2], &[2.0, 1.0]);
    }

    #[test]
    fn table_gradient_equals_trilinear_weight() {
        let mut store = ParamStore::new();
        let hg = grid(&mut store);
        let p = [[0.13, -0.42, 0.77]];
        let pat: GatherPattern<f64> = hg.pattern(&p);
        let mut g = Graph::new(&store);
        let enc = hg.encode(&mut g, &p).unwrap();
        let first = g.slice_cols(enc, 0, 1).unwrap();
        let loss = g.sum(first);
        let grads = g.backward(loss).unwrap().param(hg.table);
        for tap in 0..8 {
            let row = pat.indices[tap] as usize;
            assert_relative_eq!(grads.data()[row * 2], pat.weights[tap], epsilon = 1e-12);
        }
        // Central differences on one touched entry.
        let row = pat.indices[5] as usize;
        let h = 1e-4;
        let eval = |delta: f64| {
            let mut s = store.clone();
            s.get_mut(hg.table).data_mut()[row * 2] += delta;
            let mut g = Graph::inference(&s);
            let e = hg.encode(&mut g, &p).unwrap();
            g.value(e).data()[0]
        };
        assert_relative_eq!((eval(h) - eval(-h)) / (2.0 * h), pat.weights[5], epsilon = 1e-8);
    }

    #[test]
    fn weights_partition_unity() {
        let mut store = ParamStore::new();
        let hg = grid(&mut store);
        let pat: GatherPattern<f64> = hg.pattern(&[[0.3, 0.99, -1.0], [1.0, 1.0, 1.0]]);
        for chunk in pat.weights.chunks(8) {
            assert_relative_eq!(chunk.iter().sum::<f64>(), 1.0, epsilon = 1e-12);
        }
    }
}
