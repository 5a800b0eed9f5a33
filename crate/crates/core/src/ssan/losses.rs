//! Distillation losses. Every loss is a mean over rows of its per-ray term.

use crate::diffcore::{DiffError, Graph, Real, Tensor, Var};
use crate::field::Vec3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub surface: f64,
    pub gradient_norm: f64,
    pub smoothness: f64,
    pub orientation: f64,
    pub color: f64,
    /// Points in front of the outside percentile are pushed to `+epsilon`.
    pub free_space: f64,
    /// Points every view places behind the surface are kept at `t <= 0`.
    pub interior: f64,
    pub epsilon: f64,
    /// Target gradient norm.
    pub n_c: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            surface: 1.0,
            gradient_norm: 0.1,
            smoothness: 0.01,
            orientation: 0.01,
            color: 1.0,
            free_space: 1.0,
            interior: 1.0,
            epsilon: 0.1,
            n_c: 10.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self, truncation: f64) -> Result<(), String> {
        let w = [self.surface, self.gradient_norm, self.smoothness, self.orientation, self.color, self.free_space, self.interior];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            return Err(format!("loss weights must be finite and nonnegative: {self:?}"));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0 && self.epsilon <= truncation) {
            return Err(format!("epsilon {} must lie in (0, {truncation}]", self.epsilon));
        }
        if !(self.n_c.is_finite() && self.n_c >= 0.0) {
            return Err(format!("n_c {} must be finite and nonnegative", self.n_c));
        }
        Ok(())
    }
}

/// Non-graph central differences of a scalar field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdNormal {
    pub normal: Vec3,
    pub gradient: Vec3,
    /// The gradient vanished; `normal` is zero.
    pub zero: bool,
}

pub fn finite_diff_normal<E>(f: impl Fn(&[Vec3]) -> Result<Vec<f64>, E>, x: &Vec3, h: f64) -> Result<FdNormal, E> {
    let mut pts = Vec::with_capacity(6);
    for a in 0..3 {
        let mut e = Vec3::zeros();
        e[a] = h;
        pts.push(x + e);
        pts.push(x - e);
    }
    let v = f(&pts)?;
    let gradient = Vec3::new(v[0] - v[1], v[2] - v[3], v[4] - v[5]) / (2.0 * h);
    let n = gradient.norm();
    let zero = n == 0.0;
    let normal = if zero { Vec3::zeros() } else { gradient / n };
    Ok(FdNormal { normal, gradient, zero })
}

/// The six offset points per input, grouped axis by axis: all `+x`, all `-x`, all `+y`, ...
pub fn fd_stencil(points: &[[f64; 3]], h: f64) -> Vec<[f64; 3]> {
    let mut out = Vec::with_capacity(points.len() * 6);
    for a in 0..3 {
        for s in [h, -h] {
            out.extend(points.iter().map(|p| {
                let mut q = *p;
                q[a] += s;
                q
            }));
        }
    }
    out
}

/// `[N, 3]` central-difference gradient from a `[6N, 1]` column laid out by [`fd_stencil`].
pub fn fd_gradient<R: Real>(g: &mut Graph<'_, R>, values: Var, n: usize, h: f64) -> Result<Var, DiffError> {
    let mut cols = Vec::with_capacity(3);
    for a in 0..3 {
        let plus = g.slice_rows(values, 2 * a * n, n)?;
        let minus = g.slice_rows(values, (2 * a + 1) * n, n)?;
        let d = g.sub(plus, minus)?;
        cols.push(g.scale(d, 1.0 / (2.0 * h)));
    }
    g.concat(&cols)
}

fn column<R: Real>(g: &mut Graph<'_, R>, values: impl Iterator<Item = f64>, n: usize) -> Result<Var, DiffError> {
    let data: Vec<R> = values.map(R::of).collect();
    let cols = data.len() / n.max(1);
    Ok(g.constant(Tensor::new(&[n, cols], data)?))
}

/// `(t16 - eps)^2 + t50^2 + (t84 + eps)^2`, averaged over rays.
pub fn surface_loss<R: Real>(g: &mut Graph<'_, R>, t16: Var, t50: Var, t84: Var, eps: f64) -> Result<Var, DiffError> {
    let a = g.shift(t16, -eps);
    let a = g.square(a);
    let b = g.square(t50);
    let c = g.shift(t84, eps);
    let c = g.square(c);
    let ab = g.add(a, b)?;
    let s = g.add(ab, c)?;
    Ok(g.mean(s))
}

/// `(|grad| - n_c)^2`, averaged. A zero gradient contributes `n_c^2`.
pub fn gradient_norm_loss<R: Real>(g: &mut Graph<'_, R>, grad: Var, n_c: f64) -> Var {
    let norm = g.row_norm(grad);
    let d = g.shift(norm, -n_c);
    let sq = g.square(d);
    g.mean(sq)
}

/// `|N - n_hat|^2` over rows where `N` is defined; `None` if there are none.
pub fn smoothness_loss<R: Real>(g: &mut Graph<'_, R>, normal: Var, n_hat: Var, valid: &[bool]) -> Result<Option<Var>, DiffError> {
    let count = valid.iter().filter(|&&v| v).count();
    if count == 0 {
        return Ok(None);
    }
    let d = g.sub(normal, n_hat)?;
    let sq = g.square(d);
    let per_ray = g.sum_cols(sq);
    let mask = column(g, valid.iter().map(|&v| if v { 1.0 } else { 0.0 }), valid.len())?;
    let masked = g.mul(per_ray, mask)?;
    let total = g.sum(masked);
    Ok(Some(g.scale(total, 1.0 / count as f64)))
}

/// `max(0, N . d)`, averaged.
pub fn orientation_loss<R: Real>(g: &mut Graph<'_, R>, normal: Var, dirs: &[Vec3]) -> Result<Var, DiffError> {
    let d = column(g, dirs.iter().flat_map(|d| [d.x, d.y, d.z]), dirs.len())?;
    let prod = g.mul(normal, d)?;
    let dot = g.sum_cols(prod);
    let hinge = g.relu(dot);
    Ok(g.mean(hinge))
}

/// `|c_hat - c|^2`, averaged over rays.
pub fn color_loss<R: Real>(g: &mut Graph<'_, R>, pred: Var, target: &[[f64; 3]]) -> Result<Var, DiffError> {
    let t = column(g, target.iter().flatten().copied(), target.len())?;
    let d = g.sub(pred, t)?;
    let sq = g.square(d);
    let per_ray = g.sum_cols(sq);
    Ok(g.mean(per_ray))
}

/// `(t - eps)^2`, averaged.
pub fn free_space_loss<R: Real>(g: &mut Graph<'_, R>, t: Var, eps: f64) -> Var {
    let d = g.shift(t, -eps);
    let sq = g.square(d);
    g.mean(sq)
}

/// `max(t, 0)^2`, averaged.
pub fn interior_loss<R: Real>(g: &mut Graph<'_, R>, t: Var) -> Var {
    let pos = g.relu(t);
    let sq = g.square(pos);
    g.mean(sq)
}

/// Rows whose gradient is exactly zero.
pub fn zero_rows<R: Real>(g: &Graph<'_, R>, grad: Var) -> Vec<bool> {
    g.value(grad).data().chunks_exact(3).map(|r| r.iter().all(|&x| x == R::zero())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::ParamStore;
    use approx::assert_relative_eq;

    fn col(g: &mut Graph<'_, f64>, v: &[f64]) -> Var {
        g.constant(Tensor::new(&[v.len(), 1], v.to_vec()).unwrap())
    }

    fn rows3(g: &mut Graph<'_, f64>, v: &[[f64; 3]]) -> Var {
        g.constant(Tensor::from_rows(v))
    }

    #[test]
    fn linear_field_normal_is_exact() {
        let f = |p: &[Vec3]| Ok::<_, ()>(p.iter().map(|x| 0.05 * x.z).collect());
        let n = finite_diff_normal(f, &Vec3::new(0.2, -0.3, 0.1), 1e-3).unwrap();
        assert_relative_eq!(n.normal, Vec3::z(), epsilon = 1e-12);
        assert_relative_eq!(n.gradient.norm(), 0.05, epsilon = 1e-12);
        assert!(!n.zero);
    }

    #[test]
    fn sphere_sdf_normal_is_radial() {
        let f = |p: &[Vec3]| Ok::<_, ()>(p.iter().map(|x| x.norm() - 0.5).collect());
        let mut rng = crate::seed::rng(4, &[]);
        for _ in 0..100 {
            use rand::Rng;
            let x = Vec3::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            if x.norm() < 0.05 {
                continue;
            }
            let n = finite_diff_normal(f, &x, 1e-3).unwrap();
            assert!((n.normal - x.normalize()).norm() < 1e-3);
        }
    }

    #[test]
    fn constant_field_is_flagged() {
        let f = |p: &[Vec3]| Ok::<_, ()>(vec![0.03; p.len()]);
        let n = finite_diff_normal(f, &Vec3::zeros(), 1e-3).unwrap();
        assert!(n.zero);
        assert_eq!(n.normal, Vec3::zeros());
    }

    #[test]
    fn surface_loss_hand_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let (a, b, c) = (col(&mut g, &[0.1, 0.1]), col(&mut g, &[0.0, 0.0]), col(&mut g, &[-0.1, -0.1]));
        let l = surface_loss(&mut g, a, b, c, 0.1).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let z = col(&mut g, &[0.0, 0.0, 0.0]);
        let l = surface_loss(&mut g, z, z, z, 0.1).unwrap();
        assert_relative_eq!(g.value(l).item(), 0.02, epsilon = 1e-15);
    }

    #[test]
    fn gradient_norm_loss_hand_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let exact = rows3(&mut g, &[[6.0, 8.0, 0.0], [0.0, 0.0, -10.0]]);
        let l = gradient_norm_loss(&mut g, exact, 10.0);
        assert_eq!(g.value(l).item(), 0.0);
        let zero = rows3(&mut g, &[[0.0; 3]]);
        let l = gradient_norm_loss(&mut g, zero, 10.0);
        assert_eq!(g.value(l).item(), 100.0);
        let slope5 = rows3(&mut g, &[[0.0, 5.0, 0.0]]);
        let l = gradient_norm_loss(&mut g, slope5, 10.0);
        assert_eq!(g.value(l).item(), 25.0);
    }

    #[test]
    fn smoothness_loss_hand_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let n = rows3(&mut g, &[[0.0, 0.0, 1.0], [1.0, 0.0, 0.0]]);
        let l = smoothness_loss(&mut g, n, n, &[true, true]).unwrap().unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let up = rows3(&mut g, &[[0.0, 0.0, 1.0], [0.0, 0.0, 0.0]]);
        let down = rows3(&mut g, &[[0.0, 0.0, -1.0], [0.0, 1.0, 0.0]]);
        // The second row is a zero gradient and is skipped.
        let l = smoothness_loss(&mut g, up, down, &[true, false]).unwrap().unwrap();
        assert_eq!(g.value(l).item(), 4.0);
        assert!(smoothness_loss(&mut g, up, down, &[false, false]).unwrap().is_none());
    }

    #[test]
    fn orientation_loss_hand_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let d = Vec3::new(0.0, 0.6, 0.8);
        let back = rows3(&mut g, &[[0.0, -0.6, -0.8]]);
        let l = orientation_loss(&mut g, back, &[d]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let same = rows3(&mut g, &[[0.0, 0.6, 0.8]]);
        let l = orientation_loss(&mut g, same, &[d]).unwrap();
        assert_relative_eq!(g.value(l).item(), 1.0, epsilon = 1e-15);
        let perp = rows3(&mut g, &[[1.0, 0.0, 0.0]]);
        let l = orientation_loss(&mut g, perp, &[d]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
    }

    #[test]
    fn color_and_free_space_hand_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let c = rows3(&mut g, &[[0.2, 0.4, 0.6]]);
        let l = color_loss(&mut g, c, &[[0.2, 0.4, 0.6]]).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let black = rows3(&mut g, &[[0.0; 3]]);
        let l = color_loss(&mut g, black, &[[1.0, 0.0, 0.0]]).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
        let t = col(&mut g, &[0.1, 0.0]);
        let l = free_space_loss(&mut g, t, 0.1);
        assert_relative_eq!(g.value(l).item(), 0.005, epsilon = 1e-15);
        let t = col(&mut g, &[0.04, -0.3]);
        let l = interior_loss(&mut g, t);
        assert_relative_eq!(g.value(l).item(), 0.0008, epsilon = 1e-15);
    }

    #[test]
    fn fd_gradient_matches_stencil_layout() {
        let pts = [[0.1, 0.2, 0.3], [-0.4, 0.0, 0.5]];
        let st = fd_stencil(&pts, 1e-3);
        let f = |p: &[f64; 3]| 2.0 * p[0] - 3.0 * p[1] + 0.5 * p[2];
        let store = ParamStore::<f64>::new();
        let mut g = Graph::inference(&store);
        let v = col(&mut g, &st.iter().map(f).collect::<Vec<_>>());
        let grad = fd_gradient(&mut g, v, 2, 1e-3).unwrap();
        for row in g.value(grad).data().chunks(3) {
            assert_relative_eq!(row[0], 2.0, epsilon = 1e-9);
            assert_relative_eq!(row[1], -3.0, epsilon = 1e-9);
            assert_relative_eq!(row[2], 0.5, epsilon = 1e-9);
        }
    }

    #[test]
    fn weights_validate() {
        assert!(LossWeights::default().validate(0.1).is_ok());
        assert!(LossWeights { epsilon: 0.2, ..Default::default() }.validate(0.1).is_err());
        assert!(LossWeights { surface: -1.0, ..Default::default() }.validate(0.1).is_err());
        assert!(LossWeights { color: f64::NAN, ..Default::default() }.validate(0.1).is_err());
    }
}
