use crate::field::Vec3;

use super::MeshError;

/// Samples at the corners of a regular lattice, x fastest.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarGrid {
    pub res: [usize; 3],
    pub min: Vec3,
    pub max: Vec3,
    pub values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(res: [usize; 3], min: Vec3, max: Vec3, values: Vec<f64>) -> Result<Self, MeshError> {
        if res.iter().any(|&r| r < 2) {
            return Err(MeshError::Invalid(format!("grid resolution {res:?} must be at least 2 per axis")));
        }
        if values.len() != res.iter().product::<usize>() {
            return Err(MeshError::Invalid(format!("{} values for resolution {res:?}", values.len())));
        }
        if (0..3).any(|a| !(max[a] > min[a])) {
            return Err(MeshError::Invalid("grid box is empty".into()));
        }
        Ok(Self { res, min, max, values })
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.res[0] * (j + self.res[1] * k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[self.index(i, j, k)]
    }

    pub fn spacing(&self) -> Vec3 {
        Vec3::from_fn(|a, _| (self.max[a] - self.min[a]) / (self.res[a] - 1) as f64)
    }

    pub fn position(&self, i: usize, j: usize, k: usize) -> Vec3 {
        let s = self.spacing();
        self.min + Vec3::new(i as f64 * s.x, j as f64 * s.y, k as f64 * s.z)
    }

    pub fn cell_diagonal(&self) -> f64 {
        self.spacing().norm()
    }
}

/// Evaluates `f` at every lattice corner of `[min, max]`, one z slab per call.
pub fn sample_grid<E>(
    f: impl Fn(&[Vec3]) -> Result<Vec<f64>, E>,
    min: Vec3,
    max: Vec3,
    res: [usize; 3],
) -> Result<ScalarGrid, E>
where
    E: From<MeshError>,
{
    let mut grid = ScalarGrid::new(res, min, max, vec![0.0; res.iter().product()])?;
    let mut slab = Vec::with_capacity(res[0] * res[1]);
    for k in 0..res[2] {
        slab.clear();
        for j in 0..res[1] {
            for i in 0..res[0] {
                slab.push(grid.position(i, j, k));
            }
        }
        let v = f(&slab)?;
        let start = grid.index(0, 0, k);
        grid.values[start..start + slab.len()].copy_from_slice(&v);
    }
    Ok(grid)
}
