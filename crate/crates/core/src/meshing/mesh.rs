use std::collections::HashMap;

use crate::field::Vec3;

use super::MeshError;

/// Zero-area tolerance for triangles.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TriMesh {
    pub positions: Vec<Vec3>,
    pub triangles: Vec<[u32; 3]>,
    pub normals: Option<Vec<Vec3>>,
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn validate(&self) -> Result<(), MeshError> {
        let n = self.positions.len() as u32;
        for (f, t) in self.triangles.iter().enumerate() {
            if t.iter().any(|&i| i >= n) {
                return Err(MeshError::Invalid(format!("face {f} indexes past {n} vertices")));
            }
            if self.area(f) <= DEGENERATE_AREA {
                return Err(MeshError::Invalid(format!("face {f} is degenerate")));
            }
        }
        if let Some(normals) = &self.normals {
            if normals.len() != self.positions.len() {
                return Err(MeshError::Invalid("normal count differs from vertex count".into()));
            }
        }
        Ok(())
    }

    pub fn corners(&self, f: usize) -> [Vec3; 3] {
        self.triangles[f].map(|i| self.positions[i as usize])
    }

    /// Unnormalized `(b - a) x (c - a)`.
    pub fn face_cross(&self, f: usize) -> Vec3 {
        let [a, b, c] = self.corners(f);
        (b - a).cross(&(c - a))
    }

    pub fn area(&self, f: usize) -> f64 {
        0.5 * self.face_cross(f).norm()
    }

    pub fn face_normal(&self, f: usize) -> Vec3 {
        let c = self.face_cross(f);
        let n = c.norm();
        if n > 0.0 {
            c / n
        } else {
            Vec3::zeros()
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len()).map(|f| self.area(f)).sum()
    }

    /// Area-weighted geometric vertex normals.
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut acc = vec![Vec3::zeros(); self.positions.len()];
        for (f, t) in self.triangles.iter().enumerate() {
            let c = self.face_cross(f);
            for &i in t {
                acc[i as usize] += c;
            }
        }
        acc.into_iter().map(|n| if n.norm() > 0.0 { n.normalize() } else { n }).collect()
    }

    /// Undirected edges with the number of faces using each.
    pub fn edge_valence(&self) -> HashMap<(u32, u32), usize> {
        let mut map = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *map.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        map
    }

    /// `V - E + F` over referenced vertices.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.positions.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_valence().len() as i64 + self.triangles.len() as i64
    }

    /// Every edge is shared by exactly two faces.
    pub fn is_closed(&self) -> bool {
        self.edge_valence().values().all(|&c| c == 2)
    }

    /// Drops faces at or below the area tolerance and vertices no face uses.
    pub fn remove_degenerate(&mut self) {
        let keep: Vec<bool> = (0..self.triangles.len()).map(|f| self.area(f) > DEGENERATE_AREA).collect();
        let mut k = keep.iter();
        self.triangles.retain(|_| *k.next().unwrap());
        let mut remap = vec![u32::MAX; self.positions.len()];
        let mut positions = Vec::new();
        let mut normals = self.normals.as_ref().map(|_| Vec::new());
        for t in &mut self.triangles {
            for i in t.iter_mut() {
                if remap[*i as usize] == u32::MAX {
                    remap[*i as usize] = positions.len() as u32;
                    positions.push(self.positions[*i as usize]);
                    if let (Some(out), Some(src)) = (normals.as_mut(), self.normals.as_ref()) {
                        out.push(src[*i as usize]);
                    }
                }
                *i = remap[*i as usize];
            }
        }
        self.positions = positions;
        self.normals = normals;
    }
}

#[cfg(test)]
pub(crate) fn tetrahedron() -> TriMesh {
    TriMesh {
        positions: vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::z()],
        triangles: vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]],
        normals: None,
    }
}
