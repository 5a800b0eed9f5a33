use std::collections::HashMap;

use crate::field::Vec3;

use super::grid::ScalarGrid;
use super::mesh::TriMesh;
use super::tables::{CORNER_OFFSETS, EDGE_CORNERS, EDGE_TABLE, TRI_TABLE};
use super::MeshError;

/// Axis of each cube edge and the corner it starts from.
fn edge_key(grid: &ScalarGrid, cell: [usize; 3], edge: usize) -> u64 {
    let (a, b) = EDGE_CORNERS[edge];
    let (oa, ob) = (CORNER_OFFSETS[a], CORNER_OFFSETS[b]);
    let lo: [usize; 3] = std::array::from_fn(|i| cell[i] + oa[i].min(ob[i]));
    let axis = (0..3).find(|&i| oa[i] != ob[i]).expect("edge spans one axis");
    grid.index(lo[0], lo[1], lo[2]) as u64 * 3 + axis as u64
}

/// Isosurface at `iso`. Corners below `iso` are inside; faces wind
/// counter-clockwise seen from the outside. Vertices on a shared lattice edge
/// are emitted once.
pub fn marching_cubes(grid: &ScalarGrid, iso: f64) -> Result<TriMesh, MeshError> {
    if let Some(i) = grid.values.iter().position(|v| v.is_nan()) {
        return Err(MeshError::NonFinite(format!("grid sample {i} is NaN")));
    }
    let mut mesh = TriMesh::default();
    let mut vertex_of: HashMap<u64, u32> = HashMap::new();
    let [nx, ny, nz] = grid.res;
    for k in 0..nz - 1 {
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let cell = [i, j, k];
                let v: [f64; 8] = std::array::from_fn(|c| {
                    let o = CORNER_OFFSETS[c];
                    grid.get(i + o[0], j + o[1], k + o[2])
                });
                let mut case = 0usize;
                for (c, &x) in v.iter().enumerate() {
                    if x < iso {
                        case |= 1 << c;
                    }
                }
                if EDGE_TABLE[case] == 0 {
                    continue;
                }
                let mut ids = [u32::MAX; 12];
                for (e, id) in ids.iter_mut().enumerate() {
                    if EDGE_TABLE[case] & (1 << e) == 0 {
                        continue;
                    }
                    let key = edge_key(grid, cell, e);
                    *id = *vertex_of.entry(key).or_insert_with(|| {
                        let (a, b) = EDGE_CORNERS[e];
                        let pa = corner_position(grid, cell, a);
                        let pb = corner_position(grid, cell, b);
                        let d = v[b] - v[a];
                        let t = if d == 0.0 { 0.5 } else { ((iso - v[a]) / d).clamp(0.0, 1.0) };
                        mesh.positions.push(pa + (pb - pa) * t);
                        (mesh.positions.len() - 1) as u32
                    });
                }
                for tri in TRI_TABLE[case].chunks(3) {
                    if tri[0] == 255 {
                        break;
                    }
                    // The table winds clockwise seen from outside.
                    mesh.triangles.push([ids[tri[0] as usize], ids[tri[2] as usize], ids[tri[1] as usize]]);
                }
            }
        }
    }
    mesh.remove_degenerate();
    Ok(mesh)
}

fn corner_position(grid: &ScalarGrid, cell: [usize; 3], corner: usize) -> Vec3 {
    let o = CORNER_OFFSETS[corner];
    grid.position(cell[0] + o[0], cell[1] + o[1], cell[2] + o[2])
}
