use crate::field::Vec3;
use crate::ssan::{SsanOutput, FEATURES};

use super::mesh::TriMesh;
use super::MeshError;

/// Leg length of each face triangle in the atlas, in texels.
pub const TRI_SIDE: usize = 4;
pub const MAX_ATLAS: usize = 16384;
/// Vertex count above which extraction switches to the atlas by default.
pub const ATLAS_THRESHOLD: usize = 200_000;

/// Per-face texture. Face `2q` takes the lower-left half of square `q`, face
/// `2q + 1` the upper-right half; texels on the shared diagonal are padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Atlas {
    pub size: usize,
    /// Quantized features, row-major.
    pub texels: Vec<[u8; FEATURES]>,
    /// Texel-space corner coordinates of each face.
    pub uvs: Vec<[[f32; 2]; 3]>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Features {
    Vertex(Vec<[f32; FEATURES]>),
    Atlas(Atlas),
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeaturedMesh {
    pub mesh: TriMesh,
    /// Network normal at each vertex.
    pub normals: Vec<Vec3>,
    pub features: Features,
}

pub fn quantize(x: f64) -> u8 {
    (x.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn features_of(o: &SsanOutput) -> [f32; FEATURES] {
    o.f.map(|v| v.clamp(0.0, 1.0) as f32)
}

pub fn bake_vertex_features<E>(
    mesh: &TriMesh,
    query: impl Fn(&[Vec3]) -> Result<Vec<SsanOutput>, E>,
) -> Result<FeaturedMesh, E> {
    let out = query(&mesh.positions)?;
    Ok(FeaturedMesh {
        mesh: mesh.clone(),
        normals: out.iter().map(|o| o.n).collect(),
        features: Features::Vertex(out.iter().map(features_of).collect()),
    })
}

/// Squares per atlas row and the atlas side for `faces` faces.
pub fn atlas_layout(faces: usize) -> Result<(usize, usize), MeshError> {
    let squares = faces.div_ceil(2).max(1);
    let per_row = (squares as f64).sqrt().ceil() as usize;
    let per_row = if per_row * per_row < squares { per_row + 1 } else { per_row };
    let size = (per_row * TRI_SIDE).next_power_of_two();
    if size > MAX_ATLAS {
        return Err(MeshError::AtlasTooLarge { faces, size });
    }
    Ok((size / TRI_SIDE, size))
}

/// Local texel `(i, j)` of a square is owned by the lower face when
/// `i + j <= 2` and by the upper face when `i + j >= 4`.
fn owns(upper: bool, i: usize, j: usize) -> bool {
    if upper {
        i + j >= TRI_SIDE
    } else {
        i + j + 2 <= TRI_SIDE
    }
}

fn face_uvs(face: usize, per_row: usize) -> [[f32; 2]; 3] {
    let q = face / 2;
    let (ox, oy) = (((q % per_row) * TRI_SIDE) as f32, ((q / per_row) * TRI_SIDE) as f32);
    let s = TRI_SIDE as f32;
    if face % 2 == 0 {
        [[ox, oy], [ox + s, oy], [ox, oy + s]]
    } else {
        [[ox + s, oy + s], [ox, oy + s], [ox + s, oy]]
    }
}

/// Barycentric weights of local texel center `(i, j)` for the lower or upper face.
fn texel_barycentric(upper: bool, i: usize, j: usize) -> [f64; 3] {
    let s = TRI_SIDE as f64;
    let (u, v) = (i as f64 + 0.5, j as f64 + 0.5);
    let (b1, b2) = if upper { ((s - u) / s, (s - v) / s) } else { (u / s, v / s) };
    [1.0 - b1 - b2, b1, b2]
}

pub fn build_face_texture<E>(
    mesh: &TriMesh,
    query: impl Fn(&[Vec3]) -> Result<Vec<SsanOutput>, E>,
) -> Result<FeaturedMesh, E>
where
    E: From<MeshError>,
{
    let faces = mesh.triangles.len();
    let (per_row, size) = atlas_layout(faces)?;
    let mut points = Vec::new();
    let mut targets = Vec::new();
    for f in 0..faces {
        let upper = f % 2 == 1;
        let q = f / 2;
        let (ox, oy) = ((q % per_row) * TRI_SIDE, (q / per_row) * TRI_SIDE);
        let c = mesh.corners(f);
        for j in 0..TRI_SIDE {
            for i in 0..TRI_SIDE {
                if owns(upper, i, j) {
                    let b = texel_barycentric(upper, i, j);
                    points.push(c[0] * b[0] + c[1] * b[1] + c[2] * b[2]);
                    targets.push((ox + i) + size * (oy + j));
                }
            }
        }
    }
    let out = query(&points)?;
    let mut texels = vec![[0u8; FEATURES]; size * size];
    for (o, &t) in out.iter().zip(&targets) {
        texels[t] = o.f.map(quantize);
    }
    // Diagonal padding copies the lower face's neighbor.
    for q in 0..faces.div_ceil(2) {
        let (ox, oy) = ((q % per_row) * TRI_SIDE, (q / per_row) * TRI_SIDE);
        for i in 0..TRI_SIDE {
            let j = TRI_SIDE - 1 - i;
            let (si, sj) = if j > 0 { (i, j - 1) } else { (i - 1, j) };
            texels[(ox + i) + size * (oy + j)] = texels[(ox + si) + size * (oy + sj)];
        }
    }
    let normals = query(&mesh.positions)?.iter().map(|o| o.n).collect();
    Ok(FeaturedMesh {
        mesh: mesh.clone(),
        normals,
        features: Features::Atlas(Atlas { size, texels, uvs: (0..faces).map(|f| face_uvs(f, per_row)).collect() }),
    })
}

impl Atlas {
    /// Nearest owned texel of `face` for a texel-space coordinate.
    pub fn sample(&self, face: usize, uv: [f64; 2]) -> [f32; FEATURES] {
        let c = self.uvs[face];
        let ox = c[0][0].min(c[1][0]).min(c[2][0]) as f64;
        let oy = c[0][1].min(c[1][1]).min(c[2][1]) as f64;
        // The lower face has its right angle at the square origin.
        let upper = c[0][0] as f64 != ox || c[0][1] as f64 != oy;
        let max = TRI_SIDE as isize - 1;
        let mut i = ((uv[0] - ox).floor() as isize).clamp(0, max) as usize;
        let mut j = ((uv[1] - oy).floor() as isize).clamp(0, max) as usize;
        while !owns(upper, i, j) {
            if upper {
                if i <= j { i += 1 } else { j += 1 }
            } else if i >= j {
                i -= 1
            } else {
                j -= 1
            }
        }
        let t = &self.texels[(ox as usize + i) + self.size * (oy as usize + j)];
        t.map(|v| v as f32 / 255.0)
    }

    /// Texel-space coordinate of barycentric point `b` on `face`.
    pub fn uv_at(&self, face: usize, b: [f64; 3]) -> [f64; 2] {
        let c = self.uvs[face];
        let f = |a: usize| b[0] * c[0][a] as f64 + b[1] * c[1][a] as f64 + b[2] * c[2][a] as f64;
        [f(0), f(1)]
    }

    /// Two RGBA images holding channels 0..4 and 4..8.
    pub fn to_rgba(&self) -> [Vec<u8>; 2] {
        let mut a = Vec::with_capacity(self.texels.len() * 4);
        let mut b = Vec::with_capacity(self.texels.len() * 4);
        for t in &self.texels {
            a.extend_from_slice(&t[..4]);
            b.extend_from_slice(&t[4..]);
        }
        [a, b]
    }

    pub fn from_rgba(size: usize, images: [&[u8]; 2], uvs: Vec<[[f32; 2]; 3]>) -> Result<Self, MeshError> {
        if images.iter().any(|im| im.len() != size * size * 4) {
            return Err(MeshError::Invalid(format!("atlas images must be {size}x{size} RGBA")));
        }
        let texels = images[0]
            .chunks_exact(4)
            .zip(images[1].chunks_exact(4))
            .map(|(a, b)| std::array::from_fn(|c| if c < 4 { a[c] } else { b[c - 4] }))
            .collect();
        Ok(Self { size, texels, uvs })
    }
}
