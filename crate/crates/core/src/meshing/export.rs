//! `mesh.obj`, the `mesh.feat` sidecar and atlas images `feat0.png`, `feat1.png`.
//!
//! `mesh.feat` is little-endian: magic `RMFT`, then u32 version, mode
//! (0 vertex, 1 atlas), count, channels (8) and atlas side (0 in vertex
//! mode), followed by f32 records. Vertex mode stores `count` feature rows
//! of 8 values; atlas mode stores `count` faces of three texel-space UV pairs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::field::Vec3;
use crate::ssan::FEATURES;

use super::bake::{Atlas, FeaturedMesh, Features};
use super::mesh::TriMesh;
use super::MeshError;

const MAGIC: &[u8; 4] = b"RMFT";
const VERSION: u32 = 1;

pub fn obj_string(mesh: &TriMesh, normals: Option<&[Vec3]>, atlas: Option<&Atlas>) -> String {
    let mut s = String::new();
    for p in &mesh.positions {
        let _ = writeln!(s, "v {} {} {}", p.x, p.y, p.z);
    }
    if let Some(ns) = normals {
        for n in ns {
            let _ = writeln!(s, "vn {} {} {}", n.x, n.y, n.z);
        }
    }
    if let Some(a) = atlas {
        let size = a.size as f64;
        for face in &a.uvs {
            for uv in face {
                let _ = writeln!(s, "vt {} {}", uv[0] as f64 / size, 1.0 - uv[1] as f64 / size);
            }
        }
    }
    for (f, t) in mesh.triangles.iter().enumerate() {
        s.push('f');
        for (k, &i) in t.iter().enumerate() {
            let v = i + 1;
            match (atlas.is_some(), normals.is_some()) {
                (true, true) => write!(s, " {v}/{}/{v}", 3 * f + k + 1),
                (true, false) => write!(s, " {v}/{}", 3 * f + k + 1),
                (false, true) => write!(s, " {v}//{v}"),
                (false, false) => write!(s, " {v}"),
            }
            .expect("string write");
        }
        s.push('\n');
    }
    s
}

/// Parsed OBJ: mesh, per-vertex normals if present, per-face texture coordinates if present.
#[derive(Clone, Debug, PartialEq)]
pub struct ObjData {
    pub mesh: TriMesh,
    pub normals: Option<Vec<Vec3>>,
    pub face_uvs: Option<Vec<[[f64; 2]; 3]>>,
}

pub fn parse_obj(text: &str, path: &Path) -> Result<ObjData, MeshError> {
    let bad = |line: usize, reason: &str| MeshError::Parse { path: path.to_path_buf(), line, reason: reason.to_string() };
    let mut positions = Vec::new();
    let mut normals = Vec::new();
    let mut uvs: Vec<[f64; 2]> = Vec::new();
    let mut triangles = Vec::new();
    let mut face_uvs = Vec::new();
    let mut face_normal_idx = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = n + 1;
        let mut it = raw.split_whitespace();
        let Some(tag) = it.next() else { continue };
        let nums = |it: std::str::SplitWhitespace<'_>| -> Result<Vec<f64>, MeshError> {
            it.map(|t| t.parse::<f64>().map_err(|_| bad(line, &format!("bad number '{t}'")))).collect()
        };
        match tag {
            "v" | "vn" => {
                let v = nums(it)?;
                if v.len() < 3 {
                    return Err(bad(line, "expected three coordinates"));
                }
                let p = Vec3::new(v[0], v[1], v[2]);
                if tag == "v" { positions.push(p) } else { normals.push(p) }
            }
            "vt" => {
                let v = nums(it)?;
                if v.len() < 2 {
                    return Err(bad(line, "expected two texture coordinates"));
                }
                uvs.push([v[0], v[1]]);
            }
            "f" => {
                let mut corners = Vec::new();
                for tok in it {
                    let mut parts = tok.split('/');
                    let idx = |s: Option<&str>, len: usize| -> Result<Option<usize>, MeshError> {
                        match s {
                            None | Some("") => Ok(None),
                            Some(s) => {
                                let i: i64 = s.parse().map_err(|_| bad(line, &format!("bad index '{s}'")))?;
                                let i = if i < 0 { len as i64 + i } else { i - 1 };
                                if i < 0 || i as usize >= len {
                                    return Err(bad(line, &format!("index {s} out of range")));
                                }
                                Ok(Some(i as usize))
                            }
                        }
                    };
                    let v = idx(parts.next(), positions.len())?.ok_or_else(|| bad(line, "face corner without vertex"))?;
                    let t = idx(parts.next(), uvs.len())?;
                    let nn = idx(parts.next(), normals.len())?;
                    corners.push((v, t, nn));
                }
                if corners.len() < 3 {
                    return Err(bad(line, "face with fewer than three corners"));
                }
                for k in 1..corners.len() - 1 {
                    let tri = [corners[0], corners[k], corners[k + 1]];
                    triangles.push(tri.map(|c| c.0 as u32));
                    face_uvs.push(tri.map(|c| c.1));
                    face_normal_idx.push(tri.map(|c| (c.0, c.2)));
                }
            }
            _ => {}
        }
    }
    let has_uv = !face_uvs.is_empty() && face_uvs.iter().all(|f| f.iter().all(Option::is_some));
    let face_uvs = has_uv.then(|| face_uvs.iter().map(|f| f.map(|t| uvs[t.unwrap()])).collect());
    let vertex_normals = if !normals.is_empty() && face_normal_idx.iter().flatten().all(|(_, n)| n.is_some()) {
        let mut out = vec![Vec3::zeros(); positions.len()];
        for &(v, n) in face_normal_idx.iter().flatten() {
            out[v] = normals[n.unwrap()];
        }
        Some(out)
    } else if normals.len() == positions.len() && !normals.is_empty() {
        Some(normals)
    } else {
        None
    };
    let mesh = TriMesh { positions, triangles, normals: None };
    Ok(ObjData { mesh, normals: vertex_normals, face_uvs })
}

pub fn read_obj(path: &Path) -> Result<ObjData, MeshError> {
    let text = std::fs::read_to_string(path).map_err(|e| MeshError::Parse { path: path.to_path_buf(), line: 0, reason: e.to_string() })?;
    parse_obj(&text, path)
}

fn feat_bytes(fm: &FeaturedMesh) -> Vec<u8> {
    let mut b = Vec::new();
    let (mode, count, side) = match &fm.features {
        Features::Vertex(f) => (0u32, f.len(), 0usize),
        Features::Atlas(a) => (1u32, a.uvs.len(), a.size),
    };
    b.extend_from_slice(MAGIC);
    for v in [VERSION, mode, count as u32, FEATURES as u32, side as u32] {
        b.extend_from_slice(&v.to_le_bytes());
    }
    match &fm.features {
        Features::Vertex(f) => f.iter().flatten().for_each(|x| b.extend_from_slice(&x.to_le_bytes())),
        Features::Atlas(a) => a.uvs.iter().flatten().flatten().for_each(|x| b.extend_from_slice(&x.to_le_bytes())),
    }
    b
}

pub struct FeatFile {
    pub atlas_size: usize,
    pub vertex: Option<Vec<[f32; FEATURES]>>,
    pub uvs: Option<Vec<[[f32; 2]; 3]>>,
}

pub fn parse_feat(bytes: &[u8], path: &Path) -> Result<FeatFile, MeshError> {
    let bad = |reason: String| MeshError::Parse { path: path.to_path_buf(), line: 0, reason };
    if bytes.len() < 24 || &bytes[..4] != MAGIC {
        return Err(bad("not a feature sidecar (bad magic)".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().expect("4 bytes"));
    let (version, mode, count, channels, side) = (word(0), word(1), word(2) as usize, word(3) as usize, word(4) as usize);
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    if channels != FEATURES {
        return Err(bad(format!("expected {FEATURES} channels, found {channels}")));
    }
    let floats: Vec<f32> = bytes[24..].chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    if (bytes.len() - 24) % 4 != 0 {
        return Err(bad("truncated payload".into()));
    }
    match mode {
        0 if floats.len() == count * FEATURES => Ok(FeatFile {
            atlas_size: 0,
            vertex: Some(floats.chunks_exact(FEATURES).map(|c| c.try_into().expect("row")).collect()),
            uvs: None,
        }),
        1 if floats.len() == count * 6 => Ok(FeatFile {
            atlas_size: side,
            vertex: None,
            uvs: Some(floats.chunks_exact(6).map(|c| [[c[0], c[1]], [c[2], c[3]], [c[4], c[5]]]).collect()),
        }),
        0 | 1 => Err(bad(format!("payload holds {} floats, header promises {count} records", floats.len()))),
        m => Err(bad(format!("unknown mode {m}"))),
    }
}

pub fn obj_path(dir: &Path) -> PathBuf {
    dir.join("mesh.obj")
}

/// Writes `mesh.obj`, `mesh.feat` and, for an atlas, `feat0.png` and `feat1.png`.
pub fn save_featured(dir: &Path, fm: &FeaturedMesh) -> Result<(), MeshError> {
    let atlas = match &fm.features {
        Features::Atlas(a) => Some(a),
        Features::Vertex(_) => None,
    };
    crate::io::write_atomic(&obj_path(dir), obj_string(&fm.mesh, Some(&fm.normals), atlas).as_bytes())?;
    crate::io::write_atomic(&dir.join("mesh.feat"), &feat_bytes(fm))?;
    if let Some(a) = atlas {
        for (k, img) in a.to_rgba().iter().enumerate() {
            let png = crate::image::encode_png(a.size, a.size, 4, img)?;
            crate::io::write_atomic(&dir.join(format!("feat{k}.png")), &png)?;
        }
    }
    Ok(())
}

pub fn load_featured(dir: &Path) -> Result<FeaturedMesh, MeshError> {
    let obj = read_obj(&obj_path(dir))?;
    let feat_path = dir.join("mesh.feat");
    let bytes = std::fs::read(&feat_path).map_err(|e| MeshError::Parse { path: feat_path.clone(), line: 0, reason: e.to_string() })?;
    let feat = parse_feat(&bytes, &feat_path)?;
    let nv = obj.mesh.positions.len();
    let normals = obj.normals.clone().unwrap_or_else(|| obj.mesh.vertex_normals());
    let features = if let Some(v) = feat.vertex {
        if v.len() != nv {
            return Err(MeshError::Parse { path: feat_path, line: 0, reason: format!("{} feature rows for {nv} vertices", v.len()) });
        }
        Features::Vertex(v)
    } else {
        let uvs = feat.uvs.expect("atlas mode has uvs");
        if uvs.len() != obj.mesh.triangles.len() {
            return Err(MeshError::Parse { path: feat_path, line: 0, reason: "face count differs from the mesh".into() });
        }
        let mut images = Vec::new();
        for k in 0..2 {
            let p = dir.join(format!("feat{k}.png"));
            let bytes = std::fs::read(&p).map_err(|e| MeshError::Parse { path: p.clone(), line: 0, reason: e.to_string() })?;
            let (w, h, ch, data) = crate::image::decode_png(&bytes).map_err(|e| MeshError::Parse { path: p.clone(), line: 0, reason: e.to_string() })?;
            if w != feat.atlas_size || h != feat.atlas_size || ch != 4 {
                return Err(MeshError::Parse { path: p, line: 0, reason: format!("expected {0}x{0} RGBA", feat.atlas_size) });
            }
            images.push(data);
        }
        Features::Atlas(Atlas::from_rgba(feat.atlas_size, [&images[0], &images[1]], uvs)?)
    };
    let fm = FeaturedMesh { mesh: obj.mesh, normals, features };
    fm.mesh.validate()?;
    Ok(fm)
}
