//! Little-endian tensor checkpoints:
//! `b"RMCKPT\0\0"`, `u32` version, `u32` tensor count, then per tensor
//! `u32` name length, UTF-8 name, `u32` rank, `u32` dims, raw `f32` data.

use std::io::{Read, Write};

use super::tensor::{Real, Tensor};
use super::DiffError;

pub const MAGIC: &[u8; 8] = b"RMCKPT\0\0";
pub const VERSION: u32 = 1;

pub fn write_tensors<R: Real, W: Write>(
    mut w: W,
    tensors: impl IntoIterator<Item = (impl AsRef<str>, impl AsRef<Tensor<R>>)>,
) -> Result<(), DiffError> {
    let tensors: Vec<_> = tensors.into_iter().collect();
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, t) in &tensors {
        let (name, t) = (name.as_ref().as_bytes(), t.as_ref());
        w.write_all(&(name.len() as u32).to_le_bytes())?;
        w.write_all(name)?;
        w.write_all(&(t.shape().len() as u32).to_le_bytes())?;
        for &d in t.shape() {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(t.len() * 4);
        for &x in t.data() {
            buf.extend_from_slice(&(x.as_f64() as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_u32<Rd: Read>(r: &mut Rd) -> Result<u32, DiffError> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub fn read_tensors<R: Real, Rd: Read>(mut r: Rd) -> Result<Vec<(String, Tensor<R>)>, DiffError> {
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(DiffError::Checkpoint("bad magic".into()));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(DiffError::Checkpoint(format!("unsupported version {version}")));
    }
    let count = read_u32(&mut r)? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u32(&mut r)? as usize;
        let mut name = vec![0u8; len];
        r.read_exact(&mut name)?;
        let name = String::from_utf8(name).map_err(|_| DiffError::Checkpoint("tensor name is not UTF-8".into()))?;
        let rank = read_u32(&mut r)? as usize;
        let shape = (0..rank).map(|_| read_u32(&mut r).map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let n: usize = shape.iter().product();
        let mut raw = vec![0u8; n * 4];
        r.read_exact(&mut raw)?;
        let data = raw.chunks_exact(4).map(|c| R::of(f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)).collect();
        out.push((name, Tensor::new(&shape, data)?));
    }
    Ok(out)
}

/// Writes every parameter of `store` plus scalar `meta.<key>` entries to `path` atomically.
pub fn save_file<R: Real>(
    path: &std::path::Path,
    store: &super::ParamStore<R>,
    meta: &[(&str, f64)],
) -> Result<(), DiffError> {
    let mut tensors: Vec<(String, Tensor<R>)> =
        meta.iter().map(|(k, v)| (format!("meta.{k}"), Tensor::scalar(R::of(*v)))).collect();
    tensors.extend(store.named().map(|(n, t)| (n.to_string(), t.clone())));
    let mut buf = Vec::new();
    write_tensors(&mut buf, tensors.iter().map(|(n, t)| (n.as_str(), t)))?;
    crate::io::write_atomic(path, &buf)?;
    Ok(())
}

pub fn load_file<R: Real>(path: &std::path::Path) -> Result<Vec<(String, Tensor<R>)>, DiffError> {
    let bytes = std::fs::read(path)
        .map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))?;
    read_tensors(bytes.as_slice()).map_err(|e| DiffError::Checkpoint(format!("{}: {e}", path.display())))
}

/// Value of a `meta.<key>` scalar, read back through its shortest decimal form
/// so `0.1` stored in `f32` returns `0.1`.
pub fn meta<R: Real>(tensors: &[(String, Tensor<R>)], key: &str) -> Result<f64, DiffError> {
    let name = format!("meta.{key}");
    tensors
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| {
            let v = t.item();
            format!("{v:?}").parse().unwrap_or(v.as_f64())
        })
        .ok_or_else(|| DiffError::Checkpoint(format!("missing '{name}'")))
}

impl<R> AsRef<Tensor<R>> for Tensor<R> {
    fn as_ref(&self) -> &Tensor<R> {
        self
    }
}
