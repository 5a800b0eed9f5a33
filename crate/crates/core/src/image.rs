//! RGB float images and 8-bit PNG I/O.

use std::io::{BufReader, Cursor};
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ImageError {
    #[error("{path}: {reason}")]
    Decode { path: String, reason: String },
    #[error("image size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Row-major RGB image with channels in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, fill: [f32; 3]) -> Self {
        Self { width, height, data: fill.iter().copied().cycle().take(width * height * 3).collect() }
    }

    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    pub fn from_bytes(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self { width, height, data: bytes.iter().map(|&b| b as f32 / 255.0).collect() }
    }

    /// Snaps every channel to the nearest 8-bit level.
    pub fn quantized(&self) -> Self {
        Self::from_bytes(self.width, self.height, &self.to_bytes())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>, ImageError> {
        encode_png(self.width, self.height, 3, &self.to_bytes())
    }

    pub fn write_png(&self, path: &Path) -> Result<(), ImageError> {
        crate::io::write_atomic(path, &self.encode_png()?)?;
        Ok(())
    }

    pub fn read_png(path: &Path) -> Result<Self, ImageError> {
        let bytes = std::fs::read(path)
            .map_err(|e| ImageError::Decode { path: path.display().to_string(), reason: e.to_string() })?;
        let (w, h, channels, data) = decode_png(&bytes)
            .map_err(|reason| ImageError::Decode { path: path.display().to_string(), reason })?;
        let rgb: Vec<u8> = match channels {
            3 => data,
            4 => data.chunks_exact(4).flat_map(|p| [p[0], p[1], p[2]]).collect(),
            1 => data.iter().flat_map(|&g| [g, g, g]).collect(),
            2 => data.chunks_exact(2).flat_map(|p| [p[0], p[0], p[0]]).collect(),
            c => {
                return Err(ImageError::Decode { path: path.display().to_string(), reason: format!("{c} channels") })
            }
        };
        Ok(Self::from_bytes(w, h, &rgb))
    }
}

pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// 8-bit PNG with 3 (RGB) or 4 (RGBA) channels.
pub fn encode_png(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Vec<u8>, ImageError> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(if channels == 4 { png::ColorType::Rgba } else { png::ColorType::Rgb });
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().map_err(|e| std::io::Error::other(e.to_string()))?;
        w.write_image_data(bytes).map_err(|e| std::io::Error::other(e.to_string()))?;
    }
    Ok(out)
}

/// Decodes to 8 bits per channel: `(width, height, channels, bytes)`.
pub fn decode_png(bytes: &[u8]) -> Result<(usize, usize, usize, Vec<u8>), String> {
    let mut dec = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    dec.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    buf.truncate(info.buffer_size());
    let channels = info.color_type.samples();
    Ok((info.width as usize, info.height as usize, channels, buf))
}
