//! Posed image sets: `cameras.json` plus `images/NNNN.png`.

use std::path::{Path, PathBuf};

use crate::field::{Camera, CameraRecord, FieldError};
use crate::image::{ImageError, RgbImage};

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error("{path}: {reason}")]
    Malformed { path: PathBuf, reason: String },
    #[error("{path}: missing image for camera {index}")]
    MissingImage { path: PathBuf, index: usize },
    #[error("{path}: camera {index}: {source}")]
    Camera { path: PathBuf, index: usize, source: FieldError },
    #[error(transparent)]
    Image(#[from] ImageError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub cameras: Vec<Camera>,
    pub images: Vec<RgbImage>,
}

pub fn image_path(dir: &Path, index: usize) -> PathBuf {
    dir.join("images").join(format!("{index:04}.png"))
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.cameras.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cameras.is_empty()
    }

    pub fn write(&self, dir: &Path) -> Result<(), DatasetError> {
        std::fs::create_dir_all(dir.join("images"))?;
        let records: Vec<CameraRecord> = self.cameras.iter().map(Camera::to_record).collect();
        let json = serde_json::to_vec_pretty(&records).expect("camera records serialize");
        crate::io::write_atomic(&dir.join("cameras.json"), &json)?;
        for (i, img) in self.images.iter().enumerate() {
            img.write_png(&image_path(dir, i))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DatasetError> {
        let cam_path = dir.join("cameras.json");
        let text = std::fs::read_to_string(&cam_path)
            .map_err(|e| DatasetError::Malformed { path: cam_path.clone(), reason: e.to_string() })?;
        let records: Vec<CameraRecord> = serde_json::from_str(&text)
            .map_err(|e| DatasetError::Malformed { path: cam_path.clone(), reason: e.to_string() })?;
        let mut cameras = Vec::with_capacity(records.len());
        let mut images = Vec::with_capacity(records.len());
        for (index, rec) in records.iter().enumerate() {
            let cam = Camera::from_record(rec)
                .map_err(|source| DatasetError::Camera { path: cam_path.clone(), index, source })?;
            let ip = image_path(dir, index);
            if !ip.exists() {
                return Err(DatasetError::MissingImage { path: ip, index });
            }
            let img = RgbImage::read_png(&ip)?;
            if img.width != cam.width || img.height != cam.height {
                return Err(DatasetError::Malformed {
                    path: ip,
                    reason: format!("image is {}x{}, camera expects {}x{}", img.width, img.height, cam.width, cam.height),
                });
            }
            cameras.push(cam);
            images.push(img);
        }
        Ok(Self { cameras, images })
    }
}
