//! On-disk dataset: `images/*.png` plus a COCO-shaped `annotations.json`.
//!
//! The manifest is written last through a rename, so its presence marks a
//! complete dataset.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::mask::min_enclosing_box;
use super::rle::{rle_decode, rle_encode, Rle};
use super::scene::{Instance, SceneConfig, SceneSample, CLASS_NAMES};
use crate::error::{Error, Result};
use crate::geometry::BBox;

pub const MANIFEST_FILE: &str = "annotations.json";
pub const IMAGES_DIR: &str = "images";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub version: u32,
    pub seed: u64,
    pub config: SceneConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: u64,
    pub file_name: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub id: u64,
    pub image_id: u64,
    pub category_id: usize,
    pub bbox: BBox,
    pub area: usize,
    pub segmentation: Rle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Category {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub info: DatasetInfo,
    pub images: Vec<ImageRecord>,
    pub annotations: Vec<AnnotationRecord>,
    pub categories: Vec<Category>,
}

/// A loaded dataset; `samples[i]` belongs to `manifest.images[i]`.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<SceneSample>,
}

impl Dataset {
    pub fn image_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.manifest.images.iter().map(|r| r.id)
    }
}

fn write_png(path: &Path, sample: &SceneSample) -> Result<()> {
    let bytes: Vec<u8> = sample
        .image
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    image::save_buffer(
        path,
        &bytes,
        sample.width as u32,
        sample.height as u32,
        image::ExtendedColorType::Rgb8,
    )
    .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_png(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let img = image::open(path)
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::format(path, other.to_string()),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(|b| b as f32 / 255.0).collect();
    Ok((w as usize, h as usize, data))
}

/// Builds the manifest for `samples` without touching the filesystem.
pub fn build_manifest(samples: &[SceneSample], seed: u64, config: &SceneConfig) -> DatasetManifest {
    let mut images = Vec::with_capacity(samples.len());
    let mut annotations = Vec::new();
    for (i, s) in samples.iter().enumerate() {
        let image_id = i as u64;
        images.push(ImageRecord {
            id: image_id,
            file_name: format!("{IMAGES_DIR}/{i:06}.png"),
            width: s.width,
            height: s.height,
        });
        for inst in &s.instances {
            annotations.push(AnnotationRecord {
                id: annotations.len() as u64 + 1,
                image_id,
                category_id: inst.class_id,
                bbox: inst.bbox,
                area: inst.mask.count(),
                segmentation: rle_encode(&inst.mask),
            });
        }
    }
    DatasetManifest {
        info: DatasetInfo {
            version: MANIFEST_VERSION,
            seed,
            config: config.clone(),
        },
        images,
        annotations,
        categories: CLASS_NAMES[..config.num_classes]
            .iter()
            .enumerate()
            .map(|(id, name)| Category {
                id,
                name: name.to_string(),
            })
            .collect(),
    }
}

pub fn write_dataset(samples: &[SceneSample], dir: &Path, seed: u64, config: &SceneConfig) -> Result<DatasetManifest> {
    let images_dir = dir.join(IMAGES_DIR);
    fs::create_dir_all(&images_dir).map_err(|e| Error::io(&images_dir, e))?;
    let manifest = build_manifest(samples, seed, config);
    for (rec, sample) in manifest.images.iter().zip(samples) {
        write_png(&dir.join(&rec.file_name), sample)?;
    }
    let json = serde_json::to_vec_pretty(&manifest).map_err(|e| Error::format(dir, e.to_string()))?;
    let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
    fs::write(&tmp, json).map_err(|e| Error::io(&tmp, e))?;
    let target = dir.join(MANIFEST_FILE);
    fs::rename(&tmp, &target).map_err(|e| Error::io(&target, e))?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(Error::IncompleteDataset(dir.to_path_buf()));
    }
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: DatasetManifest =
        serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
    if manifest.info.version != MANIFEST_VERSION {
        return Err(Error::Version {
            what: "dataset manifest",
            found: manifest.info.version,
            expected: MANIFEST_VERSION,
        });
    }
    Ok(manifest)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest = read_manifest(dir)?;
    let manifest_path: PathBuf = dir.join(MANIFEST_FILE);
    let mut samples = Vec::with_capacity(manifest.images.len());
    for rec in &manifest.images {
        let path = dir.join(&rec.file_name);
        if !path.exists() {
            return Err(Error::format(&path, "image referenced by manifest is missing"));
        }
        let (w, h, image) = read_png(&path)?;
        if (w, h) != (rec.width, rec.height) {
            return Err(Error::format(
                &path,
                format!("image is {w}×{h}, manifest says {}×{}", rec.width, rec.height),
            ));
        }
        samples.push(SceneSample {
            width: w,
            height: h,
            image,
            instances: Vec::new(),
        });
    }
    for ann in &manifest.annotations {
        let idx = manifest
            .images
            .iter()
            .position(|r| r.id == ann.image_id)
            .ok_or_else(|| {
                Error::format(
                    &manifest_path,
                    format!("annotation {} references unknown image {}", ann.id, ann.image_id),
                )
            })?;
        let s = &mut samples[idx];
        let mask = rle_decode(&ann.segmentation, s.height, s.width).map_err(|e| {
            Error::format(&manifest_path, format!("annotation {}: {e}", ann.id))
        })?;
        if mask.is_empty() || min_enclosing_box(&mask)? != ann.bbox {
            return Err(Error::format(
                &manifest_path,
                format!("annotation {}: bbox does not enclose its mask", ann.id),
            ));
        }
        s.instances.push(Instance {
            class_id: ann.category_id,
            bbox: ann.bbox,
            mask,
        });
    }
    Ok(Dataset { manifest, samples })
}
