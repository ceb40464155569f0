//! Synthetic "Mini-Change" dataset generation and manifest-based loading.

mod batch;
mod manifest;
mod scene;

pub use batch::{batch_iter, SampleRef};
pub use manifest::{load_manifest, write_manifest, Manifest, Record};
pub use scene::{generate_minichange, GenSpec};

use crate::error::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChangeType {
    Color,
    Texture,
    Move,
    Add,
    Drop,
    Distractor,
}

impl ChangeType {
    pub const ALL: [ChangeType; 6] = [
        ChangeType::Color,
        ChangeType::Texture,
        ChangeType::Move,
        ChangeType::Add,
        ChangeType::Drop,
        ChangeType::Distractor,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChangeType::Color => "color",
            ChangeType::Texture => "texture",
            ChangeType::Move => "move",
            ChangeType::Add => "add",
            ChangeType::Drop => "drop",
            ChangeType::Distractor => "distractor",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl std::str::FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split '{other}'"))),
        }
    }
}

/// Square 8-bit RGB image held in memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbBuf {
    pub size: usize,
    pub data: Vec<u8>,
}

impl RgbBuf {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            data: vec![0; size * size * 3],
        }
    }

    #[inline]
    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        let i = (y * self.size + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        let i = (y * self.size + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Pixel values scaled to `[0, 1]`, shape `(H, W, 3)`.
    pub fn to_f64(&self) -> Array3<f64> {
        let s = self.size;
        Array3::from_shape_vec((s, s, 3), self.data.iter().map(|&v| v as f64 / 255.0).collect())
            .expect("rgb buffer shape")
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let img = image::RgbImage::from_raw(self.size as u32, self.size as u32, self.data.clone())
            .expect("rgb buffer size");
        img.save(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let img = image::open(path)
            .map_err(|e| Error::Image {
                path: path.to_path_buf(),
                message: e.to_string(),
            })?
            .into_rgb8();
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::Image {
                path: path.to_path_buf(),
                message: format!("expected square image, got {w}x{h}"),
            });
        }
        Ok(Self {
            size: w as usize,
            data: img.into_raw(),
        })
    }
}

/// A manifest record with both images resident in memory.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: Record,
    pub before: RgbBuf,
    pub after: RgbBuf,
}

/// All samples of a manifest loaded into memory for training and evaluation.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<LoadedSample>,
}

impl Dataset {
    pub fn load(manifest: &Manifest) -> Result<Self> {
        let mut samples = Vec::with_capacity(manifest.records.len());
        for record in &manifest.records {
            let before = RgbBuf::load_png(&manifest.resolve(&record.before))?;
            let after = RgbBuf::load_png(&manifest.resolve(&record.after))?;
            if before.size != after.size {
                return Err(Error::Data(format!(
                    "record {}: before/after image sizes differ ({} vs {})",
                    record.id, before.size, after.size
                )));
            }
            samples.push(LoadedSample {
                record: record.clone(),
                before,
                after,
            });
        }
        Ok(Self { samples })
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.record.split == split)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Deterministic seed mixing (splitmix64 over the parts).
pub(crate) fn mix_seed(parts: &[u64]) -> u64 {
    let mut h: u64 = 0x9E3779B97F4A7C15;
    for &p in parts {
        let mut z = h ^ p.wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        h = z ^ (z >> 31);
    }
    h
}
