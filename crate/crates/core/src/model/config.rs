use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Pipeline stage a parameter set belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Adapt,
    Caption,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Adapt => "adapt",
            Stage::Caption => "caption",
        }
    }
}

/// Architecture hyperparameters shared by both stages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Vision width.
    pub d_i: usize,
    /// Text / caption width.
    pub d_t: usize,
    pub patch_size: usize,
    pub image_size: usize,
    pub n_intra: usize,
    pub n_inter: usize,
    pub n_g: usize,
    pub n_cap_enc: usize,
    pub n_cap_dec: usize,
    pub heads: usize,
    pub dropout: f64,
    pub l_max: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    /// Number of image patches per image.
    pub fn n(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }

    /// Length of the concatenated pair sequence, `2 * (n + 1)`.
    pub fn pair_len(&self) -> usize {
        2 * (self.n() + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_size % self.patch_size != 0 {
            return Err(Error::Config(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        if self.n_intra < 1 {
            return Err(Error::Config("n_intra must be >= 1".into()));
        }
        if self.d_i % self.heads != 0 || self.d_t % self.heads != 0 {
            return Err(Error::Config(format!(
                "widths d_i={} d_t={} must be divisible by heads={}",
                self.d_i, self.d_t, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} out of range", self.dropout)));
        }
        if self.l_max < 3 {
            return Err(Error::Config("l_max must be >= 3".into()));
        }
        if self.vocab_size < 5 {
            return Err(Error::Config("vocab_size must be >= 5".into()));
        }
        Ok(())
    }

    /// Desk-scale preset used by the acceptance runs.
    pub fn desk(vocab_size: usize) -> Self {
        Self {
            d_i: 64,
            d_t: 64,
            patch_size: 16,
            image_size: 64,
            n_intra: 3,
            n_inter: 1,
            n_g: 2,
            n_cap_enc: 2,
            n_cap_dec: 2,
            heads: 4,
            dropout: 0.0,
            l_max: 16,
            vocab_size,
        }
    }

    /// Full-scale preset (ViT-B/32-sized); runnable but not required anywhere.
    pub fn full_scale(vocab_size: usize) -> Self {
        Self {
            d_i: 768,
            d_t: 512,
            patch_size: 32,
            image_size: 224,
            n_intra: 9,
            n_inter: 3,
            n_g: 12,
            n_cap_enc: 3,
            n_cap_dec: 3,
            heads: 8,
            dropout: 0.1,
            l_max: 32,
            vocab_size,
        }
    }
}
