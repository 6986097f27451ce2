use serde::{Deserialize, Serialize};

use crate::error::{CobraError, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Grid height, width and channel count of the 2D brain-signal input.
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Side length of a square patch.
    pub patch: usize,
    /// Token width shared by every module.
    pub dim: usize,
    pub heads: usize,
    /// Hidden width of each transformer MLP, as a multiple of `dim`.
    pub mlp_ratio: usize,
    /// Transformer blocks in the commonality encoder.
    pub sc_depth: usize,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
    /// Rows of the target embedding.
    pub clip_len: usize,
    /// Object classes predicted by the commonality head.
    pub n_classes: usize,
    /// Prompt tokens selected per sample.
    pub top_k: usize,
    /// Contrastive softmax temperature.
    pub temperature: f64,
    /// Margin between subject centers.
    pub margin: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small configuration that trains on a CPU in seconds.
    pub fn desk() -> Self {
        ModelConfig {
            height: 32,
            width: 32,
            channels: 1,
            patch: 8,
            dim: 32,
            heads: 4,
            mlp_ratio: 4,
            sc_depth: 2,
            encoder_depth: 2,
            decoder_depth: 2,
            clip_len: 8,
            n_classes: 10,
            top_k: 4,
            temperature: 0.07,
            margin: 1.0,
        }
    }

    /// ViT-B/16 sized encoder with 4-deep, 12-head encoder and decoder.
    pub fn full_scale() -> Self {
        ModelConfig {
            height: 224,
            width: 224,
            channels: 1,
            patch: 16,
            dim: 768,
            heads: 12,
            mlp_ratio: 4,
            sc_depth: 12,
            encoder_depth: 4,
            decoder_depth: 4,
            clip_len: 77,
            n_classes: 80,
            top_k: 30,
            temperature: 0.07,
            margin: 1.0,
        }
    }

    /// Number of patch tokens, `L_c`.
    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_len(&self) -> usize {
        self.patch * self.patch * self.channels
    }

    pub fn grid_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("channels", self.channels),
            ("patch", self.patch),
            ("dim", self.dim),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("clip_len", self.clip_len),
            ("n_classes", self.n_classes),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(CobraError::Config(format!("model.{name} must be positive")));
            }
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(CobraError::Config(format!(
                "patch {} does not tile a {}×{} grid",
                self.patch, self.height, self.width
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(CobraError::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        self.check_top_k(self.top_k)?;
        if !(self.temperature > 0.0) {
            return Err(CobraError::Config(
                "model.temperature must be positive".into(),
            ));
        }
        if !(self.margin >= 0.0) {
            return Err(CobraError::Config(
                "model.margin must be non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn check_top_k(&self, k: usize) -> Result<()> {
        let pool = self.num_patches();
        if k == 0 || k > pool {
            return Err(CobraError::Parameter(format!(
                "top_k {k} outside 1..={pool}"
            )));
        }
        Ok(())
    }
}
