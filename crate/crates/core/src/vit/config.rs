use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Vision transformer hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub num_heads: usize,
    pub mlp_ratio: f64,
    pub use_class_token: bool,
}

impl Default for EncoderConfig {
    /// ViT-S on 256x256 single-channel inputs.
    fn default() -> Self {
        EncoderConfig {
            image_size: 256,
            patch_size: 16,
            embed_dim: 384,
            depth: 12,
            num_heads: 6,
            mlp_ratio: 4.0,
            use_class_token: true,
        }
    }
}

impl EncoderConfig {
    /// Small configuration for desk-scale experiments: 64x64 images, 8x8 patches.
    pub fn tiny() -> Self {
        EncoderConfig {
            image_size: 64,
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            num_heads: 4,
            mlp_ratio: 4.0,
            use_class_token: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.image_size == 0 {
            return fail("image_size and patch_size must be positive".into());
        }
        if self.image_size % self.patch_size != 0 {
            return fail(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            return fail(format!(
                "embed_dim {} not divisible by num_heads {}",
                self.embed_dim, self.num_heads
            ));
        }
        if self.depth == 0 {
            return fail("depth must be at least 1".into());
        }
        if !(self.mlp_ratio > 0.0) || self.mlp_hidden() == 0 {
            return fail(format!("mlp_ratio {} yields an empty MLP", self.mlp_ratio));
        }
        Ok(())
    }

    /// Patches per side.
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    /// Number of patch tokens `n`.
    pub fn num_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Sequence length including the class token when present.
    pub fn seq_len(&self) -> usize {
        self.num_patches() + usize::from(self.use_class_token)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size
    }

    pub fn mlp_hidden(&self) -> usize {
        (self.embed_dim as f64 * self.mlp_ratio).round() as usize
    }

    /// Closed-form parameter count of the encoder.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let h = self.mlp_hidden();
        let embed = self.patch_dim() * d + d;
        let cls = if self.use_class_token { d } else { 0 };
        let pos = self.seq_len() * d;
        let block = 2 * (2 * d) // two layer norms
            + (d * 3 * d + 3 * d) // qkv
            + (d * d + d) // attention projection
            + (d * h + h) // fc1
            + (h * d + d); // fc2
        embed + cls + pos + self.depth * block + 2 * d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_sequence_length_with_class_token() {
        let c = EncoderConfig::default();
        assert_eq!(c.num_patches(), 256);
        assert_eq!(c.seq_len(), 257);
    }

    #[test]
    fn rejects_indivisible_shapes() {
        let mut c = EncoderConfig::default();
        c.patch_size = 15;
        assert!(c.validate().is_err());
        let mut c = EncoderConfig::default();
        c.num_heads = 5;
        assert!(c.validate().is_err());
    }
}
