use super::ModelError;

/// Square images split into a `grid × grid` array of square patches.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PatchConfig {
    pub image_size: usize,
    pub patch_size: usize,
}

impl PatchConfig {
    pub fn new(image_size: usize, patch_size: usize) -> Result<Self, ModelError> {
        let cfg = Self {
            image_size,
            patch_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.patch_size == 0 || self.image_size == 0 || self.image_size % self.patch_size != 0 {
            return Err(ModelError::Param(format!(
                "patch size {} must divide image size {}",
                self.patch_size, self.image_size
            )));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn n_patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Flattened length of one RGB patch.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub with_cls: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    pub depth: usize,
    pub dim: usize,
    pub ff_dim: usize,
    pub heads: usize,
    pub dropout: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub patch: PatchConfig,
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// 64-pixel images, 8-pixel patches, 4×64 encoder, 2×64 decoder.
    pub fn desk() -> Self {
        Self {
            patch: PatchConfig {
                image_size: 64,
                patch_size: 8,
            },
            encoder: EncoderConfig {
                depth: 4,
                dim: 64,
                heads: 4,
                mlp_ratio: 4,
                with_cls: true,
            },
            decoder: DecoderConfig {
                depth: 2,
                dim: 64,
                ff_dim: 256,
                heads: 4,
                dropout: 0.1,
            },
        }
    }

    /// ViT-S/16 encoder with the 4-block, 256-wide decoder.
    pub fn vit_small_16() -> Self {
        Self {
            patch: PatchConfig {
                image_size: 224,
                patch_size: 16,
            },
            encoder: EncoderConfig {
                depth: 12,
                dim: 384,
                heads: 6,
                mlp_ratio: 4,
                with_cls: true,
            },
            decoder: DecoderConfig {
                depth: 4,
                dim: 256,
                ff_dim: 2048,
                heads: 8,
                dropout: 0.1,
            },
        }
    }

    /// Smallest useful model, for gradient checks: 8×8 images, 4-pixel
    /// patches, width 8, one encoder and one decoder block.
    pub fn micro() -> Self {
        Self {
            patch: PatchConfig {
                image_size: 8,
                patch_size: 4,
            },
            encoder: EncoderConfig {
                depth: 1,
                dim: 8,
                heads: 2,
                mlp_ratio: 2,
                with_cls: true,
            },
            decoder: DecoderConfig {
                depth: 1,
                dim: 8,
                ff_dim: 16,
                heads: 2,
                dropout: 0.1,
            },
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.patch.validate()?;
        let e = &self.encoder;
        let d = &self.decoder;
        if e.dim == 0 || e.heads == 0 || e.dim % e.heads != 0 {
            return Err(ModelError::Param(format!(
                "encoder dim {} not divisible by {} heads",
                e.dim, e.heads
            )));
        }
        if d.dim == 0 || d.heads == 0 || d.dim % d.heads != 0 {
            return Err(ModelError::Param(format!(
                "decoder dim {} not divisible by {} heads",
                d.dim, d.heads
            )));
        }
        if e.dim % 4 != 0 || d.dim % 4 != 0 {
            return Err(ModelError::Param(
                "encoder and decoder dims must be multiples of 4 for 2-D sine-cosine tables".into(),
            ));
        }
        if e.mlp_ratio == 0 || d.ff_dim == 0 {
            return Err(ModelError::Param("feed-forward widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&d.dropout) {
            return Err(ModelError::Param(format!("dropout {} not in [0, 1)", d.dropout)));
        }
        Ok(())
    }

    /// Closed-form trainable parameter count (one encoder, shared by both views).
    pub fn parameter_count(&self) -> usize {
        let (e, d) = (self.encoder.dim, self.decoder.dim);
        let pd = self.patch.patch_dim();
        let linear = |i: usize, o: usize| i * o + o;
        let norm = |n: usize| 2 * n;
        // Fused projection with query and value biases.
        let qkv = |n: usize| n * 3 * n + 2 * n;
        let enc_block = norm(e)
            + qkv(e)
            + linear(e, e)
            + norm(e)
            + linear(e, e * self.encoder.mlp_ratio)
            + linear(e * self.encoder.mlp_ratio, e);
        let dec_block = norm(d)
            + norm(d)
            + linear(d, d)
            + d * 2 * d
            + d
            + linear(d, d)
            + norm(d)
            + linear(d, self.decoder.ff_dim)
            + linear(self.decoder.ff_dim, d)
            + norm(d)
            + qkv(d)
            + linear(d, d);
        let cls = if self.encoder.with_cls { e } else { 0 };
        linear(pd, e)
            + cls
            + self.encoder.depth * enc_block
            + norm(e)
            + linear(e, d)
            + d
            + self.decoder.depth * dec_block
            + norm(d)
            + linear(d, pd)
    }
}
