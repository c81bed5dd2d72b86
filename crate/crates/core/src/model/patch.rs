use crate::numerics::{Element, Tensor};
use crate::views::{Image, CHANNELS};

use super::config::PatchConfig;
use super::ModelError;

/// Splits `image` into rows of `patch² · 3` values. Row `i` is the patch at
/// grid cell `(i / grid, i % grid)`; inside a patch values run over
/// (row, column, channel).
pub fn patchify<T: Element>(image: &Image, cfg: &PatchConfig) -> Result<Tensor<T>, ModelError> {
    cfg.validate()?;
    if image.height() != cfg.image_size || image.width() != cfg.image_size {
        return Err(ModelError::Param(format!(
            "image is {}×{}, patch config expects {}×{}",
            image.height(),
            image.width(),
            cfg.image_size,
            cfg.image_size
        )));
    }
    let (g, p, s) = (cfg.grid(), cfg.patch_size, cfg.image_size);
    let src = image.data();
    let mut out = Vec::with_capacity(s * s * CHANNELS);
    for gy in 0..g {
        for gx in 0..g {
            for py in 0..p {
                let start = ((gy * p + py) * s + gx * p) * CHANNELS;
                out.extend(src[start..start + p * CHANNELS].iter().map(|&v| T::from_f64_lossy(v as f64)));
            }
        }
    }
    Ok(Tensor::new(&[g * g, cfg.patch_dim()], out)?)
}

/// Inverse of [`patchify`]. Values are clamped into [0, 1] so predictions in
/// normalized units can be rendered; for real pixel data this is exact.
pub fn unpatchify<T: Element>(patches: &Tensor<T>, cfg: &PatchConfig) -> Result<Image, ModelError> {
    cfg.validate()?;
    if patches.shape() != [cfg.n_patches(), cfg.patch_dim()] {
        return Err(ModelError::Param(format!(
            "patch matrix {:?} does not match [{}, {}]",
            patches.shape(),
            cfg.n_patches(),
            cfg.patch_dim()
        )));
    }
    let (g, p, s) = (cfg.grid(), cfg.patch_size, cfg.image_size);
    let mut data = vec![0.0f32; s * s * CHANNELS];
    for (i, row) in patches.data().chunks(cfg.patch_dim()).enumerate() {
        let (gy, gx) = (i / g, i % g);
        for py in 0..p {
            let start = ((gy * p + py) * s + gx * p) * CHANNELS;
            for (dst, &v) in data[start..start + p * CHANNELS]
                .iter_mut()
                .zip(&row[py * p * CHANNELS..(py + 1) * p * CHANNELS])
            {
                *dst = (v.as_f64() as f32).clamp(0.0, 1.0);
            }
        }
    }
    Ok(Image::new(s, s, data)?)
}

/// Fixed 2-D sine-cosine table of shape `[grid², dim]`. The first half of
/// each row encodes the patch row, the second half the column; within each
/// half the layout is `[sin(ω₀t) .. sin(ω_{m-1}t), cos(ω₀t) .. cos(ω_{m-1}t)]`
/// with `m = dim / 4` and `ω_i = 10000^(-i/m)`.
pub fn pos_embed_2d<T: Element>(grid: usize, dim: usize) -> Result<Tensor<T>, ModelError> {
    if dim == 0 || dim % 4 != 0 {
        return Err(ModelError::Param(format!("positional dim {dim} not divisible by 4")));
    }
    let m = dim / 4;
    let omega: Vec<f64> = (0..m).map(|i| 10000f64.powf(-(i as f64) / m as f64)).collect();
    let mut data = Vec::with_capacity(grid * grid * dim);
    for y in 0..grid {
        for x in 0..grid {
            for t in [y as f64, x as f64] {
                data.extend(omega.iter().map(|w| T::from_f64_lossy((t * w).sin())));
                data.extend(omega.iter().map(|w| T::from_f64_lossy((t * w).cos())));
            }
        }
    }
    Ok(Tensor::new(&[grid * grid, dim], data)?)
}
