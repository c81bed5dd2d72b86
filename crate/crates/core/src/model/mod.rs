//! The cropped-view masked autoencoder: patch tokens, mask plans, a shared
//! encoder for both views and a cross/self-attention decoder.

mod config;
mod cost;
mod loss;
mod mask;
mod network;
mod params;
mod patch;


pub use config::{DecoderConfig, EncoderConfig, ModelConfig, PatchConfig};
pub use cost::{count_attention_ops, layer_attention_macs, AttentionCost};
pub use loss::{forward_train, normalize_patch_targets, reconstruction_loss, LossScope, TARGET_EPS};
pub use mask::{make_mask_plan, resolve_mask_ratio, visible_count, MaskPlan, REFERENCE_PATCHES};
pub use network::{extract_cls_attention, Decoded, Encoded, Network};
pub use params::{decays, shape_tree, DecoderBlock, EncoderBlock, KvProj, Linear, ModelParams, Norm, Params, QkvProj};
pub use patch::{patchify, pos_embed_2d, unpatchify};

use thiserror::Error;

use crate::numerics::NumericsError;
use crate::views::ViewError;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    View(#[from] ViewError),
}
