//! Multiply-accumulate counts of attention score and value products.
//!
//! One attention layer with `nq` queries, `nk` keys and width `d` costs
//! `nq·nk·d` MACs for `QKᵀ` plus `nq·nk·d` for the weighted sum of values,
//! i.e. `2·nq·nk·d`. Projections and MLPs are excluded.

use std::fmt;

use super::config::{DecoderConfig, EncoderConfig, PatchConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AttentionCost {
    /// Encoder on the full context view: `1 + N` tokens (with CLS).
    pub encoder_v1: u64,
    /// Encoder on the masked view: `1 + v` tokens.
    pub encoder_v2: u64,
    /// Decoder self-attention over all `N` positions.
    pub decoder_self: u64,
    /// Decoder cross-attention, `N` queries against `N` context tokens.
    pub decoder_cross: u64,
}

impl AttentionCost {
    pub fn total(&self) -> u64 {
        self.encoder_v1 + self.encoder_v2 + self.decoder_self + self.decoder_cross
    }
}

impl fmt::Display for AttentionCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "encoder_v1={} encoder_v2={} decoder_self={} decoder_cross={} total={}",
            self.encoder_v1,
            self.encoder_v2,
            self.decoder_self,
            self.decoder_cross,
            self.total()
        )
    }
}

/// MACs of one attention layer.
pub fn layer_attention_macs(nq: usize, nk: usize, dim: usize) -> u64 {
    2 * nq as u64 * nk as u64 * dim as u64
}

pub fn count_attention_ops(enc: &EncoderConfig, dec: &DecoderConfig, patch: &PatchConfig, visible: usize) -> AttentionCost {
    let n = patch.n_patches();
    let cls = usize::from(enc.with_cls);
    let depth = enc.depth as u64;
    let ddepth = dec.depth as u64;
    AttentionCost {
        encoder_v1: depth * layer_attention_macs(cls + n, cls + n, enc.dim),
        encoder_v2: depth * layer_attention_macs(cls + visible, cls + visible, enc.dim),
        decoder_self: ddepth * layer_attention_macs(n, n, dec.dim),
        decoder_cross: ddepth * layer_attention_macs(n, n, dec.dim),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;

    #[test]
    fn encoder_v2_ratio_between_nine_and_two_visible() {
        let c = ModelConfig::vit_small_16();
        let a = count_attention_ops(&c.encoder, &c.decoder, &c.patch, 9);
        let b = count_attention_ops(&c.encoder, &c.decoder, &c.patch, 2);
        let ratio = a.encoder_v2 as f64 / b.encoder_v2 as f64;
        assert!((ratio - 100.0 / 9.0).abs() < 1e-12);
        assert_eq!(a.encoder_v1, b.encoder_v1);
    }

    #[test]
    fn full_visibility_is_symmetric() {
        let c = ModelConfig::vit_small_16();
        let a = count_attention_ops(&c.encoder, &c.decoder, &c.patch, c.patch.n_patches());
        assert_eq!(a.encoder_v1, a.encoder_v2);
        assert_eq!(a.decoder_self, a.decoder_cross);
    }

    #[test]
    fn quadratic_in_tokens() {
        assert_eq!(layer_attention_macs(20, 20, 8), 4 * layer_attention_macs(10, 10, 8));
        // 12 layers · 2 · 197² · 384
        let c = ModelConfig::vit_small_16();
        let a = count_attention_ops(&c.encoder, &c.decoder, &c.patch, 2);
        assert_eq!(a.encoder_v1, 12 * 2 * 197 * 197 * 384);
        assert_eq!(a.encoder_v2, 12 * 2 * 3 * 3 * 384);
    }
}
