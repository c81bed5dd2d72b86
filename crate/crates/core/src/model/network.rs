use crate::numerics::{Element, Rng, Tape, Tensor, Var};
use crate::views::Image;

use super::config::ModelConfig;
use super::mask::MaskPlan;
use super::params::{DecoderBlock, EncoderBlock, Linear, ModelParams, Norm, Params, QkvProj};
use super::patch::patchify;
use super::ModelError;

const LN_EPS: f64 = 1e-6;

type R<T> = Result<T, ModelError>;

/// Encoder output: `[CLS ‖ kept patches]` tokens after the final norm.
pub struct Encoded<'t, T: Element> {
    pub tokens: Var<'t, T>,
    /// Per layer, `[heads, n, n]` softmax weights (empty unless requested).
    pub attention: Vec<Tensor<T>>,
}

pub struct Decoded<'t, T: Element> {
    /// `[n_patches, patch² · 3]`.
    pub pred: Var<'t, T>,
    /// Per block, `[heads, N, N_context]`.
    pub cross_attention: Vec<Tensor<T>>,
    /// Per block, `[heads, N, N]`.
    pub self_attention: Vec<Tensor<T>>,
}

/// A parameter set placed on a tape.
pub struct Network<'t, T: Element> {
    pub config: ModelConfig,
    pub weights: Params<Var<'t, T>>,
    enc_pos: Var<'t, T>,
    dec_pos: Var<'t, T>,
    tape: &'t Tape<T>,
}

impl<T: Element> ModelParams<T> {
    /// Registers every weight as a differentiable leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Network<'t, T> {
        let weights = self.weights.map(&mut |_, t| tape.param(t.clone()));
        Network::new(self.config, weights, tape.constant(self.enc_pos.clone()), tape.constant(self.dec_pos.clone()))
    }

    /// Registers every weight as a constant; no gradients are tracked.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Network<'t, T> {
        let weights = self.weights.map(&mut |_, t| tape.constant(t.clone()));
        Network::new(self.config, weights, tape.constant(self.enc_pos.clone()), tape.constant(self.dec_pos.clone()))
    }
}

fn linear<'t, T: Element>(x: &Var<'t, T>, l: &Linear<Var<'t, T>>) -> R<Var<'t, T>> {
    Ok(x.matmul(&l.weight)?.add(&l.bias)?)
}

/// Splits a fused projection of `x` into biased queries, keys and biased values.
fn qkv<'t, T: Element>(x: &Var<'t, T>, p: &QkvProj<Var<'t, T>>, dim: usize) -> R<[Var<'t, T>; 3]> {
    let fused = x.matmul(&p.weight)?;
    Ok([
        fused.narrow(1, 0, dim)?.add(&p.q_bias)?,
        fused.narrow(1, dim, dim)?,
        fused.narrow(1, 2 * dim, dim)?.add(&p.v_bias)?,
    ])
}

fn norm<'t, T: Element>(x: &Var<'t, T>, n: &Norm<Var<'t, T>>) -> R<Var<'t, T>> {
    Ok(x.layer_norm(&n.gain, &n.bias, LN_EPS)?)
}

fn dropout<'t, T: Element>(x: Var<'t, T>, p: f64, rng: &mut Option<&mut Rng>) -> R<Var<'t, T>> {
    match rng {
        Some(r) => Ok(x.dropout(p, true, r)?),
        None => Ok(x),
    }
}

/// Multi-head scaled dot-product attention over `[nq, d]` queries and
/// `[nk, d]` keys/values. Returns the merged heads and, if asked, the
/// `[heads, nq, nk]` weights.
fn attention<'t, T: Element>(
    q: &Var<'t, T>,
    k: &Var<'t, T>,
    v: &Var<'t, T>,
    heads: usize,
    record: bool,
) -> R<(Var<'t, T>, Option<Tensor<T>>)> {
    let (nq, d) = (q.shape()[0], q.shape()[1]);
    let nk = k.shape()[0];
    let dh = d / heads;
    let scale = T::from_f64_lossy(1.0 / (dh as f64).sqrt());
    let mut outs = Vec::with_capacity(heads);
    let mut weights = Vec::with_capacity(if record { heads * nq * nk } else { 0 });
    for h in 0..heads {
        let qh = q.narrow(1, h * dh, dh)?;
        let kh = k.narrow(1, h * dh, dh)?;
        let vh = v.narrow(1, h * dh, dh)?;
        let probs = qh.matmul(&kh.transpose()?)?.scale(scale).softmax(1)?;
        if record {
            weights.extend_from_slice(probs.value().data());
        }
        outs.push(probs.matmul(&vh)?);
    }
    let merged = if heads == 1 { outs[0] } else { Var::concat(&outs, 1)? };
    let recorded = if record {
        Some(Tensor::new(&[heads, nq, nk], weights)?)
    } else {
        None
    };
    Ok((merged, recorded))
}

impl<'t, T: Element> Network<'t, T> {
    /// Assembles a network from variables already on `tape`.
    pub fn new(config: ModelConfig, weights: Params<Var<'t, T>>, enc_pos: Var<'t, T>, dec_pos: Var<'t, T>) -> Self {
        let tape = enc_pos.tape();
        Self {
            config,
            weights,
            enc_pos,
            dec_pos,
            tape,
        }
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    fn cls_offset(&self) -> usize {
        usize::from(self.config.encoder.with_cls)
    }

    fn encoder_block(&self, x: Var<'t, T>, b: &EncoderBlock<Var<'t, T>>, record: bool) -> R<(Var<'t, T>, Option<Tensor<T>>)> {
        let e = self.config.encoder.dim;
        let [q, k, v] = qkv(&norm(&x, &b.norm1)?, &b.qkv, e)?;
        let (a, w) = attention(&q, &k, &v, self.config.encoder.heads, record)?;
        let x = x.add(&linear(&a, &b.proj)?)?;
        let h = linear(&norm(&x, &b.norm2)?, &b.fc1)?.gelu();
        let x = x.add(&linear(&h, &b.fc2)?)?;
        Ok((x, w))
    }

    /// Encodes patch rows `[n, patch_dim]` placed at grid positions `positions`.
    pub fn encode_patches(&self, patches: Var<'t, T>, positions: &[usize], record: bool) -> R<Encoded<'t, T>> {
        let off = self.cls_offset();
        let pos_rows: Vec<usize> = positions.iter().map(|&p| p + off).collect();
        let mut x = linear(&patches, &self.weights.patch_embed)?.add(&self.enc_pos.gather(0, &pos_rows)?)?;
        if let Some(cls) = &self.weights.cls_token {
            let cls = cls.add(&self.enc_pos.narrow(0, 0, 1)?)?;
            x = Var::concat(&[cls, x], 0)?;
        }
        let mut attn = Vec::new();
        for b in &self.weights.encoder {
            let (next, w) = self.encoder_block(x, b, record)?;
            x = next;
            attn.extend(w);
        }
        Ok(Encoded {
            tokens: norm(&x, &self.weights.encoder_norm)?,
            attention: attn,
        })
    }

    /// Encodes `image`; with a plan only its visible patches enter the encoder.
    pub fn encode(&self, image: &Image, plan: Option<&MaskPlan>, record: bool) -> R<Encoded<'t, T>> {
        let patches = patchify::<T>(image, &self.config.patch)?;
        let n = self.config.patch.n_patches();
        let all = self.tape.constant(patches);
        match plan {
            None => self.encode_patches(all, &(0..n).collect::<Vec<_>>(), record),
            Some(p) => {
                p.check(n)?;
                self.encode_patches(all.gather(0, &p.visible)?, &p.visible, record)
            }
        }
    }

    fn decoder_block(
        &self,
        x: Var<'t, T>,
        memory: &Var<'t, T>,
        b: &DecoderBlock<Var<'t, T>>,
        rng: &mut Option<&mut Rng>,
        record: bool,
    ) -> R<(Var<'t, T>, Option<Tensor<T>>, Option<Tensor<T>>)> {
        let d = self.config.decoder.dim;
        let heads = self.config.decoder.heads;
        let p = self.config.decoder.dropout;

        let q = linear(&norm(&x, &b.cross_norm_q)?, &b.cross_q)?;
        let kv = norm(memory, &b.cross_norm_kv)?.matmul(&b.cross_kv.weight)?;
        let v = kv.narrow(1, d, d)?.add(&b.cross_kv.v_bias)?;
        let (a, cross_w) = attention(&q, &kv.narrow(1, 0, d)?, &v, heads, record)?;
        let x = x.add(&dropout(linear(&a, &b.cross_proj)?, p, rng)?)?;

        let h = linear(&norm(&x, &b.ff_norm)?, &b.ff1)?.gelu();
        let x = x.add(&dropout(linear(&h, &b.ff2)?, p, rng)?)?;

        let [q, k, v] = qkv(&norm(&x, &b.self_norm)?, &b.self_qkv, d)?;
        let (a, self_w) = attention(&q, &k, &v, heads, record)?;
        let x = x.add(&dropout(linear(&a, &b.self_proj)?, p, rng)?)?;
        Ok((x, cross_w, self_w))
    }

    /// Predicts every patch of V2 from its visible tokens and V1's patch tokens.
    /// `rng` enables dropout; `None` runs in evaluation mode.
    pub fn decode(
        &self,
        enc_v2: &Encoded<'t, T>,
        plan: &MaskPlan,
        enc_v1: &Encoded<'t, T>,
        mut rng: Option<&mut Rng>,
        record: bool,
    ) -> R<Decoded<'t, T>> {
        let n = self.config.patch.n_patches();
        plan.check(n)?;
        let off = self.cls_offset();
        let k = plan.visible.len();
        let v2_len = enc_v2.tokens.shape()[0];
        if v2_len != off + k {
            return Err(ModelError::Contract(format!(
                "encoded V2 holds {} patch tokens but the plan keeps {k}",
                v2_len - off.min(v2_len)
            )));
        }
        let v1_len = enc_v1.tokens.shape()[0];
        if v1_len != off + n {
            return Err(ModelError::Contract(format!(
                "encoded V1 holds {} patch tokens, expected {n}",
                v1_len - off.min(v1_len)
            )));
        }
        let embed = &self.weights.decoder_embed;
        let visible = linear(&enc_v2.tokens.narrow(0, off, k)?, embed)?;
        let memory = linear(&enc_v1.tokens.narrow(0, off, n)?, embed)?.add(&self.dec_pos)?;

        let masked = plan.masked();
        let mut x = visible.scatter(0, &plan.visible, n)?;
        if !masked.is_empty() {
            let fill = self.weights.mask_token.gather(0, &vec![0; masked.len()])?;
            x = x.add(&fill.scatter(0, &masked, n)?)?;
        }
        x = x.add(&self.dec_pos)?;

        let (mut cross, mut selfs) = (Vec::new(), Vec::new());
        for b in &self.weights.decoder {
            let (next, cw, sw) = self.decoder_block(x, &memory, b, &mut rng, record)?;
            x = next;
            cross.extend(cw);
            selfs.extend(sw);
        }
        let pred = linear(&norm(&x, &self.weights.decoder_norm)?, &self.weights.head)?;
        Ok(Decoded {
            pred,
            cross_attention: cross,
            self_attention: selfs,
        })
    }
}

/// Per-head CLS attention over patch keys, `[heads, grid, grid]`, from
/// encoder layer `layer` (default: the last one).
pub fn extract_cls_attention<T: Element>(params: &ModelParams<T>, image: &Image, layer: Option<usize>) -> R<Tensor<T>> {
    let cfg = &params.config;
    if !cfg.encoder.with_cls {
        return Err(ModelError::Param("model has no CLS token".into()));
    }
    let depth = cfg.encoder.depth;
    let layer = layer.unwrap_or(depth.saturating_sub(1));
    if depth == 0 || layer >= depth {
        return Err(ModelError::Param(format!("layer {layer} out of range for depth {depth}")));
    }
    let tape = Tape::new();
    let net = params.bind_frozen(&tape);
    let enc = net.encode(image, None, true)?;
    let attn = &enc.attention[layer];
    let (heads, n) = (attn.shape()[0], attn.shape()[1]);
    let g = cfg.patch.grid();
    let mut out = Vec::with_capacity(heads * g * g);
    for h in 0..heads {
        let row = &attn.data()[h * n * n..h * n * n + n];
        out.extend_from_slice(&row[1..]);
    }
    Ok(Tensor::new(&[heads, g, g], out)?)
}
