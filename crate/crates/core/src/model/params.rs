//! Named parameter tree, generic over the leaf type so the same layout
//! holds shapes, tensors, tape variables, gradients or optimizer moments.

use crate::numerics::{domain, Element, Rng, Tensor};

use super::config::ModelConfig;
use super::patch::pos_embed_2d;
use super::ModelError;

const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gain: P,
    pub bias: P,
}

/// Fused input projection for attention. Keys carry no bias: adding a
/// constant to every key shifts all scores of a query equally, so its
/// gradient is identically zero.
#[derive(Clone, Debug, PartialEq)]
pub struct QkvProj<P> {
    pub weight: P,
    pub q_bias: P,
    pub v_bias: P,
}

/// Keys and values from the context tokens; value bias only.
#[derive(Clone, Debug, PartialEq)]
pub struct KvProj<P> {
    pub weight: P,
    pub v_bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock<P> {
    pub norm1: Norm<P>,
    pub qkv: QkvProj<P>,
    pub proj: Linear<P>,
    pub norm2: Norm<P>,
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderBlock<P> {
    pub cross_norm_q: Norm<P>,
    pub cross_norm_kv: Norm<P>,
    pub cross_q: Linear<P>,
    pub cross_kv: KvProj<P>,
    pub cross_proj: Linear<P>,
    pub ff_norm: Norm<P>,
    pub ff1: Linear<P>,
    pub ff2: Linear<P>,
    pub self_norm: Norm<P>,
    pub self_qkv: QkvProj<P>,
    pub self_proj: Linear<P>,
}

/// Every trainable tensor. There is a single `encoder` block list; both
/// views run through it.
#[derive(Clone, Debug, PartialEq)]
pub struct Params<P> {
    pub patch_embed: Linear<P>,
    pub cls_token: Option<P>,
    pub encoder: Vec<EncoderBlock<P>>,
    pub encoder_norm: Norm<P>,
    pub decoder_embed: Linear<P>,
    pub mask_token: P,
    pub decoder: Vec<DecoderBlock<P>>,
    pub decoder_norm: Norm<P>,
    pub head: Linear<P>,
}

type MapFn<'a, 'f, P, Q> = &'f mut dyn FnMut(&str, &'a P) -> Q;
type VisitMut<'f, P> = &'f mut dyn FnMut(&str, &mut P);

impl<P> Linear<P> {
    fn map<'a, Q>(&'a self, prefix: &str, f: MapFn<'a, '_, P, Q>) -> Linear<Q> {
        Linear {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([&mut self.weight, &mut self.bias]);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<P> QkvProj<P> {
    fn map<'a, Q>(&'a self, prefix: &str, f: MapFn<'a, '_, P, Q>) -> QkvProj<Q> {
        QkvProj {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            q_bias: f(&format!("{prefix}.q_bias"), &self.q_bias),
            v_bias: f(&format!("{prefix}.v_bias"), &self.v_bias),
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([&mut self.weight, &mut self.q_bias, &mut self.v_bias]);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.q_bias"), &mut self.q_bias);
        f(&format!("{prefix}.v_bias"), &mut self.v_bias);
    }
}

impl<P> KvProj<P> {
    fn map<'a, Q>(&'a self, prefix: &str, f: MapFn<'a, '_, P, Q>) -> KvProj<Q> {
        KvProj {
            weight: f(&format!("{prefix}.weight"), &self.weight),
            v_bias: f(&format!("{prefix}.v_bias"), &self.v_bias),
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([&mut self.weight, &mut self.v_bias]);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        f(&format!("{prefix}.weight"), &mut self.weight);
        f(&format!("{prefix}.v_bias"), &mut self.v_bias);
    }
}

impl<P> Norm<P> {
    fn map<'a, Q>(&'a self, prefix: &str, f: MapFn<'a, '_, P, Q>) -> Norm<Q> {
        Norm {
            gain: f(&format!("{prefix}.gain"), &self.gain),
            bias: f(&format!("{prefix}.bias"), &self.bias),
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        out.extend([&mut self.gain, &mut self.bias]);
    }

    fn visit_mut(&mut self, prefix: &str, f: VisitMut<'_, P>) {
        f(&format!("{prefix}.gain"), &mut self.gain);
        f(&format!("{prefix}.bias"), &mut self.bias);
    }
}

impl<P> EncoderBlock<P> {
    fn map<'a, Q>(&'a self, p: &str, f: MapFn<'a, '_, P, Q>) -> EncoderBlock<Q> {
        EncoderBlock {
            norm1: self.norm1.map(&format!("{p}.norm1"), f),
            qkv: self.qkv.map(&format!("{p}.attn.qkv"), f),
            proj: self.proj.map(&format!("{p}.attn.proj"), f),
            norm2: self.norm2.map(&format!("{p}.norm2"), f),
            fc1: self.fc1.map(&format!("{p}.mlp.fc1"), f),
            fc2: self.fc2.map(&format!("{p}.mlp.fc2"), f),
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        self.norm1.leaves_mut(out);
        self.qkv.leaves_mut(out);
        self.proj.leaves_mut(out);
        self.norm2.leaves_mut(out);
        self.fc1.leaves_mut(out);
        self.fc2.leaves_mut(out);
    }

    fn visit_mut(&mut self, p: &str, f: VisitMut<'_, P>) {
        self.norm1.visit_mut(&format!("{p}.norm1"), f);
        self.qkv.visit_mut(&format!("{p}.attn.qkv"), f);
        self.proj.visit_mut(&format!("{p}.attn.proj"), f);
        self.norm2.visit_mut(&format!("{p}.norm2"), f);
        self.fc1.visit_mut(&format!("{p}.mlp.fc1"), f);
        self.fc2.visit_mut(&format!("{p}.mlp.fc2"), f);
    }
}

impl<P> DecoderBlock<P> {
    fn map<'a, Q>(&'a self, p: &str, f: MapFn<'a, '_, P, Q>) -> DecoderBlock<Q> {
        DecoderBlock {
            cross_norm_q: self.cross_norm_q.map(&format!("{p}.cross.norm_q"), f),
            cross_norm_kv: self.cross_norm_kv.map(&format!("{p}.cross.norm_kv"), f),
            cross_q: self.cross_q.map(&format!("{p}.cross.q"), f),
            cross_kv: self.cross_kv.map(&format!("{p}.cross.kv"), f),
            cross_proj: self.cross_proj.map(&format!("{p}.cross.proj"), f),
            ff_norm: self.ff_norm.map(&format!("{p}.ff.norm"), f),
            ff1: self.ff1.map(&format!("{p}.ff.fc1"), f),
            ff2: self.ff2.map(&format!("{p}.ff.fc2"), f),
            self_norm: self.self_norm.map(&format!("{p}.self.norm"), f),
            self_qkv: self.self_qkv.map(&format!("{p}.self.qkv"), f),
            self_proj: self.self_proj.map(&format!("{p}.self.proj"), f),
        }
    }

    fn leaves_mut<'a>(&'a mut self, out: &mut Vec<&'a mut P>) {
        self.cross_norm_q.leaves_mut(out);
        self.cross_norm_kv.leaves_mut(out);
        self.cross_q.leaves_mut(out);
        self.cross_kv.leaves_mut(out);
        self.cross_proj.leaves_mut(out);
        self.ff_norm.leaves_mut(out);
        self.ff1.leaves_mut(out);
        self.ff2.leaves_mut(out);
        self.self_norm.leaves_mut(out);
        self.self_qkv.leaves_mut(out);
        self.self_proj.leaves_mut(out);
    }

    fn visit_mut(&mut self, p: &str, f: VisitMut<'_, P>) {
        self.cross_norm_q.visit_mut(&format!("{p}.cross.norm_q"), f);
        self.cross_norm_kv.visit_mut(&format!("{p}.cross.norm_kv"), f);
        self.cross_q.visit_mut(&format!("{p}.cross.q"), f);
        self.cross_kv.visit_mut(&format!("{p}.cross.kv"), f);
        self.cross_proj.visit_mut(&format!("{p}.cross.proj"), f);
        self.ff_norm.visit_mut(&format!("{p}.ff.norm"), f);
        self.ff1.visit_mut(&format!("{p}.ff.fc1"), f);
        self.ff2.visit_mut(&format!("{p}.ff.fc2"), f);
        self.self_norm.visit_mut(&format!("{p}.self.norm"), f);
        self.self_qkv.visit_mut(&format!("{p}.self.qkv"), f);
        self.self_proj.visit_mut(&format!("{p}.self.proj"), f);
    }
}

impl<P> Params<P> {
    /// Applies `f` to every leaf in canonical order, passing its name.
    pub fn map<'a, Q>(&'a self, f: &mut dyn FnMut(&str, &'a P) -> Q) -> Params<Q> {
        Params {
            patch_embed: self.patch_embed.map("patch_embed", f),
            cls_token: self.cls_token.as_ref().map(|c| f("cls_token", c)),
            encoder: self
                .encoder
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("encoder.{i}"), f))
                .collect(),
            encoder_norm: self.encoder_norm.map("encoder_norm", f),
            decoder_embed: self.decoder_embed.map("decoder_embed", f),
            mask_token: f("mask_token", &self.mask_token),
            decoder: self
                .decoder
                .iter()
                .enumerate()
                .map(|(i, b)| b.map(&format!("decoder.{i}"), f))
                .collect(),
            decoder_norm: self.decoder_norm.map("decoder_norm", f),
            head: self.head.map("head", f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(&str, &mut P)) {
        self.patch_embed.visit_mut("patch_embed", f);
        if let Some(c) = self.cls_token.as_mut() {
            f("cls_token", c);
        }
        for (i, b) in self.encoder.iter_mut().enumerate() {
            b.visit_mut(&format!("encoder.{i}"), f);
        }
        self.encoder_norm.visit_mut("encoder_norm", f);
        self.decoder_embed.visit_mut("decoder_embed", f);
        f("mask_token", &mut self.mask_token);
        for (i, b) in self.decoder.iter_mut().enumerate() {
            b.visit_mut(&format!("decoder.{i}"), f);
        }
        self.decoder_norm.visit_mut("decoder_norm", f);
        self.head.visit_mut("head", f);
    }

    /// Mutable leaves in canonical order (the order of [`named`](Self::named)).
    pub fn leaves_mut(&mut self) -> Vec<&mut P> {
        let mut out = Vec::new();
        self.patch_embed.leaves_mut(&mut out);
        if let Some(c) = self.cls_token.as_mut() {
            out.push(c);
        }
        for b in &mut self.encoder {
            b.leaves_mut(&mut out);
        }
        self.encoder_norm.leaves_mut(&mut out);
        self.decoder_embed.leaves_mut(&mut out);
        out.push(&mut self.mask_token);
        for b in &mut self.decoder {
            b.leaves_mut(&mut out);
        }
        self.decoder_norm.leaves_mut(&mut out);
        self.head.leaves_mut(&mut out);
        out
    }

    /// `(name, leaf)` pairs in canonical order.
    pub fn named(&self) -> Vec<(String, &P)> {
        let mut out = Vec::new();
        self.map(&mut |name, p| out.push((name.to_string(), p)));
        out
    }

    pub fn names(&self) -> Vec<String> {
        self.named().into_iter().map(|(n, _)| n).collect()
    }

    /// Rebuilds a tree with this layout from leaves in canonical order.
    pub fn rebuild<Q>(&self, leaves: Vec<Q>) -> Result<Params<Q>, ModelError> {
        let expected = self.named().len();
        if leaves.len() != expected {
            return Err(ModelError::Contract(format!(
                "expected {expected} parameter tensors, got {}",
                leaves.len()
            )));
        }
        let mut it = leaves.into_iter();
        Ok(self.map(&mut |_, _| it.next().expect("length checked")))
    }
}

/// Weight decay applies to projection matrices only; biases, norm gains and
/// the CLS/mask tokens are exempt.
pub fn decays(name: &str) -> bool {
    name.ends_with(".weight")
}

/// Shapes of every parameter for `cfg`.
pub fn shape_tree(cfg: &ModelConfig) -> Params<Vec<usize>> {
    let (e, d) = (cfg.encoder.dim, cfg.decoder.dim);
    let pd = cfg.patch.patch_dim();
    let lin = |i: usize, o: usize| Linear {
        weight: vec![i, o],
        bias: vec![o],
    };
    let norm = |n: usize| Norm {
        gain: vec![n],
        bias: vec![n],
    };
    let qkv = |n: usize| QkvProj {
        weight: vec![n, 3 * n],
        q_bias: vec![n],
        v_bias: vec![n],
    };
    let hidden = e * cfg.encoder.mlp_ratio;
    Params {
        patch_embed: lin(pd, e),
        cls_token: cfg.encoder.with_cls.then(|| vec![1, e]),
        encoder: (0..cfg.encoder.depth)
            .map(|_| EncoderBlock {
                norm1: norm(e),
                qkv: qkv(e),
                proj: lin(e, e),
                norm2: norm(e),
                fc1: lin(e, hidden),
                fc2: lin(hidden, e),
            })
            .collect(),
        encoder_norm: norm(e),
        decoder_embed: lin(e, d),
        mask_token: vec![1, d],
        decoder: (0..cfg.decoder.depth)
            .map(|_| DecoderBlock {
                cross_norm_q: norm(d),
                cross_norm_kv: norm(d),
                cross_q: lin(d, d),
                cross_kv: KvProj {
                    weight: vec![d, 2 * d],
                    v_bias: vec![d],
                },
                cross_proj: lin(d, d),
                ff_norm: norm(d),
                ff1: lin(d, cfg.decoder.ff_dim),
                ff2: lin(cfg.decoder.ff_dim, d),
                self_norm: norm(d),
                self_qkv: qkv(d),
                self_proj: lin(d, d),
            })
            .collect(),
        decoder_norm: norm(d),
        head: lin(d, pd),
    }
}

/// Trainable weights plus the fixed positional tables.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub weights: Params<Tensor<T>>,
    /// `(1 + N) × E` with a zero first row for CLS, or `N × E` without CLS.
    pub enc_pos: Tensor<T>,
    /// `N × D`.
    pub dec_pos: Tensor<T>,
}

impl<T: Element> ModelParams<T> {
    /// Truncated-normal (std 0.02) projections and tokens, zero biases, unit gains.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = Rng::new(seed, domain::INIT);
        let weights = shape_tree(&config).map(&mut |name, shape| {
            if name.ends_with(".gain") {
                Tensor::ones(shape)
            } else if name.ends_with("bias") {
                Tensor::zeros(shape)
            } else {
                Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.trunc_normal(INIT_STD)))
            }
        });
        Self::from_weights(config, weights)
    }

    /// Attaches positional tables to an existing weight set, checking shapes.
    pub fn from_weights(config: ModelConfig, weights: Params<Tensor<T>>) -> Result<Self, ModelError> {
        config.validate()?;
        let shapes = shape_tree(&config);
        let expected = shapes.named();
        let got = weights.named();
        if expected.len() != got.len() {
            return Err(ModelError::Contract(format!(
                "config needs {} tensors, weights hold {}",
                expected.len(),
                got.len()
            )));
        }
        for ((en, es), (gn, gt)) in expected.iter().zip(&got) {
            if en != gn || es.as_slice() != gt.shape() {
                return Err(ModelError::Contract(format!(
                    "parameter {gn} {:?} does not match expected {en} {es:?}",
                    gt.shape()
                )));
            }
        }
        let grid = config.patch.grid();
        let table = pos_embed_2d::<T>(grid, config.encoder.dim)?;
        let enc_pos = if config.encoder.with_cls {
            let mut data = vec![T::zero(); config.encoder.dim];
            data.extend_from_slice(table.data());
            Tensor::new(&[1 + grid * grid, config.encoder.dim], data)?
        } else {
            table
        };
        let dec_pos = pos_embed_2d::<T>(grid, config.decoder.dim)?;
        Ok(Self {
            config,
            weights,
            enc_pos,
            dec_pos,
        })
    }

    /// Number of trainable scalars actually stored.
    pub fn parameter_count(&self) -> usize {
        self.weights.named().iter().map(|(_, t)| t.numel()).sum()
    }

    /// Scalars in parameters whose name starts with `prefix`.
    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.weights
            .named()
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.named().iter().all(|(_, t)| t.is_finite())
    }

    pub fn cast<U: Element>(&self) -> ModelParams<U> {
        ModelParams {
            config: self.config,
            weights: self.weights.map(&mut |_, t| t.cast()),
            enc_pos: self.enc_pos.cast(),
            dec_pos: self.dec_pos.cast(),
        }
    }
}
