use std::fmt::Write as _;
use std::path::PathBuf;

use crate::model::{LossScope, ModelConfig};
use crate::optim::{AdamWConfig, ScheduleConfig};
use crate::views::{AugmentConfig, JitterStrength, Strategy};

use super::TrainError;

/// Everything that determines a training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub data: PathBuf,
    pub strategy: Strategy,
    pub augment: AugmentConfig,
    /// Quoted for the reference 196-patch grid; see [`crate::model::resolve_mask_ratio`].
    pub mask_ratio: f64,
    pub model: ModelConfig,
    pub schedule: ScheduleConfig,
    pub adamw: AdamWConfig,
    pub batch_size: usize,
    /// Training length in epochs when `steps` is unset.
    pub epochs: f64,
    /// Fixed training length in optimizer steps; overrides `epochs`.
    pub steps: Option<u64>,
    pub repeated_sampling: usize,
    pub seed: u64,
    /// Save a checkpoint every this many steps (0: final only).
    pub checkpoint_every: u64,
    pub loss_scope: LossScope,
    /// Inclusive range of the frame gap in frame-pair mode.
    pub frame_gap: (usize, usize),
    /// View-generation threads (0: one per available core).
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            data: PathBuf::new(),
            strategy: Strategy::GlobalToLocal,
            augment: AugmentConfig::default(),
            mask_ratio: 0.985,
            model: ModelConfig::desk(),
            schedule: ScheduleConfig {
                batch_size: 64,
                warmup_epochs: 10.0,
                total_epochs: 100.0,
                ..ScheduleConfig::default()
            },
            adamw: AdamWConfig::default(),
            batch_size: 64,
            epochs: 100.0,
            steps: None,
            repeated_sampling: 2,
            seed: 0,
            checkpoint_every: 0,
            loss_scope: LossScope::MaskedOnly,
            frame_gap: (4, 48),
            workers: 0,
        }
    }
}

/// Every accepted configuration key, in snapshot order.
pub const KEYS: &[&str] = &[
    "data",
    "strategy",
    "mask_ratio",
    "loss_scope",
    "seed",
    "batch_size",
    "repeated_sampling",
    "epochs",
    "steps",
    "warmup_epochs",
    "base_lr",
    "min_lr",
    "scale_lr",
    "reference_batch",
    "weight_decay",
    "beta1",
    "beta2",
    "adam_eps",
    "checkpoint_every",
    "workers",
    "image_size",
    "patch_size",
    "enc_depth",
    "enc_dim",
    "enc_heads",
    "enc_mlp_ratio",
    "enc_cls",
    "dec_depth",
    "dec_dim",
    "dec_ff_dim",
    "dec_heads",
    "dec_dropout",
    "area_v1_min",
    "area_v1_max",
    "area_v2_min",
    "area_v2_max",
    "aspect_min",
    "aspect_max",
    "hflip_p",
    "jitter",
    "blur_sigma",
    "frame_gap_min",
    "frame_gap_max",
];

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V, TrainError> {
    value.parse().map_err(|_| TrainError::Config {
        key: key.to_string(),
        msg: format!("cannot parse {value:?}"),
    })
}

fn parse_pair(key: &str, value: &str) -> Result<(f64, f64), TrainError> {
    let parts: Vec<&str> = value.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok((parse(key, a)?, parse(key, b)?)),
        _ => Err(TrainError::Config {
            key: key.to_string(),
            msg: format!("expected \"lo,hi\", got {value:?}"),
        }),
    }
}

/// Splits `key = value` lines; `#` starts a comment.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>, TrainError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| TrainError::Config {
            key: line.to_string(),
            msg: format!("line {} is not \"key = value\"", i + 1),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

impl TrainConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let v = value;
        match key {
            "data" => self.data = PathBuf::from(v),
            "strategy" => {
                self.strategy = v.parse().map_err(|e: crate::views::ViewError| TrainError::Config {
                    key: key.into(),
                    msg: e.to_string(),
                })?
            }
            "mask_ratio" => self.mask_ratio = parse(key, v)?,
            "loss_scope" => {
                self.loss_scope = v.parse().map_err(|e: crate::model::ModelError| TrainError::Config {
                    key: key.into(),
                    msg: e.to_string(),
                })?
            }
            "seed" => self.seed = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "repeated_sampling" => self.repeated_sampling = parse(key, v)?,
            "epochs" => self.epochs = parse(key, v)?,
            "steps" => {
                self.steps = match v {
                    "" | "none" => None,
                    _ => Some(parse(key, v)?),
                }
            }
            "warmup_epochs" => self.schedule.warmup_epochs = parse(key, v)?,
            "base_lr" => self.schedule.base_lr = parse(key, v)?,
            "min_lr" => self.schedule.min_lr = parse(key, v)?,
            "scale_lr" => self.schedule.scale_lr = parse(key, v)?,
            "reference_batch" => self.schedule.reference_batch = parse(key, v)?,
            "weight_decay" => self.adamw.weight_decay = parse(key, v)?,
            "beta1" => self.adamw.beta1 = parse(key, v)?,
            "beta2" => self.adamw.beta2 = parse(key, v)?,
            "adam_eps" => self.adamw.eps = parse(key, v)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, v)?,
            "workers" => self.workers = parse(key, v)?,
            "image_size" => {
                self.model.patch.image_size = parse(key, v)?;
                self.augment.output_size = self.model.patch.image_size;
            }
            "patch_size" => self.model.patch.patch_size = parse(key, v)?,
            "enc_depth" => self.model.encoder.depth = parse(key, v)?,
            "enc_dim" => self.model.encoder.dim = parse(key, v)?,
            "enc_heads" => self.model.encoder.heads = parse(key, v)?,
            "enc_mlp_ratio" => self.model.encoder.mlp_ratio = parse(key, v)?,
            "enc_cls" => self.model.encoder.with_cls = parse(key, v)?,
            "dec_depth" => self.model.decoder.depth = parse(key, v)?,
            "dec_dim" => self.model.decoder.dim = parse(key, v)?,
            "dec_ff_dim" => self.model.decoder.ff_dim = parse(key, v)?,
            "dec_heads" => self.model.decoder.heads = parse(key, v)?,
            "dec_dropout" => self.model.decoder.dropout = parse(key, v)?,
            "area_v1_min" => self.augment.area_outer.0 = parse(key, v)?,
            "area_v1_max" => self.augment.area_outer.1 = parse(key, v)?,
            "area_v2_min" => self.augment.area_inner.0 = parse(key, v)?,
            "area_v2_max" => self.augment.area_inner.1 = parse(key, v)?,
            "aspect_min" => self.augment.aspect.0 = parse(key, v)?,
            "aspect_max" => self.augment.aspect.1 = parse(key, v)?,
            "hflip_p" => self.augment.hflip_p = parse(key, v)?,
            "jitter" => {
                self.augment.jitter = match v {
                    "" | "none" => None,
                    _ => {
                        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                        let [b, c, s] = parts.as_slice() else {
                            return Err(TrainError::Config {
                                key: key.into(),
                                msg: "expected \"brightness,contrast,saturation\"".into(),
                            });
                        };
                        Some(JitterStrength {
                            brightness: parse(key, b)?,
                            contrast: parse(key, c)?,
                            saturation: parse(key, s)?,
                        })
                    }
                }
            }
            "blur_sigma" => {
                self.augment.blur_sigma = match v {
                    "" | "none" => None,
                    _ => Some(parse_pair(key, v)?),
                }
            }
            "frame_gap_min" => self.frame_gap.0 = parse(key, v)?,
            "frame_gap_max" => self.frame_gap.1 = parse(key, v)?,
            _ => {
                return Err(TrainError::Config {
                    key: key.to_string(),
                    msg: "unknown configuration key".into(),
                })
            }
        }
        Ok(())
    }

    /// Applies a flat `key = value` file on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (k, v) in parse_kv(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// Value of `key` as written by [`to_text`](Self::to_text).
    pub fn get(&self, key: &str) -> Option<String> {
        let a = &self.augment;
        let m = &self.model;
        Some(match key {
            "data" => self.data.display().to_string(),
            "strategy" => self.strategy.to_string(),
            "mask_ratio" => self.mask_ratio.to_string(),
            "loss_scope" => self.loss_scope.to_string(),
            "seed" => self.seed.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "repeated_sampling" => self.repeated_sampling.to_string(),
            "epochs" => self.epochs.to_string(),
            "steps" => self.steps.map_or_else(|| "none".to_string(), |s| s.to_string()),
            "warmup_epochs" => self.schedule.warmup_epochs.to_string(),
            "base_lr" => self.schedule.base_lr.to_string(),
            "min_lr" => self.schedule.min_lr.to_string(),
            "scale_lr" => self.schedule.scale_lr.to_string(),
            "reference_batch" => self.schedule.reference_batch.to_string(),
            "weight_decay" => self.adamw.weight_decay.to_string(),
            "beta1" => self.adamw.beta1.to_string(),
            "beta2" => self.adamw.beta2.to_string(),
            "adam_eps" => self.adamw.eps.to_string(),
            "checkpoint_every" => self.checkpoint_every.to_string(),
            "workers" => self.workers.to_string(),
            "image_size" => m.patch.image_size.to_string(),
            "patch_size" => m.patch.patch_size.to_string(),
            "enc_depth" => m.encoder.depth.to_string(),
            "enc_dim" => m.encoder.dim.to_string(),
            "enc_heads" => m.encoder.heads.to_string(),
            "enc_mlp_ratio" => m.encoder.mlp_ratio.to_string(),
            "enc_cls" => m.encoder.with_cls.to_string(),
            "dec_depth" => m.decoder.depth.to_string(),
            "dec_dim" => m.decoder.dim.to_string(),
            "dec_ff_dim" => m.decoder.ff_dim.to_string(),
            "dec_heads" => m.decoder.heads.to_string(),
            "dec_dropout" => m.decoder.dropout.to_string(),
            "area_v1_min" => a.area_outer.0.to_string(),
            "area_v1_max" => a.area_outer.1.to_string(),
            "area_v2_min" => a.area_inner.0.to_string(),
            "area_v2_max" => a.area_inner.1.to_string(),
            "aspect_min" => a.aspect.0.to_string(),
            "aspect_max" => a.aspect.1.to_string(),
            "hflip_p" => a.hflip_p.to_string(),
            "jitter" => a
                .jitter
                .as_ref()
                .map_or_else(|| "none".into(), |j| format!("{},{},{}", j.brightness, j.contrast, j.saturation)),
            "blur_sigma" => a.blur_sigma.map_or_else(|| "none".into(), |(lo, hi)| format!("{lo},{hi}")),
            "frame_gap_min" => self.frame_gap.0.to_string(),
            "frame_gap_max" => self.frame_gap.1.to_string(),
            _ => return None,
        })
    }

    /// Full snapshot as `key = value` lines; [`from_text`](Self::from_text) inverts it.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for key in KEYS {
            let _ = writeln!(s, "{key} = {}", self.get(key).expect("every key has a value"));
        }
        s
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |key: &str, msg: String| {
            Err(TrainError::Config {
                key: key.into(),
                msg,
            })
        };
        self.model.validate().map_err(|e| TrainError::Config {
            key: "model".into(),
            msg: e.to_string(),
        })?;
        self.augment.validate().map_err(|e| TrainError::Config {
            key: "augment".into(),
            msg: e.to_string(),
        })?;
        if self.augment.output_size != self.model.patch.image_size {
            return bad(
                "image_size",
                format!(
                    "view size {} differs from model input {}",
                    self.augment.output_size, self.model.patch.image_size
                ),
            );
        }
        if self.repeated_sampling == 0 {
            return bad("repeated_sampling", "must be at least 1".into());
        }
        if self.batch_size == 0 || self.batch_size % self.repeated_sampling != 0 {
            return bad(
                "batch_size",
                format!("{} is not a positive multiple of repeated_sampling {}", self.batch_size, self.repeated_sampling),
            );
        }
        if !(0.0..1.0).contains(&self.mask_ratio) {
            return bad("mask_ratio", format!("{} not in [0, 1)", self.mask_ratio));
        }
        if self.steps == Some(0) || (self.steps.is_none() && self.epochs <= 0.0) {
            return bad("epochs", "training length must be positive".into());
        }
        if self.frame_gap.0 == 0 || self.frame_gap.0 > self.frame_gap.1 {
            return bad("frame_gap_min", format!("gap range {:?} invalid", self.frame_gap));
        }
        if !(self.schedule.warmup_epochs >= 0.0) {
            return bad("warmup_epochs", "must be nonnegative".into());
        }
        Ok(())
    }
}
