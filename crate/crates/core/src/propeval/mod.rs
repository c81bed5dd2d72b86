//! Label propagation over frozen-encoder feature grids, plus the region,
//! boundary, class and keypoint metrics used to score it.

mod eval;
mod metrics;

pub use eval::{
    evaluate_frames, evaluate_sequence, format_report, keypoint_field, keypoints_from_field, labels_to_field, EvalConfig,
    SequenceReport,
};
pub use metrics::{
    boundary_f, boundary_mask, default_boundary_tol, downsample_labels, jaccard_j, jf_mean, keypoint_scale, miou, pck,
    upsample_labels, JfScores,
};

use std::cmp::Ordering;

use thiserror::Error;

use crate::model::{ModelError, ModelParams};
use crate::numerics::{Element, Tape};
use crate::views::{Image, ViewError};

#[derive(Debug, Error)]
pub enum PropError {
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    View(#[from] ViewError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-location unit vectors on an `h × w` token grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureGrid {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    /// Row-major `[h, w, d]`.
    pub data: Vec<f32>,
}

impl FeatureGrid {
    /// L2-normalizes every location of `raw`. All-zero vectors stay zero.
    pub fn normalized(h: usize, w: usize, d: usize, mut raw: Vec<f32>) -> Result<Self, PropError> {
        if raw.len() != h * w * d || d == 0 {
            return Err(PropError::Param(format!("{h}×{w}×{d} grid cannot hold {} values", raw.len())));
        }
        for v in raw.chunks_exact_mut(d) {
            let n = v.iter().map(|x| (*x as f64).powi(2)).sum::<f64>().sqrt();
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x = (*x as f64 / n) as f32);
            }
        }
        Ok(Self { h, w, d, data: raw })
    }

    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.w + x) * self.d;
        &self.data[i..i + self.d]
    }
}

/// Soft class scores on an `h × w` grid; each location sums to 1.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelField {
    pub h: usize,
    pub w: usize,
    pub k: usize,
    /// Row-major `[h, w, k]`.
    pub data: Vec<f32>,
}

impl LabelField {
    /// One-hot field from hard labels in `[0, k)`.
    pub fn one_hot(h: usize, w: usize, k: usize, labels: &[u8]) -> Result<Self, PropError> {
        if labels.len() != h * w {
            return Err(PropError::Contract(format!("{h}×{w} field given {} labels", labels.len())));
        }
        let mut data = vec![0.0; h * w * k];
        for (i, &l) in labels.iter().enumerate() {
            if usize::from(l) >= k {
                return Err(PropError::Param(format!("label {l} outside [0, {k})")));
            }
            data[i * k + usize::from(l)] = 1.0;
        }
        Ok(Self { h, w, k, data })
    }

    pub fn at(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.w + x) * self.k;
        &self.data[i..i + self.k]
    }

    /// Highest-scoring class per location; ties go to the lower class.
    pub fn argmax(&self) -> Vec<u8> {
        self.data
            .chunks_exact(self.k)
            .map(|s| {
                let mut best = 0;
                for c in 1..s.len() {
                    if s[c] > s[best] {
                        best = c;
                    }
                }
                best as u8
            })
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PropagationConfig {
    pub top_k: usize,
    pub queue_len: usize,
    /// Chebyshev radius in grid cells.
    pub radius: usize,
    pub temperature: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            top_k: 7,
            queue_len: 20,
            radius: 20,
            temperature: 0.07,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<(), PropError> {
        if self.top_k == 0 {
            return Err(PropError::Param("top_k must be at least 1".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(PropError::Param(format!("temperature {} must be positive", self.temperature)));
        }
        Ok(())
    }
}

/// Last-layer patch tokens of `frame` (CLS dropped), unit length per location.
pub fn extract_feature_grid<T: Element>(params: &ModelParams<T>, frame: &Image) -> Result<FeatureGrid, PropError> {
    let size = params.config.patch.image_size;
    if frame.height() != size || frame.width() != size {
        return Err(PropError::Param(format!(
            "frame is {}×{} but the encoder expects {size}×{size}",
            frame.height(),
            frame.width()
        )));
    }
    let tape = Tape::new();
    let net = params.bind_frozen(&tape);
    let tokens = net.encode(frame, None, false)?.tokens.value();
    let g = params.config.patch.grid();
    let d = params.config.encoder.dim;
    let skip = if params.config.encoder.with_cls { d } else { 0 };
    let raw = tokens.data()[skip..].iter().map(|v| v.as_f64() as f32).collect();
    FeatureGrid::normalized(g, g, d, raw)
}

fn dot(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One context location scored against a query.
#[derive(Clone, Copy, Debug)]
struct Candidate {
    affinity: f32,
    /// Position of the context frame in the context list.
    slot: usize,
    y: usize,
    x: usize,
}

/// Higher affinity first; ties by context slot, then row, then column.
fn rank(a: &Candidate, b: &Candidate) -> Ordering {
    b.affinity
        .total_cmp(&a.affinity)
        .then(a.slot.cmp(&b.slot))
        .then(a.y.cmp(&b.y))
        .then(a.x.cmp(&b.x))
}

/// Softmax-weighted label vote over ranked candidates, accumulated in rank order.
fn vote(kept: &[Candidate], labels: &[&LabelField], k: usize, tau: f64) -> Vec<f32> {
    let top = kept[0].affinity as f64;
    let mut acc = vec![0.0f64; k];
    let mut total = 0.0;
    for c in kept {
        let w = ((c.affinity as f64 - top) / tau).exp();
        total += w;
        for (a, &l) in acc.iter_mut().zip(labels[c.slot].at(c.y, c.x)) {
            *a += w * l as f64;
        }
    }
    acc.into_iter().map(|a| (a / total) as f32).collect()
}

/// Context frame indices for query frame `t`: the first frame, then up to
/// `queue_len` of the most recent predictions, oldest first.
fn context_frames(t: usize, queue_len: usize) -> Vec<usize> {
    let start = t.saturating_sub(queue_len).max(1);
    std::iter::once(0).chain(start..t).collect()
}

fn check_inputs(frames: &[FeatureGrid], first: &LabelField, cfg: &PropagationConfig) -> Result<(), PropError> {
    cfg.validate()?;
    let Some(f0) = frames.first() else {
        return Err(PropError::Param("need at least one frame".into()));
    };
    if let Some(bad) = frames.iter().find(|f| (f.h, f.w, f.d) != (f0.h, f0.w, f0.d)) {
        return Err(PropError::Contract(format!(
            "feature grids differ: {}×{}×{} vs {}×{}×{}",
            bad.h, bad.w, bad.d, f0.h, f0.w, f0.d
        )));
    }
    if (first.h, first.w) != (f0.h, f0.w) {
        return Err(PropError::Contract(format!(
            "labels are {}×{} but features are {}×{}",
            first.h, first.w, f0.h, f0.w
        )));
    }
    Ok(())
}

/// Propagates `first` through `frames`. Returns one soft field per frame,
/// starting with `first` itself.
pub fn propagate(
    frames: &[FeatureGrid],
    first: &LabelField,
    cfg: &PropagationConfig,
) -> Result<Vec<LabelField>, PropError> {
    check_inputs(frames, first, cfg)?;
    let (h, w, k) = (first.h, first.w, first.k);
    let r = cfg.radius;
    let mut out = vec![first.clone()];
    let mut pool = Vec::new();
    for t in 1..frames.len() {
        let ctx = context_frames(t, cfg.queue_len);
        let labels: Vec<&LabelField> = ctx.iter().map(|&c| &out[c]).collect();
        let mut data = Vec::with_capacity(h * w * k);
        for qy in 0..h {
            for qx in 0..w {
                let q = frames[t].at(qy, qx);
                pool.clear();
                let (y0, y1) = (qy.saturating_sub(r), (qy + r).min(h - 1));
                let (x0, x1) = (qx.saturating_sub(r), (qx + r).min(w - 1));
                for (slot, &c) in ctx.iter().enumerate() {
                    for y in y0..=y1 {
                        for x in x0..=x1 {
                            pool.push(Candidate {
                                affinity: dot(q, frames[c].at(y, x)),
                                slot,
                                y,
                                x,
                            });
                        }
                    }
                }
                let keep = cfg.top_k.min(pool.len());
                if keep < pool.len() {
                    pool.select_nth_unstable_by(keep - 1, rank);
                    pool.truncate(keep);
                }
                pool.sort_unstable_by(rank);
                data.extend(vote(&pool, &labels, k, cfg.temperature));
            }
        }
        out.push(LabelField { h, w, k, data });
    }
    Ok(out)
}

/// Same contract as [`propagate`], by exhaustive enumeration: every location
/// of every context frame is scored, fully sorted, then filtered by distance.
pub fn propagate_reference(
    frames: &[FeatureGrid],
    first: &LabelField,
    cfg: &PropagationConfig,
) -> Result<Vec<LabelField>, PropError> {
    check_inputs(frames, first, cfg)?;
    let (h, w, k) = (first.h, first.w, first.k);
    let mut out = vec![first.clone()];
    for t in 1..frames.len() {
        let ctx = context_frames(t, cfg.queue_len);
        let labels: Vec<&LabelField> = ctx.iter().map(|&c| &out[c]).collect();
        let mut data = Vec::new();
        for qy in 0..h {
            for qx in 0..w {
                let mut all = Vec::new();
                for (slot, &c) in ctx.iter().enumerate() {
                    for y in 0..h {
                        for x in 0..w {
                            all.push(Candidate {
                                affinity: dot(frames[t].at(qy, qx), frames[c].at(y, x)),
                                slot,
                                y,
                                x,
                            });
                        }
                    }
                }
                all.sort_by(rank);
                let near: Vec<Candidate> = all
                    .into_iter()
                    .filter(|c| c.y.abs_diff(qy).max(c.x.abs_diff(qx)) <= cfg.radius)
                    .take(cfg.top_k)
                    .collect();
                data.extend(vote(&near, &labels, k, cfg.temperature));
            }
        }
        out.push(LabelField { h, w, k, data });
    }
    Ok(out)
}
