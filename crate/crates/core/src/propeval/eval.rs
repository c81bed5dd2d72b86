use std::fmt::Write as _;

use crate::model::ModelParams;
use crate::numerics::Element;
use crate::views::{Image, Keypoint, LabelMap, SequenceFiles};

use super::metrics::{default_boundary_tol, downsample_labels, jf_mean, keypoint_scale, miou, pck, upsample_labels};
use super::{extract_feature_grid, propagate, LabelField, PropError, PropagationConfig};

#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub propagation: PropagationConfig,
    /// Boundary matching tolerance in pixels; `None` uses 0.8% of the diagonal.
    pub boundary_tol: Option<usize>,
    pub pck_alphas: (f64, f64),
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            propagation: PropagationConfig::default(),
            boundary_tol: None,
            pck_alphas: (0.1, 0.2),
        }
    }
}

/// Scores of one sequence, averaged over frames after the first.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceReport {
    pub name: String,
    pub frames: usize,
    pub j: f64,
    pub f: f64,
    pub jf: f64,
    pub miou: f64,
    /// At the two configured thresholds; absent without keypoint files.
    pub pck: Option<(f64, f64)>,
}

/// Pools a pixel label map onto the feature grid and one-hot encodes it.
pub fn labels_to_field(map: &LabelMap, gh: usize, gw: usize, k: usize) -> Result<LabelField, PropError> {
    LabelField::one_hot(gh, gw, k, &downsample_labels(&map.data, map.height, map.width, gh, gw))
}

/// One channel per keypoint plus background (channel 0); each keypoint marks
/// the grid cell containing it. Returns the field and the keypoint ids in
/// channel order.
pub fn keypoint_field(
    points: &[Keypoint],
    h: usize,
    w: usize,
    gh: usize,
    gw: usize,
) -> Result<(LabelField, Vec<usize>), PropError> {
    let inside: Vec<&Keypoint> = points
        .iter()
        .filter(|k| k.x >= 0.0 && k.y >= 0.0 && k.x < w as f64 && k.y < h as f64)
        .collect();
    if inside.len() > 254 {
        return Err(PropError::Param(format!("{} keypoints exceed the 254-channel limit", inside.len())));
    }
    let mut labels = vec![0u8; gh * gw];
    for (c, k) in inside.iter().enumerate() {
        let cy = (k.y as usize * gh / h).min(gh - 1);
        let cx = (k.x as usize * gw / w).min(gw - 1);
        labels[cy * gw + cx] = (c + 1) as u8;
    }
    let field = LabelField::one_hot(gh, gw, inside.len() + 1, &labels)?;
    Ok((field, inside.iter().map(|k| k.id).collect()))
}

/// Each keypoint channel's highest-scoring cell, as a pixel-space cell centre.
pub fn keypoints_from_field(field: &LabelField, ids: &[usize], h: usize, w: usize) -> Vec<Keypoint> {
    ids.iter()
        .enumerate()
        .map(|(c, &id)| {
            let mut best = 0;
            for i in 1..field.h * field.w {
                if field.data[i * field.k + c + 1] > field.data[best * field.k + c + 1] {
                    best = i;
                }
            }
            let (gy, gx) = (best / field.w, best % field.w);
            Keypoint {
                id,
                x: (gx as f64 + 0.5) * w as f64 / field.w as f64,
                y: (gy as f64 + 0.5) * h as f64 / field.h as f64,
            }
        })
        .collect()
}

fn check_extent(what: &str, h: usize, w: usize, want: (usize, usize)) -> Result<(), PropError> {
    if (h, w) == want {
        Ok(())
    } else {
        Err(PropError::Contract(format!(
            "{what} is {h}×{w}, expected {}×{} (the encoder input size)",
            want.0, want.1
        )))
    }
}

/// Evaluates one annotated sequence from its first-frame mask (and
/// keypoints, when present).
pub fn evaluate_sequence<T: Element>(
    params: &ModelParams<T>,
    seq: &SequenceFiles,
    cfg: &EvalConfig,
) -> Result<SequenceReport, PropError> {
    let frames = seq.load_frames()?;
    let masks = (0..frames.len()).map(|i| seq.load_mask(i)).collect::<Result<Vec<_>, _>>()?;
    let keypoints = if seq.keypoint_path(0).exists() {
        Some((0..frames.len()).map(|i| seq.load_keypoints(i)).collect::<Result<Vec<_>, _>>()?)
    } else {
        None
    };
    evaluate_frames(params, &seq.name, &frames, &masks, keypoints.as_deref(), cfg)
}

/// [`evaluate_sequence`] on frames already in memory.
pub fn evaluate_frames<T: Element>(
    params: &ModelParams<T>,
    name: &str,
    frames: &[Image],
    masks: &[LabelMap],
    keypoints: Option<&[Vec<Keypoint>]>,
    cfg: &EvalConfig,
) -> Result<SequenceReport, PropError> {
    if frames.len() < 2 || masks.len() != frames.len() {
        return Err(PropError::Contract(format!(
            "{name}: need at least two frames with one mask each ({} frames, {} masks)",
            frames.len(),
            masks.len()
        )));
    }
    let size = params.config.patch.image_size;
    for f in frames {
        check_extent("frame", f.height(), f.width(), (size, size))?;
    }
    for m in masks {
        check_extent("mask", m.height, m.width, (size, size))?;
    }
    let grids = frames
        .iter()
        .map(|f| extract_feature_grid(params, f))
        .collect::<Result<Vec<_>, _>>()?;
    let (gh, gw) = (grids[0].h, grids[0].w);
    let k = usize::from(masks.iter().map(LabelMap::max_label).max().unwrap_or(0)) + 1;
    let k = k.max(2);
    let out = propagate(&grids, &labels_to_field(&masks[0], gh, gw, k)?, &cfg.propagation)?;

    let mut objects: Vec<u8> = masks[0].data.iter().copied().filter(|&l| l > 0).collect();
    objects.sort_unstable();
    objects.dedup();
    let tol = cfg.boundary_tol.unwrap_or_else(|| default_boundary_tol(size, size));
    let (mut j, mut f, mut iou) = (0.0, 0.0, 0.0);
    let n = (frames.len() - 1) as f64;
    for t in 1..frames.len() {
        let pred = upsample_labels(&out[t].argmax(), gh, gw, size, size);
        if !objects.is_empty() {
            let s = jf_mean(&pred, &masks[t].data, size, size, &objects, tol)?;
            j += s.j;
            f += s.f;
        } else {
            j += 1.0;
            f += 1.0;
        }
        iou += miou(&pred, &masks[t].data, k)?;
    }
    let (j, f) = (j / n, f / n);

    let pck = match keypoints {
        Some(kps) if kps.len() == frames.len() => keypoint_pck(&grids, kps, size, cfg)?,
        _ => None,
    };
    Ok(SequenceReport {
        name: name.to_string(),
        frames: frames.len(),
        j,
        f,
        jf: (j + f) / 2.0,
        miou: iou / n,
        pck,
    })
}

fn keypoint_pck(
    grids: &[super::FeatureGrid],
    kps: &[Vec<Keypoint>],
    size: usize,
    cfg: &EvalConfig,
) -> Result<Option<(f64, f64)>, PropError> {
    let (gh, gw) = (grids[0].h, grids[0].w);
    let (field, ids) = keypoint_field(&kps[0], size, size, gh, gw)?;
    if ids.is_empty() {
        return Ok(None);
    }
    let out = propagate(grids, &field, &cfg.propagation)?;
    let (mut a, mut b, mut counted) = (0.0, 0.0, 0usize);
    for t in 1..grids.len() {
        let pred_all = keypoints_from_field(&out[t], &ids, size, size);
        let (mut pred, mut gt) = (Vec::new(), Vec::new());
        for p in pred_all {
            if let Some(g) = kps[t].iter().find(|g| g.id == p.id) {
                pred.push(p);
                gt.push(*g);
            }
        }
        let scale = keypoint_scale(&gt);
        if gt.is_empty() || !(scale > 0.0) {
            continue;
        }
        a += pck(&pred, &gt, cfg.pck_alphas.0, scale)?;
        b += pck(&pred, &gt, cfg.pck_alphas.1, scale)?;
        counted += 1;
    }
    Ok((counted > 0).then(|| (a / counted as f64, b / counted as f64)))
}

/// `key=value` lines: every metric of every sequence, then the means.
pub fn format_report(reports: &[SequenceReport], alphas: (f64, f64)) -> String {
    let mut s = String::new();
    let mut lines = |prefix: &str, j: f64, f: f64, jf: f64, iou: f64, pck: Option<(f64, f64)>| {
        let _ = writeln!(s, "{prefix}.J={j:.6}");
        let _ = writeln!(s, "{prefix}.F={f:.6}");
        let _ = writeln!(s, "{prefix}.JF={jf:.6}");
        let _ = writeln!(s, "{prefix}.mIoU={iou:.6}");
        if let Some((a, b)) = pck {
            let _ = writeln!(s, "{prefix}.PCK@{}={a:.6}", alphas.0);
            let _ = writeln!(s, "{prefix}.PCK@{}={b:.6}", alphas.1);
        }
    };
    for r in reports {
        lines(&r.name, r.j, r.f, r.jf, r.miou, r.pck);
    }
    if !reports.is_empty() {
        let n = reports.len() as f64;
        let mean = |g: fn(&SequenceReport) -> f64| reports.iter().map(g).sum::<f64>() / n;
        let with_pck: Vec<(f64, f64)> = reports.iter().filter_map(|r| r.pck).collect();
        let pck = (!with_pck.is_empty()).then(|| {
            let m = with_pck.len() as f64;
            (
                with_pck.iter().map(|p| p.0).sum::<f64>() / m,
                with_pck.iter().map(|p| p.1).sum::<f64>() / m,
            )
        });
        lines("mean", mean(|r| r.j), mean(|r| r.f), mean(|r| r.jf), mean(|r| r.miou), pck);
    }
    let _ = writeln!(s, "sequences={}", reports.len());
    s
}
