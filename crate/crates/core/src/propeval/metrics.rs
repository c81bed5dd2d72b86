use crate::views::Keypoint;

use super::PropError;

fn same_len(a: usize, b: usize) -> Result<(), PropError> {
    if a == b {
        Ok(())
    } else {
        Err(PropError::Contract(format!("extents differ: {a} vs {b} pixels")))
    }
}

/// Region overlap `|p ∩ g| / |p ∪ g|`; 1 when both are empty.
pub fn jaccard_j(pred: &[bool], gt: &[bool]) -> Result<f64, PropError> {
    same_len(pred.len(), gt.len())?;
    let (mut inter, mut union) = (0usize, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        inter += usize::from(p && g);
        union += usize::from(p || g);
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// Foreground pixels with a 4-neighbour outside the mask. Pixels on the
/// image border are not boundary unless a neighbour inside the image is
/// background.
pub fn boundary_mask(mask: &[bool], h: usize, w: usize) -> Vec<bool> {
    let at = |y: usize, x: usize| mask[y * w + x];
    let mut out = vec![false; h * w];
    for y in 0..h {
        for x in 0..w {
            if !at(y, x) {
                continue;
            }
            out[y * w + x] = (y > 0 && !at(y - 1, x))
                || (y + 1 < h && !at(y + 1, x))
                || (x > 0 && !at(y, x - 1))
                || (x + 1 < w && !at(y, x + 1));
        }
    }
    out
}

/// Pixels within Euclidean distance `r` of any set pixel.
fn dilate(mask: &[bool], h: usize, w: usize, r: usize) -> Vec<bool> {
    let mut out = vec![false; h * w];
    let ri = r as i64;
    for y in 0..h {
        for x in 0..w {
            if !mask[y * w + x] {
                continue;
            }
            for dy in -ri..=ri {
                for dx in -ri..=ri {
                    if dy * dy + dx * dx > ri * ri {
                        continue;
                    }
                    let (yy, xx) = (y as i64 + dy, x as i64 + dx);
                    if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                        out[yy as usize * w + xx as usize] = true;
                    }
                }
            }
        }
    }
    out
}

/// `ceil(0.008 · diagonal)` pixels.
pub fn default_boundary_tol(h: usize, w: usize) -> usize {
    (0.008 * ((h * h + w * w) as f64).sqrt()).ceil() as usize
}

/// Boundary F1: a boundary pixel counts as matched when the other mask's
/// boundary lies within `tol` pixels. Both boundaries empty gives 1.
pub fn boundary_f(pred: &[bool], gt: &[bool], h: usize, w: usize, tol: usize) -> Result<f64, PropError> {
    same_len(pred.len(), gt.len())?;
    same_len(pred.len(), h * w)?;
    let (bp, bg) = (boundary_mask(pred, h, w), boundary_mask(gt, h, w));
    let (np, ng) = (bp.iter().filter(|&&b| b).count(), bg.iter().filter(|&&b| b).count());
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if np == 0 || ng == 0 {
        return Ok(0.0);
    }
    let (dp, dg) = (dilate(&bp, h, w, tol), dilate(&bg, h, w, tol));
    let hit_p = bp.iter().zip(&dg).filter(|(&b, &d)| b && d).count();
    let hit_g = bg.iter().zip(&dp).filter(|(&b, &d)| b && d).count();
    let precision = hit_p as f64 / np as f64;
    let recall = hit_g as f64 / ng as f64;
    Ok(if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JfScores {
    pub j: f64,
    pub f: f64,
    pub jf: f64,
}

/// Mean J and F over `objects`, each scored on its own binary mask.
pub fn jf_mean(pred: &[u8], gt: &[u8], h: usize, w: usize, objects: &[u8], tol: usize) -> Result<JfScores, PropError> {
    same_len(pred.len(), gt.len())?;
    if objects.is_empty() {
        return Err(PropError::Param("no objects to score".into()));
    }
    let (mut j, mut f) = (0.0, 0.0);
    for &o in objects {
        let p: Vec<bool> = pred.iter().map(|&v| v == o).collect();
        let g: Vec<bool> = gt.iter().map(|&v| v == o).collect();
        j += jaccard_j(&p, &g)?;
        f += boundary_f(&p, &g, h, w, tol)?;
    }
    let n = objects.len() as f64;
    let (j, f) = (j / n, f / n);
    Ok(JfScores { j, f, jf: (j + f) / 2.0 })
}

/// Mean IoU over the classes of `[0, k)` present in `gt`.
pub fn miou(pred: &[u8], gt: &[u8], k: usize) -> Result<f64, PropError> {
    same_len(pred.len(), gt.len())?;
    let mut inter = vec![0usize; k];
    let mut union = vec![0usize; k];
    let mut present = vec![false; k];
    for (&p, &g) in pred.iter().zip(gt) {
        let (p, g) = (usize::from(p), usize::from(g));
        if p >= k || g >= k {
            return Err(PropError::Param(format!("label outside [0, {k})")));
        }
        present[g] = true;
        if p == g {
            inter[p] += 1;
            union[p] += 1;
        } else {
            union[p] += 1;
            union[g] += 1;
        }
    }
    let scores: Vec<f64> = (0..k).filter(|&c| present[c]).map(|c| inter[c] as f64 / union[c] as f64).collect();
    if scores.is_empty() {
        return Err(PropError::Param("ground truth is empty".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

/// Fraction of keypoints within `alpha · scale` (inclusive) of their
/// ground-truth position. Lists are matched by position.
pub fn pck(pred: &[Keypoint], gt: &[Keypoint], alpha: f64, scale: f64) -> Result<f64, PropError> {
    if pred.len() != gt.len() {
        return Err(PropError::Contract(format!("{} predicted vs {} true keypoints", pred.len(), gt.len())));
    }
    if !(scale > 0.0) {
        return Err(PropError::Param(format!("scale {scale} must be positive")));
    }
    if gt.is_empty() {
        return Err(PropError::Param("no keypoints".into()));
    }
    let limit = alpha * scale;
    let hits = pred
        .iter()
        .zip(gt)
        .filter(|(p, g)| ((p.x - g.x).powi(2) + (p.y - g.y).powi(2)).sqrt() <= limit)
        .count();
    Ok(hits as f64 / gt.len() as f64)
}

/// Longer side of the annotation's bounding box.
pub fn keypoint_scale(gt: &[Keypoint]) -> f64 {
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for k in gt {
        x0 = x0.min(k.x);
        x1 = x1.max(k.x);
        y0 = y0.min(k.y);
        y1 = y1.max(k.y);
    }
    (x1 - x0).max(y1 - y0)
}

/// Nearest-neighbour expansion of a `gh × gw` label grid to `h × w` pixels.
pub fn upsample_labels(labels: &[u8], gh: usize, gw: usize, h: usize, w: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let sy = y * gh / h;
        for x in 0..w {
            out.push(labels[sy * gw + x * gw / w]);
        }
    }
    out
}

/// Majority label of each cell when `h × w` pixels are pooled onto a
/// `gh × gw` grid; ties go to the lower label.
pub fn downsample_labels(labels: &[u8], h: usize, w: usize, gh: usize, gw: usize) -> Vec<u8> {
    let mut out = Vec::with_capacity(gh * gw);
    for cy in 0..gh {
        for cx in 0..gw {
            let mut counts = [0usize; 256];
            for y in cy * h / gh..(cy + 1) * h / gh {
                for x in cx * w / gw..(cx + 1) * w / gw {
                    counts[usize::from(labels[y * w + x])] += 1;
                }
            }
            let mut best = 0;
            for (l, &c) in counts.iter().enumerate() {
                if c > counts[best] {
                    best = l;
                }
            }
            out.push(best as u8);
        }
    }
    out
}
