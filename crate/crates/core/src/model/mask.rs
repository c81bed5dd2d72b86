use crate::numerics::Rng;

use super::ModelError;

/// Patch count at which the default ratio is quoted (224-pixel input, 16-pixel patches).
pub const REFERENCE_PATCHES: usize = 196;

/// Visible token selection for one masked view.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub n_patches: usize,
    pub ratio: f64,
    /// Strictly increasing.
    pub visible: Vec<usize>,
}

impl MaskPlan {
    /// Builds a plan from explicit indices, checking range and uniqueness.
    pub fn from_visible(n_patches: usize, mut visible: Vec<usize>) -> Result<Self, ModelError> {
        visible.sort_unstable();
        if visible.is_empty() {
            return Err(ModelError::Param("at least one visible patch is required".into()));
        }
        if visible.windows(2).any(|w| w[0] == w[1]) || visible.last().is_some_and(|&v| v >= n_patches) {
            return Err(ModelError::Contract(format!(
                "visible indices must be unique and below {n_patches}"
            )));
        }
        let ratio = 1.0 - visible.len() as f64 / n_patches as f64;
        Ok(Self {
            n_patches,
            ratio,
            visible,
        })
    }

    /// Every patch visible.
    pub fn full(n_patches: usize) -> Self {
        Self {
            n_patches,
            ratio: 0.0,
            visible: (0..n_patches).collect(),
        }
    }

    /// Complement of `visible`, increasing.
    pub fn masked(&self) -> Vec<usize> {
        let mut keep = vec![false; self.n_patches];
        for &v in &self.visible {
            keep[v] = true;
        }
        (0..self.n_patches).filter(|&i| !keep[i]).collect()
    }

    pub(crate) fn check(&self, n_patches: usize) -> Result<(), ModelError> {
        let ok = self.n_patches == n_patches
            && !self.visible.is_empty()
            && self.visible.windows(2).all(|w| w[0] < w[1])
            && self.visible.last().is_some_and(|&v| v < n_patches);
        if ok {
            Ok(())
        } else {
            Err(ModelError::Contract(format!(
                "mask plan over {} patches with {} visible is inconsistent with a {n_patches}-patch grid",
                self.n_patches,
                self.visible.len()
            )))
        }
    }
}

/// `floor((1 − ratio) · n)`. A tiny guard absorbs binary round-off such as
/// `(1 − 0.75) · 196 = 48.999…`.
pub fn visible_count(n_patches: usize, ratio: f64) -> usize {
    ((1.0 - ratio) * n_patches as f64 + 1e-9).floor().max(0.0) as usize
}

/// Samples `visible_count(n, ratio)` distinct patches uniformly, sorted.
pub fn make_mask_plan(n_patches: usize, ratio: f64, rng: &mut Rng) -> Result<MaskPlan, ModelError> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(ModelError::Param(format!("mask ratio {ratio} not in [0, 1)")));
    }
    let k = visible_count(n_patches, ratio);
    if k == 0 {
        return Err(ModelError::Param(format!(
            "mask ratio {ratio} on {n_patches} patches leaves no visible patch; at least one visible patch is required"
        )));
    }
    let mut order: Vec<usize> = (0..n_patches).collect();
    rng.shuffle(&mut order);
    order.truncate(k);
    order.sort_unstable();
    Ok(MaskPlan {
        n_patches,
        ratio,
        visible: order,
    })
}

/// Adapts a ratio quoted for the reference grid to `n_patches`. If the floor
/// law leaves at least one visible patch the ratio is kept; otherwise the
/// visible count it implies on the reference grid is carried over.
pub fn resolve_mask_ratio(ratio: f64, n_patches: usize) -> Result<f64, ModelError> {
    if !(0.0..1.0).contains(&ratio) || n_patches == 0 {
        return Err(ModelError::Param(format!("mask ratio {ratio} not in [0, 1)")));
    }
    if visible_count(n_patches, ratio) >= 1 {
        return Ok(ratio);
    }
    let k = visible_count(REFERENCE_PATCHES, ratio).clamp(1, n_patches);
    Ok(1.0 - k as f64 / n_patches as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_grid_counts() {
        let rows = [(0.75, 49), (0.90, 19), (0.95, 9), (0.985, 2), (0.99, 1)];
        for (ratio, k) in rows {
            assert_eq!(visible_count(196, ratio), k, "ratio {ratio}");
            let plan = make_mask_plan(196, ratio, &mut Rng::new(0, 0)).unwrap();
            assert_eq!(plan.visible.len(), k);
        }
    }

    #[test]
    fn zero_ratio_keeps_everything() {
        let plan = make_mask_plan(64, 0.0, &mut Rng::new(1, 1)).unwrap();
        assert_eq!(plan.visible, (0..64).collect::<Vec<_>>());
        assert!(plan.masked().is_empty());
    }

    #[test]
    fn empty_visible_set_rejected() {
        let err = make_mask_plan(64, 0.985, &mut Rng::new(0, 0)).unwrap_err();
        assert!(err.to_string().contains("at least one visible patch"));
        assert!(make_mask_plan(64, 1.0, &mut Rng::new(0, 0)).is_err());
    }

    #[test]
    fn desk_resolution_keeps_reference_count() {
        let r = resolve_mask_ratio(0.985, 64).unwrap();
        assert_eq!(visible_count(64, r), 2);
        assert_eq!(visible_count(64, 0.97), 1);
        assert_eq!(resolve_mask_ratio(0.75, 64).unwrap(), 0.75);
    }

    #[test]
    fn indices_uniform_over_positions() {
        let mut rng = Rng::new(4, 0);
        let mut hits = [0usize; 16];
        let trials = 20_000;
        for _ in 0..trials {
            for v in make_mask_plan(16, 0.75, &mut rng).unwrap().visible {
                hits[v] += 1;
            }
        }
        // Each cell is visible with probability 1/4.
        for h in hits {
            let frac = h as f64 / trials as f64;
            assert!((frac - 0.25).abs() < 0.015, "{frac}");
        }
    }

    #[test]
    fn explicit_plans_validated() {
        assert!(MaskPlan::from_visible(4, vec![1, 1]).is_err());
        assert!(MaskPlan::from_visible(4, vec![4]).is_err());
        assert!(MaskPlan::from_visible(4, vec![]).is_err());
        let p = MaskPlan::from_visible(4, vec![3, 0]).unwrap();
        assert_eq!(p.visible, vec![0, 3]);
        assert_eq!(p.masked(), vec![1, 2]);
    }
}
