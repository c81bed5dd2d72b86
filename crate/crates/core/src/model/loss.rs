use std::fmt;
use std::str::FromStr;

use crate::numerics::{Element, Rng, Tensor, Var};
use crate::views::ViewPair;

use super::mask::{make_mask_plan, MaskPlan};
use super::network::Network;
use super::patch::patchify;
use super::ModelError;

/// Which V2 patches contribute to the reconstruction loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossScope {
    #[default]
    MaskedOnly,
    All,
}

impl fmt::Display for LossScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossScope::MaskedOnly => "masked",
            LossScope::All => "all",
        })
    }
}

impl FromStr for LossScope {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "masked" | "masked_only" | "masked-only" => Ok(LossScope::MaskedOnly),
            "all" => Ok(LossScope::All),
            _ => Err(ModelError::Param(format!("unknown loss scope {s:?} (masked|all)"))),
        }
    }
}

/// Standardizes each row by its own mean and population variance.
pub fn normalize_patch_targets<T: Element>(patches: &Tensor<T>, eps: f64) -> Result<Tensor<T>, ModelError> {
    let (rows, cols) = patches.dims2()?;
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = patches.row(r);
        let mean = row.iter().map(|v| v.as_f64()).sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v.as_f64() - mean).powi(2)).sum::<f64>() / cols as f64;
        let inv = 1.0 / (var + eps).sqrt();
        out.extend(row.iter().map(|v| T::from_f64_lossy((v.as_f64() - mean) * inv)));
    }
    Ok(Tensor::new(&[rows, cols], out)?)
}

/// Mean squared error over the selected rows and all their elements.
pub fn reconstruction_loss<'t, T: Element>(
    pred: &Var<'t, T>,
    target: &Tensor<T>,
    plan: &MaskPlan,
    scope: LossScope,
) -> Result<Var<'t, T>, ModelError> {
    if pred.shape() != target.shape() {
        return Err(ModelError::Contract(format!(
            "prediction {:?} and target {:?} differ in shape",
            pred.shape(),
            target.shape()
        )));
    }
    let rows = match scope {
        LossScope::MaskedOnly => plan.masked(),
        LossScope::All => (0..plan.n_patches).collect(),
    };
    if rows.is_empty() {
        return Err(ModelError::Contract("loss selects no patches".into()));
    }
    let tape = pred.tape();
    let diff = pred.gather(0, &rows)?.sub(&tape.constant(target.clone()).gather(0, &rows)?)?;
    Ok(diff.mul(&diff)?.mean())
}

/// Target-view patch normalization epsilon.
pub const TARGET_EPS: f64 = 1e-6;

/// Full training objective for one view pair. The mask plan is drawn from
/// `rng` first; when `training` is set the decoder's dropout draws follow.
pub fn forward_train<'t, T: Element>(
    net: &Network<'t, T>,
    pair: &ViewPair,
    ratio: f64,
    scope: LossScope,
    rng: &mut Rng,
    training: bool,
) -> Result<(Var<'t, T>, MaskPlan), ModelError> {
    let n = net.config.patch.n_patches();
    let plan = make_mask_plan(n, ratio, rng)?;
    let enc_v1 = net.encode(&pair.v1, None, false)?;
    let enc_v2 = net.encode(&pair.v2, Some(&plan), false)?;
    let dec = net.decode(&enc_v2, &plan, &enc_v1, training.then_some(rng), false)?;
    let target = normalize_patch_targets(&patchify::<T>(&pair.v2, &net.config.patch)?, TARGET_EPS)?;
    let loss = reconstruction_loss(&dec.pred, &target, &plan, scope)?;
    Ok((loss, plan))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tape;

    #[test]
    fn constant_patch_normalizes_to_zero() {
        let t = Tensor::<f64>::full(&[2, 6], 0.7);
        assert!(normalize_patch_targets(&t, 1e-6).unwrap().data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn normalized_rows_have_zero_mean_unit_variance() {
        let t = Tensor::<f64>::from_fn(&[3, 12], |i| ((i * 37) % 17) as f64 / 17.0);
        let n = normalize_patch_targets(&t, 1e-6).unwrap();
        for r in 0..3 {
            let row = n.row(r);
            let mean = row.iter().sum::<f64>() / 12.0;
            let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
            assert!(mean.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn normalization_is_affine_invariant() {
        let t = Tensor::<f64>::from_fn(&[4, 12], |i| ((i * 13) % 7) as f64 / 7.0);
        // Exact without eps, for any positive scale.
        for (scale, shift) in [(0.01, 3.0), (2.5, -0.3), (100.0, 1.0)] {
            let u = t.map(|v| scale * v + shift);
            let (a, b) = (normalize_patch_targets(&t, 0.0).unwrap(), normalize_patch_targets(&u, 0.0).unwrap());
            assert!(a.max_abs_diff(&b) < 1e-9);
        }
        // With eps the residual is bounded by |z| · eps / (2 var) to first order.
        let eps = 1e-6;
        for (scale, shift) in [(1.0, 0.4), (2.0, -0.5), (10.0, 0.0), (1e3, 2.0)] {
            let u = t.map(|v| scale * v + shift);
            let (a, b) = (normalize_patch_targets(&t, eps).unwrap(), normalize_patch_targets(&u, eps).unwrap());
            for r in 0..4 {
                let row = t.row(r);
                let mean = row.iter().sum::<f64>() / 12.0;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 12.0;
                for (x, y) in a.row(r).iter().zip(b.row(r)) {
                    assert!((x - y).abs() <= 1.01 * x.abs() * eps / (2.0 * var) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn loss_edge_cases() {
        let tape = Tape::<f64>::new();
        let target = Tensor::from_fn(&[4, 3], |i| i as f64 * 0.1);
        let plan = MaskPlan::from_visible(4, vec![1]).unwrap();
        let same = tape.param(target.clone());
        let l = reconstruction_loss(&same, &target, &plan, LossScope::MaskedOnly).unwrap();
        assert_eq!(l.value().data()[0], 0.0);
        let shifted = tape.param(target.map(|v| v + 0.5));
        let l = reconstruction_loss(&shifted, &target, &plan, LossScope::All).unwrap();
        assert!((l.value().data()[0] - 0.25).abs() < 1e-12);
        let full = MaskPlan::full(4);
        assert!(reconstruction_loss(&same, &target, &full, LossScope::MaskedOnly).is_err());
    }

    #[test]
    fn loss_matches_naive_loop() {
        let mut rng = Rng::new(8, 0);
        let pred = Tensor::<f64>::from_fn(&[4, 5], |_| rng.normal());
        let target = Tensor::<f64>::from_fn(&[4, 5], |_| rng.normal());
        let plan = MaskPlan::from_visible(4, vec![2]).unwrap();
        let tape = Tape::new();
        let l = reconstruction_loss(&tape.param(pred.clone()), &target, &plan, LossScope::MaskedOnly).unwrap();
        let mut acc = 0.0;
        let mut count = 0;
        for r in [0, 1, 3] {
            for c in 0..5 {
                acc += (pred.at(&[r, c]) - target.at(&[r, c])).powi(2);
                count += 1;
            }
        }
        assert!((l.value().data()[0] - acc / count as f64).abs() < 1e-12);
    }

    #[test]
    fn scope_parses() {
        assert_eq!("all".parse::<LossScope>().unwrap(), LossScope::All);
        assert_eq!("masked".parse::<LossScope>().unwrap(), LossScope::MaskedOnly);
        assert!("half".parse::<LossScope>().is_err());
    }
}
