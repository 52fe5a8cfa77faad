//! Training losses.
//!
//! Point losses act on the cleaned position of a patch center expressed in
//! patch-normalized coordinates (the noisy center sits at the origin and
//! lengths are divided by the patch radius). Each returns its value together
//! with the gradient with respect to the cleaned point. Min and max ties go to
//! the lowest index. Batch reduction is the arithmetic mean.

use nalgebra::{Point3, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::model::predict::sigmoid;
use crate::model::scalar::Scalar;
use crate::spatial::SpatialIndex;

pub const DEFAULT_ALPHA: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Radius of the ground-truth patch, in model units. `None` means the
    /// cleaning radius.
    #[serde(default)]
    pub gt_patch_radius: Option<f64>,
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            gt_patch_radius: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if let Some(r) = self.gt_patch_radius {
            if !(r > 0.0) || !r.is_finite() {
                return Err(Error::Config(format!(
                    "gt_patch_radius must be positive, got {r}"
                )));
            }
        }
        Ok(())
    }
}

/// Losses for the displacement head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DenoiseLoss {
    /// Weighted proximity plus regularity against the refreshed ground-truth patch.
    #[serde(rename = "l_a")]
    Combined,
    /// Squared distance to the nearest clean point of the noisy input, fixed.
    #[serde(rename = "l_b")]
    FixedTarget,
    /// Squared distance to the corresponding clean point.
    #[serde(rename = "l_c")]
    Baseline,
    #[serde(rename = "l_s")]
    Proximity,
    #[serde(rename = "l_r")]
    Regularity,
}

impl DenoiseLoss {
    pub fn short_name(self) -> &'static str {
        match self {
            DenoiseLoss::Combined => "l_a",
            DenoiseLoss::FixedTarget => "l_b",
            DenoiseLoss::Baseline => "l_c",
            DenoiseLoss::Proximity => "l_s",
            DenoiseLoss::Regularity => "l_r",
        }
    }

    /// Whether the loss reads a ground-truth patch rather than a single target.
    pub fn uses_gt_patch(self) -> bool {
        matches!(
            self,
            DenoiseLoss::Combined | DenoiseLoss::Proximity | DenoiseLoss::Regularity
        )
    }
}

/// What a point loss compares the cleaned point against.
#[derive(Debug, Clone, PartialEq)]
pub enum LossTarget {
    Point(Vector3<f64>),
    Patch(Vec<Vector3<f64>>),
}

pub fn loss_outlier(predicted: f64, label: bool) -> f64 {
    (predicted - if label { 1.0 } else { 0.0 }).abs()
}

pub fn loss_outlier_batch(predicted: &[f64], labels: &[bool]) -> f64 {
    if predicted.is_empty() {
        return 0.0;
    }
    predicted
        .iter()
        .zip(labels)
        .map(|(&p, &l)| loss_outlier(p, l))
        .sum::<f64>()
        / predicted.len() as f64
}

/// `|sigmoid(z) - o|` and its derivative with respect to the logit `z`.
pub fn loss_outlier_logit_grad<T: Scalar>(z: T, label: bool) -> (T, T) {
    let p = T::lit(sigmoid(z.to_f64().expect("finite logit")));
    let o = if label { T::one() } else { T::zero() };
    let diff = p - o;
    let dp = p * (T::one() - p);
    // subgradient 0 at the kink, reached only when p equals the label exactly
    let sign = if diff > T::zero() {
        T::one()
    } else if diff < T::zero() {
        -T::one()
    } else {
        T::zero()
    };
    (diff.abs(), sign * dp)
}

pub fn loss_baseline_l2(cleaned: &Vector3<f64>, gt: &Vector3<f64>) -> f64 {
    (cleaned - gt).norm_squared()
}

pub fn loss_fixed_target(cleaned: &Vector3<f64>, precomputed_target: &Vector3<f64>) -> f64 {
    loss_baseline_l2(cleaned, precomputed_target)
}

/// Nearest clean point to every noisy point: the fixed targets, computed once.
pub fn fixed_targets(
    noisy: &PointCloud,
    clean: &PointCloud,
    clean_index: &SpatialIndex,
) -> Vec<Point3<f64>> {
    noisy
        .points()
        .par_iter()
        .map(|q| *clean.point(clean_index.nearest(q).0))
        .collect()
}

/// Index and squared distance of the closest patch point, lowest index on ties.
pub fn nearest_in_patch(cleaned: &Vector3<f64>, gt_patch: &[Vector3<f64>]) -> Option<(usize, f64)> {
    extreme(cleaned, gt_patch, |d, best| d < best)
}

/// Index and squared distance of the farthest patch point, lowest index on ties.
pub fn farthest_in_patch(
    cleaned: &Vector3<f64>,
    gt_patch: &[Vector3<f64>],
) -> Option<(usize, f64)> {
    extreme(cleaned, gt_patch, |d, best| d > best)
}

fn extreme(
    c: &Vector3<f64>,
    pts: &[Vector3<f64>],
    better: impl Fn(f64, f64) -> bool,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, p) in pts.iter().enumerate() {
        let d = (c - p).norm_squared();
        if best.is_none_or(|(_, b)| better(d, b)) {
            best = Some((j, d));
        }
    }
    best
}

fn empty_patch() -> Error {
    Error::Argument("ground-truth patch is empty".into())
}

pub fn loss_proximity(cleaned: &Vector3<f64>, gt_patch: &[Vector3<f64>]) -> Result<f64> {
    nearest_in_patch(cleaned, gt_patch)
        .map(|(_, d)| d)
        .ok_or_else(empty_patch)
}

pub fn loss_regularity(cleaned: &Vector3<f64>, gt_patch: &[Vector3<f64>]) -> Result<f64> {
    farthest_in_patch(cleaned, gt_patch)
        .map(|(_, d)| d)
        .ok_or_else(empty_patch)
}

pub fn loss_combined(
    cleaned: &Vector3<f64>,
    gt_patch: &[Vector3<f64>],
    config: &LossConfig,
) -> Result<f64> {
    let ls = loss_proximity(cleaned, gt_patch)?;
    let lr = loss_regularity(cleaned, gt_patch)?;
    Ok(config.alpha * ls + (1.0 - config.alpha) * lr)
}

fn sq_grad<T: Scalar>(c: &[T; 3], t: &Vector3<f64>) -> (T, [T; 3]) {
    let mut v = T::zero();
    let mut g = [T::zero(); 3];
    for a in 0..3 {
        let d = c[a] - T::lit(t[a]);
        v = v + d * d;
        g[a] = T::lit(2.0) * d;
    }
    (v, g)
}

fn extreme_t<T: Scalar>(c: &[T; 3], pts: &[Vector3<f64>], max: bool) -> Option<usize> {
    let mut best: Option<(usize, T)> = None;
    for (j, p) in pts.iter().enumerate() {
        let (d, _) = sq_grad(c, p);
        let take = match best {
            None => true,
            Some((_, b)) => {
                if max {
                    d > b
                } else {
                    d < b
                }
            }
        };
        if take {
            best = Some((j, d));
        }
    }
    best.map(|(j, _)| j)
}

/// Value and gradient of a denoising loss for one cleaned point.
pub fn point_loss_grad<T: Scalar>(
    loss: DenoiseLoss,
    cleaned: &[T; 3],
    target: &LossTarget,
    alpha: f64,
) -> Result<(T, [T; 3])> {
    match (loss, target) {
        (DenoiseLoss::Baseline | DenoiseLoss::FixedTarget, LossTarget::Point(t)) => {
            Ok(sq_grad(cleaned, t))
        }
        (DenoiseLoss::Proximity, LossTarget::Patch(p)) => {
            let j = extreme_t(cleaned, p, false).ok_or_else(empty_patch)?;
            Ok(sq_grad(cleaned, &p[j]))
        }
        (DenoiseLoss::Regularity, LossTarget::Patch(p)) => {
            let j = extreme_t(cleaned, p, true).ok_or_else(empty_patch)?;
            Ok(sq_grad(cleaned, &p[j]))
        }
        (DenoiseLoss::Combined, LossTarget::Patch(p)) => {
            let jn = extreme_t(cleaned, p, false).ok_or_else(empty_patch)?;
            let jf = extreme_t(cleaned, p, true).ok_or_else(empty_patch)?;
            let (vs, gs) = sq_grad(cleaned, &p[jn]);
            let (vr, gr) = sq_grad(cleaned, &p[jf]);
            let a = T::lit(alpha);
            let b = T::one() - a;
            Ok((
                a * vs + b * vr,
                [
                    a * gs[0] + b * gr[0],
                    a * gs[1] + b * gr[1],
                    a * gs[2] + b * gr[2],
                ],
            ))
        }
        _ => Err(Error::Argument(format!(
            "loss {} does not take this kind of target",
            loss.short_name()
        ))),
    }
}
