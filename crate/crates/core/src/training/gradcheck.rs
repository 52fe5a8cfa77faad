//! Finite-difference verification of analytic gradients.

use nalgebra::Vector3;
use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Result;
use crate::losses::{
    farthest_in_patch, loss_outlier_logit_grad, nearest_in_patch, point_loss_grad, DenoiseLoss,
    LossTarget,
};
use crate::model::config::{HeadKind, ModelConfig};
use crate::model::network::{Mode, Network};
use crate::model::params::TensorRole;
use crate::seed;
use crate::training::trainer::{batch_loss_grad, BatchTargets};

/// A small batch with targets and 64-bit parameters.
#[derive(Debug, Clone)]
pub struct GradCheckFixture {
    pub config: ModelConfig,
    pub params: Vec<f64>,
    pub input: Array2<f64>,
    pub targets: BatchTargets,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub worst_parameter: usize,
    pub checked: usize,
    /// Entries skipped because a kink (ReLU switch or min/max tie change)
    /// lies within one step, which invalidates the central difference.
    pub kinks: usize,
}

/// Denominator floor for the relative error. At a step of 1e-6 the central
/// difference carries rounding noise up to about 1e-7 once batch
/// normalization over a few rows amplifies it, so gradients below the floor
/// are judged by their absolute error scaled by `1 / RELATIVE_FLOOR`.
pub const RELATIVE_FLOOR: f64 = 1e-2;

impl GradCheckFixture {
    /// Random parameters (biases and batch-norm terms included), random patch
    /// rows in the unit ball, and random targets. `loss = None` builds an
    /// outlier-head fixture.
    pub fn random(
        config: &ModelConfig,
        loss: Option<DenoiseLoss>,
        batch: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut config = config.clone();
        config.head = if loss.is_some() {
            HeadKind::Displacement
        } else {
            HeadKind::Outlier
        };
        let net = Network::new(&config)?;
        let mut rng = seed::rng(seed, &[0x6C]);
        let mut params = vec![0.0f64; net.layout().len()];
        for t in net.layout().tensors() {
            for v in &mut params[t.range()] {
                *v = match t.role {
                    TensorRole::Weight => {
                        let b = (6.0 / t.fan_in() as f64).sqrt();
                        rng.random_range(-b..b)
                    }
                    TensorRole::Bias | TensorRole::Shift | TensorRole::RunningMean => {
                        rng.random_range(-0.2..0.2)
                    }
                    TensorRole::Scale => rng.random_range(0.5..1.5),
                    TensorRole::RunningVar => rng.random_range(0.5..2.0),
                };
            }
        }
        let m = config.m;
        let mut input = Array2::zeros((batch * m, 3));
        for b in 0..batch {
            // vary the real-row count so padding is exercised
            let real = rng.random_range(1..=m);
            for k in 0..real {
                let v: Vector3<f64> = random_unit_ball(&mut rng);
                for a in 0..3 {
                    input[[b * m + k, a]] = v[a];
                }
            }
        }
        let targets = match loss {
            None => BatchTargets::Outlier((0..batch).map(|_| rng.random_bool(0.5)).collect()),
            Some(l) => BatchTargets::Denoise {
                loss: l,
                alpha: 0.99,
                targets: (0..batch)
                    .map(|_| {
                        if l.uses_gt_patch() {
                            let n = rng.random_range(1..12);
                            LossTarget::Patch((0..n).map(|_| random_unit_ball(&mut rng)).collect())
                        } else {
                            LossTarget::Point(random_unit_ball(&mut rng) * 0.3)
                        }
                    })
                    .collect(),
            },
        };
        Ok(Self {
            config,
            params,
            input,
            targets,
            mode: Mode::Train,
        })
    }
}

fn random_unit_ball(rng: &mut impl Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        ) * 0.5;
        if v.norm() <= 1.0 {
            return v;
        }
    }
}

/// Loss and the piecewise-linear selection it sits on: activation signs plus
/// the chosen nearest and farthest target points.
fn evaluate(
    net: &Network,
    fixture: &GradCheckFixture,
    p: &[f64],
) -> Result<(f64, Vec<bool>, Vec<usize>)> {
    let (out, cache) = net.forward(p, &fixture.input, fixture.targets.len(), fixture.mode)?;
    let mut total = 0.0;
    let mut picks = Vec::new();
    match &fixture.targets {
        BatchTargets::Outlier(labels) => {
            for (b, &label) in labels.iter().enumerate() {
                total += loss_outlier_logit_grad(out[[b, 0]], label).0;
            }
        }
        BatchTargets::Denoise {
            loss,
            alpha,
            targets,
        } => {
            for (b, t) in targets.iter().enumerate() {
                let c = [out[[b, 0]], out[[b, 1]], out[[b, 2]]];
                total += point_loss_grad(*loss, &c, t, *alpha)?.0;
                if let LossTarget::Patch(pts) = t {
                    let v = Vector3::new(c[0], c[1], c[2]);
                    picks.extend(nearest_in_patch(&v, pts).map(|x| x.0));
                    picks.extend(farthest_in_patch(&v, pts).map(|x| x.0));
                }
            }
        }
    }
    Ok((
        total / fixture.targets.len() as f64,
        cache.activation_pattern(),
        picks,
    ))
}

/// Compares analytic gradients with central differences of step `h` on up to
/// `per_tensor` evenly spaced entries of every learnable tensor. The error of
/// one entry is `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn gradient_check(
    fixture: &GradCheckFixture,
    h: f64,
    per_tensor: usize,
) -> Result<GradCheckReport> {
    let net = Network::new(&fixture.config)?;
    let (_, analytic, _) = batch_loss_grad(
        &net,
        &fixture.params,
        &fixture.input,
        &fixture.targets,
        fixture.mode,
    )?;
    let (_, act0, picks0) = evaluate(&net, fixture, &fixture.params)?;
    let mut params = fixture.params.clone();
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_parameter: 0,
        checked: 0,
        kinks: 0,
    };
    for t in net.layout().tensors() {
        if !t.role.is_learnable() {
            continue;
        }
        let n = t.numel();
        let take = per_tensor.min(n).max(1);
        for s in 0..take {
            let i = t.offset + s * n / take;
            let orig = params[i];
            params[i] = orig + h;
            let (up, act_up, picks_up) = evaluate(&net, fixture, &params)?;
            params[i] = orig - h;
            let (down, act_down, picks_down) = evaluate(&net, fixture, &params)?;
            params[i] = orig;
            if act_up != act0 || act_down != act0 || picks_up != picks0 || picks_down != picks0 {
                report.kinks += 1;
                continue;
            }
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(RELATIVE_FLOOR);
            if rel > report.max_relative_error {
                report.max_relative_error = rel;
                report.worst_parameter = i;
            }
            report.checked += 1;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            m: 6,
            point_feature_widths: vec![5, 6, 7],
            feature_stn_after: Some(0),
            regressor_widths: vec![6, 5],
            stn_point_widths: vec![4, 5],
            stn_regressor_widths: vec![5, 4],
            ..ModelConfig::tiny(HeadKind::Displacement)
        }
    }

    #[test]
    fn baseline_loss_gradients_match() {
        let f = GradCheckFixture::random(&small(), Some(DenoiseLoss::Baseline), 6, 1).unwrap();
        let r = gradient_check(&f, 1e-6, 1000).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert!(r.kinks * 20 < r.checked, "{r:?}");
    }

    #[test]
    fn regularity_loss_gradients_match() {
        let f = GradCheckFixture::random(&small(), Some(DenoiseLoss::Regularity), 6, 3).unwrap();
        let r = gradient_check(&f, 1e-6, 1000).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert!(r.kinks * 20 < r.checked, "{r:?}");
    }

    #[test]
    fn outlier_loss_gradients_match() {
        let f = GradCheckFixture::random(&small(), None, 6, 2).unwrap();
        let r = gradient_check(&f, 1e-6, 1000).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
        assert!(r.kinks * 20 < r.checked, "{r:?}");
    }
}
