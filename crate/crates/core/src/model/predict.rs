//! Inference helpers on extracted patches.

use nalgebra::Vector3;
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::model::config::HeadKind;
use crate::model::network::Mode;
use crate::model::params::ModelParams;
use crate::model::scalar::Scalar;
use crate::patch::Patch;

/// Largest number of patches pushed through the network at once.
pub const INFERENCE_BATCH: usize = 256;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stacks patches into the `(B * m, 3)` network input.
pub fn patches_to_input<T: Scalar>(patches: &[&Patch], m: usize) -> Result<Array2<T>> {
    let mut x = Array2::zeros((patches.len() * m, 3));
    for (b, p) in patches.iter().enumerate() {
        if p.cardinality() != m {
            return Err(Error::Structural(format!(
                "patch has {} rows, the network expects {m}",
                p.cardinality()
            )));
        }
        for (k, row) in p.normalized_points.iter().enumerate() {
            for a in 0..3 {
                x[[b * m + k, a]] = T::from_f64(row[a]).expect("finite");
            }
        }
    }
    Ok(x)
}

fn expect_head(params: &ModelParams, head: HeadKind) -> Result<()> {
    if params.config.head != head {
        return Err(Error::Checkpoint(format!(
            "expected a {head:?} head, parameters are for {:?}",
            params.config.head
        )));
    }
    Ok(())
}

fn run(params: &ModelParams, patches: &[&Patch]) -> Result<Vec<Vec<f32>>> {
    let m = params.config.m;
    let mut out = Vec::with_capacity(patches.len());
    for chunk in patches.chunks(INFERENCE_BATCH) {
        let x = patches_to_input::<f32>(chunk, m)?;
        let (y, _) = params
            .network()
            .forward(&params.values, &x, chunk.len(), Mode::Eval)?;
        out.extend(y.rows().into_iter().map(|r| r.to_vec()));
    }
    Ok(out)
}

/// Raw logits of the outlier head.
pub fn predict_outlier_logits(patches: &[&Patch], params: &ModelParams) -> Result<Vec<f64>> {
    expect_head(params, HeadKind::Outlier)?;
    Ok(run(params, patches)?
        .into_iter()
        .map(|r| r[0] as f64)
        .collect())
}

pub fn predict_outlier_probabilities(patches: &[&Patch], params: &ModelParams) -> Result<Vec<f64>> {
    Ok(predict_outlier_logits(patches, params)?
        .into_iter()
        .map(sigmoid)
        .collect())
}

/// Probability that the patch center is an outlier. Classify with `p > 0.5`.
pub fn predict_outlier_probability(patch: &Patch, params: &ModelParams) -> Result<f64> {
    Ok(predict_outlier_probabilities(&[patch], params)?[0])
}

/// Displacements in model units (network output times patch scale).
pub fn predict_displacements(
    patches: &[&Patch],
    params: &ModelParams,
) -> Result<Vec<Vector3<f64>>> {
    expect_head(params, HeadKind::Displacement)?;
    Ok(run(params, patches)?
        .into_iter()
        .zip(patches)
        .map(|(r, p)| Vector3::new(r[0] as f64, r[1] as f64, r[2] as f64) * p.scale)
        .collect())
}

pub fn predict_displacement(patch: &Patch, params: &ModelParams) -> Result<Vector3<f64>> {
    Ok(predict_displacements(&[patch], params)?[0])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_midpoint_and_tails() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(40.0) > 1.0 - 1e-12);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-300);
        assert!(sigmoid(800.0).is_finite());
    }
}
