//! Evaluation metrics.
//!
//! Distances are squared Euclidean in the units of the inputs; callers are
//! expected to normalize both clouds to a unit bounding-box diagonal first.

use serde::{Deserialize, Serialize};

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::spatial::SpatialIndex;

/// Squared distance from every point of `from` to its nearest point in `to`.
pub fn nearest_sq_distances(from: &PointCloud, to: &SpatialIndex) -> Vec<f64> {
    from.points().par_iter().map(|p| to.nearest(p).1).collect()
}

fn check(a: &PointCloud, b: &PointCloud) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Argument("metrics need non-empty clouds".into()));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// `(1/N) sum_i min_j |a_i - b_j|^2 + (1/M) sum_j min_i |b_j - a_i|^2`.
pub fn chamfer_measure(cleaned: &PointCloud, gt: &PointCloud) -> Result<f64> {
    check(cleaned, gt)?;
    let gi = SpatialIndex::build(gt);
    let ci = SpatialIndex::build(cleaned);
    Ok(mean(&nearest_sq_distances(cleaned, &gi)) + mean(&nearest_sq_distances(gt, &ci)))
}

/// Root mean square distance from each cleaned point to the ground truth.
pub fn rmsd(cleaned: &PointCloud, gt: &PointCloud) -> Result<f64> {
    check(cleaned, gt)?;
    let gi = SpatialIndex::build(gt);
    Ok(mean(&nearest_sq_distances(cleaned, &gi)).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
}

/// Precision and recall with outliers as the positive class. An empty
/// denominator yields 0.
pub fn classification(predicted: &[bool], truth: &[bool]) -> Result<Classification> {
    if predicted.len() != truth.len() {
        return Err(Error::DataMismatch(format!(
            "{} predicted labels for {} true labels",
            predicted.len(),
            truth.len()
        )));
    }
    let (mut tp, mut fp, mut fnn) = (0, 0, 0);
    for (&p, &t) in predicted.iter().zip(truth) {
        match (p, t) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            _ => {}
        }
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    Ok(Classification {
        precision: ratio(tp, tp + fp),
        recall: ratio(tp, tp + fnn),
        true_positives: tp,
        false_positives: fp,
        false_negatives: fnn,
    })
}

/// `(1 + b^2) P R / (b^2 P + R)`, or 0 when the denominator vanishes.
pub fn f_beta_from(precision: f64, recall: f64, beta: f64) -> f64 {
    let b2 = beta * beta;
    let den = b2 * precision + recall;
    if den == 0.0 {
        0.0
    } else {
        (1.0 + b2) * precision * recall / den
    }
}

pub fn f_beta(predicted: &[bool], truth: &[bool], beta: f64) -> Result<(f64, Classification)> {
    let c = classification(predicted, truth)?;
    Ok((f_beta_from(c.precision, c.recall, beta), c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub chamfer: f64,
    pub rmsd: f64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub f2: Option<f64>,
    pub cleaned_points: usize,
    pub reference_points: usize,
    /// Distance from each cleaned point to its nearest reference point.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_point_distances: Vec<f64>,
    /// Free-form tag, such as the noise level.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

impl MetricReport {
    /// Geometry metrics, plus F-scores when both label vectors are given.
    pub fn compute(
        cleaned: &PointCloud,
        gt: &PointCloud,
        labels: Option<(&[bool], &[bool])>,
        keep_per_point: bool,
    ) -> Result<Self> {
        check(cleaned, gt)?;
        let gi = SpatialIndex::build(gt);
        let ci = SpatialIndex::build(cleaned);
        let forward = nearest_sq_distances(cleaned, &gi);
        let backward = nearest_sq_distances(gt, &ci);
        let chamfer = mean(&forward) + mean(&backward);
        let rmsd = mean(&forward).sqrt();
        let (precision, recall, f1, f2) = match labels {
            Some((pred, truth)) => {
                let c = classification(pred, truth)?;
                (
                    Some(c.precision),
                    Some(c.recall),
                    Some(f_beta_from(c.precision, c.recall, 1.0)),
                    Some(f_beta_from(c.precision, c.recall, 2.0)),
                )
            }
            None => (None, None, None, None),
        };
        Ok(Self {
            chamfer,
            rmsd,
            precision,
            recall,
            f1,
            f2,
            cleaned_points: cleaned.len(),
            reference_points: gt.len(),
            per_point_distances: if keep_per_point {
                forward.iter().map(|d| d.sqrt()).collect()
            } else {
                Vec::new()
            },
            label: None,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Structural(e.to_string()))
    }
}

/// Linear blue to red ramp over `[0, max]`; values outside are clamped.
pub fn error_color(value: f64, max: f64) -> [u8; 3] {
    let t = if max > 0.0 {
        (value / max).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let t = if t.is_nan() { 1.0 } else { t };
    [
        (255.0 * t).round() as u8,
        0,
        (255.0 * (1.0 - t)).round() as u8,
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud(p: &[[f64; 3]]) -> PointCloud {
        PointCloud::from_slices(p).unwrap()
    }

    #[test]
    fn chamfer_examples() {
        let a = cloud(&[[0.0, 0.0, 0.0]]);
        let b = cloud(&[[1.0, 0.0, 0.0]]);
        assert_eq!(chamfer_measure(&a, &a).unwrap(), 0.0);
        assert_eq!(chamfer_measure(&a, &b).unwrap(), 2.0);
    }

    #[test]
    fn rmsd_examples() {
        let a = cloud(&[[0.0, 2.0, 0.0]]);
        let b = cloud(&[[0.0, 0.0, 0.0], [5.0, 0.0, 0.0]]);
        assert_eq!(rmsd(&a, &b).unwrap(), 2.0);
        assert_eq!(rmsd(&b, &b).unwrap(), 0.0);
    }

    #[test]
    fn f_scores() {
        let truth: Vec<bool> = (0..10).map(|i| i < 3).collect();
        let all = vec![true; 10];
        let (f2, c) = f_beta(&all, &truth, 2.0).unwrap();
        assert!((c.precision - 0.3).abs() < 1e-12 && c.recall == 1.0);
        assert!((f2 - 1.5 / 2.2).abs() < 1e-12);
        let (f1, _) = f_beta(&truth, &truth, 1.0).unwrap();
        assert_eq!(f1, 1.0);
        assert_eq!(f_beta_from(0.5, 0.5, 1.0), 0.5);
        assert_eq!(f_beta(&[false; 4], &[false; 4], 2.0).unwrap().0, 0.0);
        assert!(f_beta(&[true], &[true, false], 1.0).is_err());
    }

    #[test]
    fn report_without_labels_has_null_scores() {
        let a = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        let r = MetricReport::compute(&a, &a, None, true).unwrap();
        assert_eq!(r.chamfer, 0.0);
        assert!(r.f2.is_none());
        let js: serde_json::Value = serde_json::from_str(&r.to_json().unwrap()).unwrap();
        assert!(js["f2"].is_null());
        assert_eq!(r.per_point_distances, vec![0.0, 0.0]);
    }

    #[test]
    fn ramp_endpoints() {
        assert_eq!(error_color(0.0, 1.0), [0, 0, 255]);
        assert_eq!(error_color(2.0, 1.0), [255, 0, 0]);
    }
}
