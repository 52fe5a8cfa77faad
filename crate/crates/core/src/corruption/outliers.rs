//! Outlier injection with surface-distance rejection.

use nalgebra::{Point3, Vector3};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::seed;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutlierKind {
    /// Selected points are displaced by isotropic Gaussian noise.
    Gaussian,
    /// Selected points are replaced by uniform samples in the scaled bbox.
    UniformBbox,
}

pub const DEFAULT_OUTLIER_SIGMA: f64 = 0.20;
pub const DEFAULT_BBOX_SCALE: f64 = 1.10;
pub const DEFAULT_RETRY_CAP: usize = 50;

/// All lengths are fractions of the reference cloud's bbox diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub kind: OutlierKind,
    pub fraction: f64,
    pub sigma_fraction: f64,
    pub bbox_scale: f64,
    /// A candidate is kept only if it lies farther than this from every
    /// reference point.
    pub rejection_threshold_fraction: f64,
    pub retry_cap: usize,
    pub seed: u64,
}

impl OutlierSpec {
    pub fn gaussian(fraction: f64, rejection_threshold_fraction: f64, seed: u64) -> Self {
        Self {
            kind: OutlierKind::Gaussian,
            fraction,
            sigma_fraction: DEFAULT_OUTLIER_SIGMA,
            bbox_scale: DEFAULT_BBOX_SCALE,
            rejection_threshold_fraction,
            retry_cap: DEFAULT_RETRY_CAP,
            seed,
        }
    }

    pub fn uniform_bbox(fraction: f64, rejection_threshold_fraction: f64, seed: u64) -> Self {
        Self {
            kind: OutlierKind::UniformBbox,
            ..Self::gaussian(fraction, rejection_threshold_fraction, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fraction) {
            return Err(Error::Argument(format!(
                "outlier fraction {} not in [0, 1]",
                self.fraction
            )));
        }
        if self.kind == OutlierKind::Gaussian && !(self.sigma_fraction > 0.0) {
            return Err(Error::Argument(
                "gaussian outliers need sigma_fraction > 0".into(),
            ));
        }
        if self.kind == OutlierKind::UniformBbox && !(self.bbox_scale > 0.0) {
            return Err(Error::Argument("bbox_scale must be > 0".into()));
        }
        if !(self.rejection_threshold_fraction >= 0.0) {
            return Err(Error::Argument("rejection threshold must be >= 0".into()));
        }
        if self.retry_cap == 0 {
            return Err(Error::Argument("retry_cap must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutlierReport {
    pub requested: usize,
    pub accepted: usize,
    /// Candidates that exhausted the retry cap and were left unchanged.
    pub skipped: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Converts `floor(fraction * N)` seeded-random points of `cloud` into outliers.
///
/// Gaussian candidates are the original point plus `N(0, sigma^2 I)`; uniform
/// candidates are drawn in the reference bbox scaled about its center. Every
/// candidate must be farther than the rejection threshold from the nearest
/// reference point, otherwise it is redrawn up to `retry_cap` times before
/// the point is left clean. The returned labels mark exactly the accepted
/// outliers (combined with any labels already on `cloud`).
pub fn inject_outliers(
    cloud: &PointCloud,
    spec: &OutlierSpec,
    surface_reference: &PointCloud,
) -> Result<(PointCloud, OutlierReport)> {
    spec.validate()?;
    let diag = surface_reference.scale_diagonal()?;
    let n = cloud.len();
    let requested = (spec.fraction * n as f64).floor() as usize;
    let mut points = cloud.points().to_vec();
    let mut labels = cloud
        .labels()
        .map(|l| l.to_vec())
        .unwrap_or_else(|| vec![false; n]);
    if requested == 0 {
        let out = PointCloud::with_labels(points, Some(labels))?;
        return Ok((
            out,
            OutlierReport {
                requested: 0,
                accepted: 0,
                skipped: 0,
                warning: None,
            },
        ));
    }

    let index = SpatialIndex::build(surface_reference);
    let threshold2 = (spec.rejection_threshold_fraction * diag).powi(2);
    let sigma = spec.sigma_fraction * diag;
    let (lo, hi) = surface_reference.bounds();
    let center = nalgebra::center(&lo, &hi);
    let half = (hi - lo) * (0.5 * spec.bbox_scale);

    let mut rng = seed::rng(spec.seed, &[0x0_u64]);
    let mut selected: Vec<usize> = sample(&mut rng, n, requested).into_vec();
    selected.sort_unstable();

    let mut accepted = 0;
    let mut skipped = 0;
    for &i in &selected {
        let base = points[i];
        let mut placed = false;
        for _ in 0..spec.retry_cap {
            let candidate = match spec.kind {
                OutlierKind::Gaussian => {
                    let g: [f64; 3] = [
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                        StandardNormal.sample(&mut rng),
                    ];
                    base + Vector3::from(g) * sigma
                }
                OutlierKind::UniformBbox => {
                    let u = Vector3::new(
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                        rng.random_range(-1.0..=1.0),
                    );
                    Point3::from(center.coords + half.component_mul(&u))
                }
            };
            let (_, d2) = index.nearest(&candidate);
            if d2 > threshold2 {
                points[i] = candidate;
                labels[i] = true;
                placed = true;
                break;
            }
        }
        if placed {
            accepted += 1;
        } else {
            skipped += 1;
        }
    }
    let warning = (skipped as f64 > 0.01 * requested as f64)
        .then(|| format!("retry cap exhausted for {skipped} of {requested} outlier candidates"));
    if let Some(w) = &warning {
        log::warn!("{w}");
    }
    let out = PointCloud::with_labels(points, Some(labels))?;
    Ok((
        out,
        OutlierReport {
            requested,
            accepted,
            skipped,
            warning,
        },
    ))
}
