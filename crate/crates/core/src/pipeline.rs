//! Two-stage cleaning: outlier removal, then iterative denoising with an
//! inflation correction against shrinkage.

use log::warn;
use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::metrics::chamfer_measure;
use crate::model::config::HeadKind;
use crate::model::params::ModelParams;
use crate::model::predict::{predict_displacements, predict_outlier_probabilities};
use crate::patch::{extract_patch, Patch};
use crate::seed;
use crate::spatial::SpatialIndex;

/// Points handled per inference chunk; bounds the memory held by patches.
const CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CleaningConfig {
    /// Patch radius as a fraction of the input bounding-box diagonal.
    pub radius_fraction: f64,
    pub iterations: usize,
    /// Neighbors averaged by the inflation correction.
    pub inflation_k: usize,
    pub inflation: bool,
    pub outlier_threshold: f64,
    pub skip_outliers: bool,
    pub patch_seed: u64,
    /// Keep each iteration's displacement field in the trace.
    pub record_fields: bool,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            radius_fraction: 0.05,
            iterations: 2,
            inflation_k: 100,
            inflation: true,
            outlier_threshold: 0.5,
            skip_outliers: false,
            patch_seed: 0,
            record_fields: false,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.radius_fraction > 0.0) || !self.radius_fraction.is_finite() {
            return Err(Error::Config("radius_fraction must be positive".into()));
        }
        if self.inflation_k == 0 {
            return Err(Error::Config("inflation_k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.outlier_threshold) {
            return Err(Error::Config("outlier_threshold must lie in [0, 1]".into()));
        }
        Ok(())
    }

    /// Patch radius for `cloud`. A cloud with zero extent (a single point or
    /// duplicates) uses the fraction itself, as if its diagonal were 1.
    pub fn radius_for(&self, cloud: &PointCloud) -> f64 {
        let d = cloud.bbox_diagonal();
        self.radius_fraction * if d > 0.0 { d } else { 1.0 }
    }
}

/// Per-point displacement vectors in model units.
#[derive(Debug, Clone, PartialEq)]
pub struct DisplacementField {
    pub vectors: Vec<Vector3<f64>>,
}

impl DisplacementField {
    pub fn zeros(n: usize) -> Self {
        Self {
            vectors: vec![Vector3::zeros(); n],
        }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn max_norm(&self) -> f64 {
        self.vectors.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    pub fn mean_norm(&self) -> f64 {
        if self.vectors.is_empty() {
            return 0.0;
        }
        self.vectors.iter().map(|v| v.norm()).sum::<f64>() / self.vectors.len() as f64
    }
}

fn expect_head(params: &ModelParams, head: HeadKind) -> Result<()> {
    if params.config.head != head {
        return Err(Error::Checkpoint(format!(
            "a {head:?} model is required, got a {:?} model",
            params.config.head
        )));
    }
    Ok(())
}

fn patches_for(
    cloud: &PointCloud,
    index: &SpatialIndex,
    range: std::ops::Range<usize>,
    r: f64,
    m: usize,
    seed: u64,
) -> Result<Vec<Patch>> {
    range
        .into_par_iter()
        .map(|i| extract_patch(cloud, index, i, r, m, seed))
        .collect()
}

/// Outlier probability of every point, with patches of radius `r`.
pub fn outlier_probabilities(
    cloud: &PointCloud,
    index: &SpatialIndex,
    params: &ModelParams,
    r: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    expect_head(params, HeadKind::Outlier)?;
    let mut out = Vec::with_capacity(cloud.len());
    for start in (0..cloud.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(cloud.len());
        let patches = patches_for(cloud, index, start..end, r, params.config.m, seed)?;
        let refs: Vec<&Patch> = patches.iter().collect();
        out.extend(predict_outlier_probabilities(&refs, params)?);
    }
    Ok(out)
}

/// Classifies every point and drops those with probability above the
/// threshold. Returns the surviving cloud and the full label vector (true for
/// removed points).
pub fn remove_outliers(
    cloud: &PointCloud,
    params: &ModelParams,
    config: &CleaningConfig,
) -> Result<(PointCloud, Vec<bool>)> {
    config.validate()?;
    let r = config.radius_for(cloud);
    let index = SpatialIndex::build(cloud);
    let probs = outlier_probabilities(cloud, &index, params, r, config.patch_seed)?;
    let labels: Vec<bool> = probs
        .iter()
        .map(|&p| p > config.outlier_threshold)
        .collect();
    if labels.iter().all(|&l| l) {
        return Err(Error::DataMismatch(
            "every point was classified as an outlier; refusing to emit an empty cloud".into(),
        ));
    }
    let keep: Vec<bool> = labels.iter().map(|&l| !l).collect();
    let mut kept = cloud.filter(&keep)?;
    kept.set_labels(None)?;
    Ok((kept, labels))
}

/// Displacements predicted with patches of radius `r` on the given index.
pub fn displacement_field(
    cloud: &PointCloud,
    index: &SpatialIndex,
    params: &ModelParams,
    r: f64,
    seed: u64,
) -> Result<DisplacementField> {
    expect_head(params, HeadKind::Displacement)?;
    let mut vectors = Vec::with_capacity(cloud.len());
    for start in (0..cloud.len()).step_by(CHUNK) {
        let end = (start + CHUNK).min(cloud.len());
        let patches = patches_for(cloud, index, start..end, r, params.config.m, seed)?;
        let refs: Vec<&Patch> = patches.iter().collect();
        vectors.extend(predict_displacements(&refs, params)?);
    }
    Ok(DisplacementField { vectors })
}

/// One pass of the displacement network over every point. Nothing moves.
pub fn denoise_once(
    cloud: &PointCloud,
    params: &ModelParams,
    config: &CleaningConfig,
) -> Result<DisplacementField> {
    config.validate()?;
    let index = SpatialIndex::build(cloud);
    displacement_field(
        cloud,
        &index,
        params,
        config.radius_for(cloud),
        config.patch_seed,
    )
}

/// Subtracts from each displacement the mean displacement of its `k` nearest
/// neighbors in the current cloud, the point itself excluded.
///
/// `k` larger than the number of other points is clamped with a warning.
pub fn inflate(
    field: &DisplacementField,
    cloud: &PointCloud,
    k: usize,
) -> Result<DisplacementField> {
    inflate_with_index(field, cloud, &SpatialIndex::build(cloud), k)
}

pub fn inflate_with_index(
    field: &DisplacementField,
    cloud: &PointCloud,
    index: &SpatialIndex,
    k: usize,
) -> Result<DisplacementField> {
    if field.len() != cloud.len() {
        return Err(Error::Structural(format!(
            "field of {} vectors for {} points",
            field.len(),
            cloud.len()
        )));
    }
    if k == 0 {
        return Err(Error::Argument("inflation k must be >= 1".into()));
    }
    let n = cloud.len();
    let k_eff = k.min(n - 1);
    if k_eff < k {
        warn!(
            "inflation k = {k} exceeds the {} other points; using {k_eff}",
            n - 1
        );
    }
    if k_eff == 0 {
        return Ok(field.clone());
    }
    let d = &field.vectors;
    let vectors = (0..n)
        .into_par_iter()
        .map(|i| {
            let nn = index.knn(cloud.point(i), k_eff + 1)?;
            let mut acc = Vector3::zeros();
            let mut taken = 0;
            for j in nn {
                if j == i || taken == k_eff {
                    continue;
                }
                // Summing differences keeps a constant field exactly zero.
                acc += d[j] - d[i];
                taken += 1;
            }
            Ok(-acc / k_eff as f64)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DisplacementField { vectors })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationTrace {
    pub iteration: usize,
    pub mean_displacement: f64,
    pub max_displacement: f64,
    pub bbox_diagonal: f64,
    /// Chamfer measure against a reference cloud, when one was supplied.
    pub chamfer: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub field: Option<Vec<[f64; 3]>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CleaningTrace {
    pub config: CleaningConfig,
    pub input_points: usize,
    pub radius: f64,
    pub removed_outliers: usize,
    /// Per input point, true where it was removed as an outlier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outlier_labels: Option<Vec<bool>>,
    /// Chamfer measure of the outlier-filtered cloud against the reference.
    pub initial_chamfer: Option<f64>,
    pub iterations: Vec<IterationTrace>,
}

impl CleaningTrace {
    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Structural(e.to_string()))
    }
}

/// Full pipeline. `outlier_params` may be `None` (or skipped by config), in
/// which case no points are removed.
pub fn clean(
    cloud: &PointCloud,
    outlier_params: Option<&ModelParams>,
    denoise_params: &ModelParams,
    config: &CleaningConfig,
) -> Result<(PointCloud, CleaningTrace)> {
    clean_with_reference(cloud, outlier_params, denoise_params, config, None)
}

/// Like [`clean`]; with a reference cloud the trace also records the chamfer
/// measure after every iteration. Both clouds are normalized to a unit
/// diagonal through the same transform (the reference's) before measuring.
pub fn clean_with_reference(
    cloud: &PointCloud,
    outlier_params: Option<&ModelParams>,
    denoise_params: &ModelParams,
    config: &CleaningConfig,
    reference: Option<&PointCloud>,
) -> Result<(PointCloud, CleaningTrace)> {
    clean_observed(
        cloud,
        outlier_params,
        denoise_params,
        config,
        reference,
        |_, _| Ok(()),
    )
}

/// Like [`clean_with_reference`], calling `observe(iteration, cloud)` after
/// every denoising iteration (1-based).
pub fn clean_observed(
    cloud: &PointCloud,
    outlier_params: Option<&ModelParams>,
    denoise_params: &ModelParams,
    config: &CleaningConfig,
    reference: Option<&PointCloud>,
    mut observe: impl FnMut(usize, &PointCloud) -> Result<()>,
) -> Result<(PointCloud, CleaningTrace)> {
    config.validate()?;
    expect_head(denoise_params, HeadKind::Displacement)?;
    // The radius is fixed from the input so patch scale stays put as the cloud
    // contracts.
    let r = config.radius_for(cloud);
    let measure = |c: &PointCloud| -> Result<Option<f64>> {
        reference.map(|gt| scaled_chamfer(c, gt)).transpose()
    };

    let (mut current, labels) = match outlier_params {
        Some(p) if !config.skip_outliers => {
            let (kept, labels) = remove_outliers(cloud, p, config)?;
            (kept, Some(labels))
        }
        _ => (cloud.clone(), None),
    };
    current.set_labels(None)?;
    let mut trace = CleaningTrace {
        config: config.clone(),
        input_points: cloud.len(),
        radius: r,
        removed_outliers: labels
            .as_ref()
            .map_or(0, |l| l.iter().filter(|&&x| x).count()),
        outlier_labels: labels,
        initial_chamfer: measure(&current)?,
        iterations: Vec::new(),
    };

    for it in 0..config.iterations {
        let index = SpatialIndex::build(&current);
        let seed = seed::derive(config.patch_seed, &[it as u64]);
        let mut field = displacement_field(&current, &index, denoise_params, r, seed)?;
        if config.inflation {
            field = inflate_with_index(&field, &current, &index, config.inflation_k)?;
        }
        current = current.displaced(&field.vectors)?;
        trace.iterations.push(IterationTrace {
            iteration: it + 1,
            mean_displacement: field.mean_norm(),
            max_displacement: field.max_norm(),
            bbox_diagonal: current.bbox_diagonal(),
            chamfer: measure(&current)?,
            field: config
                .record_fields
                .then(|| field.vectors.iter().map(|v| [v.x, v.y, v.z]).collect()),
        });
        observe(it + 1, &current)?;
    }
    Ok((current, trace))
}

/// Chamfer measure after mapping both clouds with the transform that brings
/// `reference` to a unit bounding-box diagonal.
pub fn scaled_chamfer(cleaned: &PointCloud, reference: &PointCloud) -> Result<f64> {
    let d = reference.scale_diagonal()?;
    let scale = |c: &PointCloud| {
        PointCloud::new(
            c.points()
                .iter()
                .map(|p| nalgebra::Point3::from(p.coords / d))
                .collect(),
        )
    };
    chamfer_measure(&scale(cleaned)?, &scale(reference)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(n: usize) -> PointCloud {
        PointCloud::new(
            (0..n)
                .map(|i| nalgebra::Point3::new(i as f64 * 0.1, 0.0, 0.0))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn constant_field_inflates_to_zero() {
        let c = line(30);
        let f = DisplacementField {
            vectors: vec![Vector3::new(0.1, -0.3, 0.7); 30],
        };
        for k in [1, 10, 100] {
            let g = inflate(&f, &c, k).unwrap();
            assert!(g.vectors.iter().all(|v| *v == Vector3::zeros()));
        }
    }

    #[test]
    fn two_points_swap_differences() {
        let c = line(2);
        let d1 = Vector3::new(1.0, 0.0, 0.0);
        let d2 = Vector3::new(0.0, 2.0, 0.0);
        let g = inflate(
            &DisplacementField {
                vectors: vec![d1, d2],
            },
            &c,
            1,
        )
        .unwrap();
        assert_eq!(g.vectors, vec![d1 - d2, d2 - d1]);
    }

    #[test]
    fn single_point_keeps_its_field() {
        let c = line(1);
        let f = DisplacementField {
            vectors: vec![Vector3::new(0.5, 0.0, 0.0)],
        };
        assert_eq!(inflate(&f, &c, 100).unwrap(), f);
    }

    #[test]
    fn config_defaults() {
        let c = CleaningConfig::default();
        assert_eq!(
            (c.radius_fraction, c.iterations, c.inflation_k),
            (0.05, 2, 100)
        );
        assert_eq!(c.outlier_threshold, 0.5);
        c.validate().unwrap();
        assert_eq!(c.radius_for(&line(1)), 0.05);
    }
}
