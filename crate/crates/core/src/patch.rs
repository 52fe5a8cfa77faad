//! Fixed-cardinality local patches.
//!
//! A patch holds the points within radius `r` of a query point, translated so
//! the query sits at the origin and divided by `r`. Patches with fewer than
//! `m` members are padded with zero rows; larger ones are subsampled
//! uniformly at random, always keeping the query point itself.

use nalgebra::{Point3, Vector3};
use rand::seq::index::sample;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::seed;
use crate::spatial::SpatialIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center_index: usize,
    /// Cloud indices of the real rows, ascending.
    pub member_indices: Vec<usize>,
    /// Exactly `m` rows; padded rows are zero.
    pub normalized_points: Vec<Vector3<f64>>,
    pub pad_mask: Vec<bool>,
    /// The normalization length (the patch radius).
    pub scale: f64,
}

impl Patch {
    pub fn cardinality(&self) -> usize {
        self.normalized_points.len()
    }

    pub fn real_rows(&self) -> usize {
        self.member_indices.len()
    }

    /// Patch with its real rows replaced, keeping padding and scale.
    pub fn from_normalized(points: &[Vector3<f64>], m: usize, scale: f64) -> Result<Self> {
        if points.len() > m {
            return Err(Error::Argument(format!(
                "{} rows exceed the patch cardinality {m}",
                points.len()
            )));
        }
        let mut normalized_points = points.to_vec();
        normalized_points.resize(m, Vector3::zeros());
        let mut pad_mask = vec![true; points.len()];
        pad_mask.resize(m, false);
        Ok(Self {
            center_index: 0,
            member_indices: (0..points.len()).collect(),
            normalized_points,
            pad_mask,
            scale,
        })
    }
}

/// Extracts the normalized patch around point `i`.
///
/// `seed` is a base seed; the subsampling stream is derived from `(seed, i)`
/// so one base seed serves a whole cloud.
pub fn extract_patch(
    cloud: &PointCloud,
    index: &SpatialIndex,
    i: usize,
    r: f64,
    m: usize,
    seed: u64,
) -> Result<Patch> {
    if i >= cloud.len() {
        return Err(Error::Argument(format!(
            "point index {i} out of range for {} points",
            cloud.len()
        )));
    }
    if !(r > 0.0) || !r.is_finite() {
        return Err(Error::Argument(format!(
            "patch radius must be positive, got {r}"
        )));
    }
    if m == 0 {
        return Err(Error::Argument(
            "patch cardinality must be at least 1".into(),
        ));
    }
    let center = *cloud.point(i);
    let mut members = index.radius_neighbors(&center, r);
    if members.len() > m {
        members = subsample_keeping(&members, i, m, seed);
    }
    Ok(build_patch(cloud.points(), &center, i, members, r, m))
}

/// Uniform subset of size `m` from `members` that always contains `keep`.
fn subsample_keeping(members: &[usize], keep: usize, m: usize, seed: u64) -> Vec<usize> {
    let others: Vec<usize> = members.iter().copied().filter(|&j| j != keep).collect();
    let mut rng = seed::rng(seed, &[keep as u64]);
    let mut chosen: Vec<usize> = sample(&mut rng, others.len(), m - 1)
        .into_iter()
        .map(|k| others[k])
        .collect();
    chosen.push(keep);
    chosen.sort_unstable();
    chosen
}

fn build_patch(
    points: &[Point3<f64>],
    center: &Point3<f64>,
    center_index: usize,
    members: Vec<usize>,
    r: f64,
    m: usize,
) -> Patch {
    let mut normalized_points = Vec::with_capacity(m);
    let mut pad_mask = Vec::with_capacity(m);
    for &j in &members {
        normalized_points.push((points[j] - center) / r);
        pad_mask.push(true);
    }
    normalized_points.resize(m, Vector3::zeros());
    pad_mask.resize(m, false);
    Patch {
        center_index,
        member_indices: members,
        normalized_points,
        pad_mask,
        scale: r,
    }
}

/// Points of `reference` within `r` of `center`, normalized by `(p - center) / r`.
///
/// Used for ground-truth patches during training: no cardinality limit.
pub fn normalized_neighborhood(
    reference: &PointCloud,
    index: &SpatialIndex,
    center: &Point3<f64>,
    r: f64,
) -> Vec<Vector3<f64>> {
    index
        .radius_neighbors(center, r)
        .into_iter()
        .map(|j| (reference.point(j) - center) / r)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_patch_is_padded() {
        let c =
            PointCloud::from_slices(&[[0.0, 0.0, 0.0], [0.1, 0.0, 0.0], [0.2, 0.0, 0.0]]).unwrap();
        let idx = SpatialIndex::build(&c);
        let p = extract_patch(&c, &idx, 1, 0.5, 5, 0).unwrap();
        assert_eq!(p.cardinality(), 5);
        assert_eq!(p.pad_mask, vec![true, true, true, false, false]);
        let expect = [-0.2, 0.0, 0.2];
        for (row, e) in p.normalized_points.iter().zip(expect) {
            assert!((row.x - e).abs() < 1e-12 && row.y == 0.0 && row.z == 0.0);
        }
        assert_eq!(p.normalized_points[3], Vector3::zeros());
        assert_eq!(p.scale, 0.5);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let c = PointCloud::from_slices(&[[0.0, 0.0, 0.0]]).unwrap();
        let idx = SpatialIndex::build(&c);
        assert!(matches!(
            extract_patch(&c, &idx, 1, 0.5, 4, 0),
            Err(Error::Argument(_))
        ));
        assert!(extract_patch(&c, &idx, 0, 0.0, 4, 0).is_err());
        assert!(extract_patch(&c, &idx, 0, 0.5, 0, 0).is_err());
    }

    #[test]
    fn subsampling_keeps_center() {
        let pts: Vec<[f64; 3]> = (0..40).map(|k| [k as f64 * 0.01, 0.0, 0.0]).collect();
        let c = PointCloud::from_slices(&pts).unwrap();
        let idx = SpatialIndex::build(&c);
        for s in 0..20 {
            let p = extract_patch(&c, &idx, 17, 1.0, 8, s).unwrap();
            assert_eq!(p.real_rows(), 8);
            assert!(p.member_indices.contains(&17));
            assert!(p.pad_mask.iter().all(|&b| b));
        }
    }
}
