//! Point cloud container.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// An ordered set of 3D samples with optional per-point outlier flags.
///
/// The constructor enforces that the cloud is non-empty, that all coordinates
/// are finite, and that labels (when present) align one-to-one with points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Point3<f64>>,
    labels: Option<Vec<bool>>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3<f64>>) -> Result<Self> {
        Self::with_labels(points, None)
    }

    /// `labels[i] == true` marks point `i` as an outlier.
    pub fn with_labels(points: Vec<Point3<f64>>, labels: Option<Vec<bool>>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Structural(
                "point cloud must contain at least one point".into(),
            ));
        }
        if let Some(i) = points
            .iter()
            .position(|p| !p.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Structural(format!(
                "point {i} has a non-finite coordinate"
            )));
        }
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::Structural(format!(
                    "{} labels for {} points",
                    l.len(),
                    points.len()
                )));
            }
        }
        Ok(Self { points, labels })
    }

    pub fn from_slices(coords: &[[f64; 3]]) -> Result<Self> {
        Self::new(
            coords
                .iter()
                .map(|c| Point3::new(c[0], c[1], c[2]))
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    /// Always false for a constructed cloud; provided for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn point(&self, i: usize) -> &Point3<f64> {
        &self.points[i]
    }

    pub fn labels(&self) -> Option<&[bool]> {
        self.labels.as_deref()
    }

    pub fn set_labels(&mut self, labels: Option<Vec<bool>>) -> Result<()> {
        if let Some(l) = &labels {
            if l.len() != self.points.len() {
                return Err(Error::Structural(format!(
                    "{} labels for {} points",
                    l.len(),
                    self.points.len()
                )));
            }
        }
        self.labels = labels;
        Ok(())
    }

    pub fn into_points(self) -> Vec<Point3<f64>> {
        self.points
    }

    /// Axis-aligned bounding box as `(min, max)`.
    pub fn bounds(&self) -> (Point3<f64>, Point3<f64>) {
        let mut lo = self.points[0];
        let mut hi = self.points[0];
        for p in &self.points[1..] {
            for a in 0..3 {
                lo[a] = lo[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        (lo, hi)
    }

    /// Length of the bounding-box diagonal. Zero for a degenerate cloud.
    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bounds();
        (hi - lo).norm()
    }

    /// Like [`bbox_diagonal`](Self::bbox_diagonal) but rejects a zero diagonal.
    pub fn scale_diagonal(&self) -> Result<f64> {
        let d = self.bbox_diagonal();
        if d > 0.0 {
            Ok(d)
        } else {
            Err(Error::Argument(
                "degenerate point cloud: bounding-box diagonal is zero".into(),
            ))
        }
    }

    pub fn centroid(&self) -> Point3<f64> {
        let sum: Vector3<f64> = self.points.iter().map(|p| p.coords).sum();
        Point3::from(sum / self.points.len() as f64)
    }

    /// Returns a copy translated to the bbox center and scaled to unit diagonal.
    pub fn normalized_to_unit_diagonal(&self) -> Result<Self> {
        let d = self.scale_diagonal()?;
        let (lo, hi) = self.bounds();
        let c = nalgebra::center(&lo, &hi);
        let points = self
            .points
            .iter()
            .map(|p| Point3::from((p - c) / d))
            .collect();
        Ok(Self {
            points,
            labels: self.labels.clone(),
        })
    }

    /// New cloud keeping only the points where `keep[i]` is true.
    pub fn filter(&self, keep: &[bool]) -> Result<Self> {
        if keep.len() != self.len() {
            return Err(Error::Structural(format!(
                "mask of length {} for {} points",
                keep.len(),
                self.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(keep)
            .filter_map(|(p, &k)| k.then_some(*p))
            .collect();
        let labels = self.labels.as_ref().map(|l| {
            l.iter()
                .zip(keep)
                .filter_map(|(v, &k)| k.then_some(*v))
                .collect()
        });
        Self::with_labels(points, labels)
    }

    /// Applies `points[i] += offsets[i]`, rejecting non-finite results.
    pub fn displaced(&self, offsets: &[Vector3<f64>]) -> Result<Self> {
        if offsets.len() != self.len() {
            return Err(Error::Structural(format!(
                "{} offsets for {} points",
                offsets.len(),
                self.len()
            )));
        }
        let points = self
            .points
            .iter()
            .zip(offsets)
            .map(|(p, d)| p + d)
            .collect();
        Self::with_labels(points, self.labels.clone())
    }
}
