//! Additive Gaussian noise, isotropic or aligned to a scanning direction.

use nalgebra::Vector3;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    GaussianIsotropic,
    GaussianDirectional,
}

/// Noise model; `sigma_fraction` is relative to the clean cloud's bbox diagonal.
///
/// For the directional kind the covariance is diagonal in the frame
/// `(direction, e1, e2)`, with standard deviations `sigma * anisotropy[k]`.
/// `anisotropy[0]` is the spread along `direction`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub sigma_fraction: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub direction: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anisotropy: Option<[f64; 3]>,
    pub seed: u64,
}

pub const DEFAULT_DIRECTION: [f64; 3] = [0.0, 0.0, 1.0];
pub const DEFAULT_ANISOTROPY: [f64; 3] = [1.0, 0.3, 0.3];

impl NoiseSpec {
    pub fn isotropic(sigma_fraction: f64, seed: u64) -> Self {
        Self {
            kind: NoiseKind::GaussianIsotropic,
            sigma_fraction,
            direction: None,
            anisotropy: None,
            seed,
        }
    }

    pub fn directional(
        sigma_fraction: f64,
        direction: [f64; 3],
        anisotropy: [f64; 3],
        seed: u64,
    ) -> Self {
        Self {
            kind: NoiseKind::GaussianDirectional,
            sigma_fraction,
            direction: Some(direction),
            anisotropy: Some(anisotropy),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_fraction >= 0.0) || !self.sigma_fraction.is_finite() {
            return Err(Error::Argument(format!(
                "sigma_fraction must be a finite value >= 0, got {}",
                self.sigma_fraction
            )));
        }
        if self.kind == NoiseKind::GaussianDirectional {
            let d = Vector3::from(self.direction.unwrap_or(DEFAULT_DIRECTION));
            if (d.norm() - 1.0).abs() > 1e-6 {
                return Err(Error::Argument(format!(
                    "noise direction must be unit length, got |d| = {}",
                    d.norm()
                )));
            }
            if self
                .anisotropy
                .unwrap_or(DEFAULT_ANISOTROPY)
                .iter()
                .any(|a| !(*a >= 0.0))
            {
                return Err(Error::Argument("anisotropy entries must be >= 0".into()));
            }
        }
        Ok(())
    }
}

/// Orthonormal frame whose first axis is `d`.
pub(crate) fn frame(d: Vector3<f64>) -> [Vector3<f64>; 3] {
    let helper = if d.x.abs() < 0.9 {
        Vector3::x()
    } else {
        Vector3::y()
    };
    let e1 = d.cross(&helper).normalize();
    let e2 = d.cross(&e1);
    [d, e1, e2]
}

/// Returns a noisy copy of `cloud`; the input is not modified.
pub fn add_noise(cloud: &PointCloud, spec: &NoiseSpec) -> Result<PointCloud> {
    spec.validate()?;
    let diag = cloud.scale_diagonal()?;
    if spec.sigma_fraction == 0.0 {
        return Ok(cloud.clone());
    }
    let sigma = spec.sigma_fraction * diag;
    let mut rng = seed::rng(spec.seed, &[0x4E_01]);
    let mut draw = || -> f64 { StandardNormal.sample(&mut rng) };
    let offsets: Vec<Vector3<f64>> = match spec.kind {
        NoiseKind::GaussianIsotropic => (0..cloud.len())
            .map(|_| Vector3::new(draw(), draw(), draw()) * sigma)
            .collect(),
        NoiseKind::GaussianDirectional => {
            let axes = frame(Vector3::from(spec.direction.unwrap_or(DEFAULT_DIRECTION)));
            let a = spec.anisotropy.unwrap_or(DEFAULT_ANISOTROPY);
            (0..cloud.len())
                .map(|_| {
                    let (n0, n1, n2) = (draw(), draw(), draw());
                    (axes[0] * (a[0] * n0) + axes[1] * (a[1] * n1) + axes[2] * (a[2] * n2)) * sigma
                })
                .collect()
        }
    };
    cloud.displaced(&offsets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;
    use rand::Rng;

    fn random_cloud(n: usize) -> PointCloud {
        let mut rng = seed::rng(42, &[]);
        let mut pts: Vec<Point3<f64>> = (0..n)
            .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
            .collect();
        // pin the bbox to a unit diagonal
        let s = 1.0 / 3f64.sqrt();
        pts[0] = Point3::new(0.0, 0.0, 0.0);
        pts[1] = Point3::new(1.0, 1.0, 1.0);
        for p in &mut pts {
            *p = Point3::from(p.coords * s);
        }
        PointCloud::new(pts).unwrap()
    }

    #[test]
    fn zero_sigma_is_identity() {
        let c = random_cloud(100);
        assert_eq!(add_noise(&c, &NoiseSpec::isotropic(0.0, 1)).unwrap(), c);
    }

    #[test]
    fn isotropic_std_matches() {
        let c = random_cloud(100_000);
        assert!((c.bbox_diagonal() - 1.0).abs() < 1e-12);
        let noisy = add_noise(&c, &NoiseSpec::isotropic(0.01, 5)).unwrap();
        for axis in 0..3 {
            let d: Vec<f64> = noisy
                .points()
                .iter()
                .zip(c.points())
                .map(|(a, b)| a[axis] - b[axis])
                .collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (d.len() - 1) as f64;
            assert!(
                (var.sqrt() - 0.01).abs() < 0.05 * 0.01,
                "axis {axis}: {}",
                var.sqrt()
            );
        }
    }

    #[test]
    fn degenerate_directional_noise_is_axis_confined() {
        let c = random_cloud(2000);
        let spec = NoiseSpec::directional(0.02, [0.0, 0.0, 1.0], [1.0, 0.0, 0.0], 8);
        let noisy = add_noise(&c, &spec).unwrap();
        let mut moved = 0;
        for (a, b) in noisy.points().iter().zip(c.points()) {
            let d = a - b;
            assert!(d.x.abs() < 1e-15 && d.y.abs() < 1e-15);
            if d.z.abs() > 0.0 {
                moved += 1;
            }
        }
        assert!(moved > 1900);
    }

    #[test]
    fn rejects_bad_specs() {
        let c = random_cloud(10);
        assert!(add_noise(&c, &NoiseSpec::isotropic(-0.1, 0)).is_err());
        let spec = NoiseSpec::directional(0.01, [0.0, 0.0, 2.0], [1.0, 1.0, 1.0], 0);
        assert!(add_noise(&c, &spec).is_err());
        let flat = PointCloud::from_slices(&[[1.0, 1.0, 1.0]; 4]).unwrap();
        assert!(add_noise(&flat, &NoiseSpec::isotropic(0.01, 0)).is_err());
    }
}
