//! Triangle meshes and area-uniform surface sampling.

use nalgebra::Point3;
use rand::Rng;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[usize; 3]>,
}

impl Mesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if let Some(t) = triangles
            .iter()
            .find(|t| t.iter().any(|&i| i >= vertices.len()))
        {
            return Err(Error::Structural(format!(
                "triangle {t:?} references a vertex beyond {}",
                vertices.len()
            )));
        }
        if vertices
            .iter()
            .any(|v| !v.coords.iter().all(|c| c.is_finite()))
        {
            return Err(Error::Structural("mesh has a non-finite vertex".into()));
        }
        let mesh = Self {
            vertices,
            triangles,
        };
        if !mesh.triangle_areas().iter().any(|&a| a > 0.0) {
            return Err(Error::Structural(
                "mesh has no triangle with nonzero area".into(),
            ));
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn triangle(&self, t: usize) -> [Point3<f64>; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_areas(&self) -> Vec<f64> {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.triangle(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .collect()
    }

    pub fn total_area(&self) -> f64 {
        self.triangle_areas().iter().sum()
    }

    /// Copy centered on its bounding box and scaled to unit bbox diagonal.
    pub fn normalized_to_unit_diagonal(&self) -> Result<Self> {
        let cloud = PointCloud::new(self.vertices.clone())?;
        let normalized = cloud.normalized_to_unit_diagonal()?;
        Mesh::new(normalized.into_points(), self.triangles.clone())
    }
}

/// Draws `n` points uniformly with respect to surface area.
///
/// A triangle is picked with probability proportional to its area, then a
/// point inside it with the square-root barycentric construction.
pub fn sample_mesh(mesh: &Mesh, n: usize, seed: u64) -> Result<PointCloud> {
    if n == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    let areas = mesh.triangle_areas();
    let mut cumulative = Vec::with_capacity(areas.len());
    let mut total = 0.0;
    for a in &areas {
        total += a;
        cumulative.push(total);
    }
    if !(total > 0.0) {
        return Err(Error::Generation("mesh has zero total area".into()));
    }
    let mut rng = seed::rng(seed, &[0x5A_4D]);
    let mut points = Vec::with_capacity(n);
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        let mut t = cumulative.partition_point(|&c| c <= u).min(areas.len() - 1);
        // Skip zero-area triangles that share a cumulative value with the next one.
        while areas[t] == 0.0 && t + 1 < areas.len() {
            t += 1;
        }
        let [a, b, c] = mesh.triangle(t);
        let s = rng.random::<f64>().sqrt();
        let r2 = rng.random::<f64>();
        let (wa, wb, wc) = (1.0 - s, s * (1.0 - r2), s * r2);
        points.push(Point3::from(a.coords * wa + b.coords * wb + c.coords * wc));
    }
    PointCloud::new(points)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(scale: f64, offset: f64) -> [Point3<f64>; 3] {
        [
            Point3::new(offset, 0.0, 0.0),
            Point3::new(offset + scale, 0.0, 0.0),
            Point3::new(offset, scale, 0.0),
        ]
    }

    #[test]
    fn single_triangle_contains_samples() {
        let [a, b, c] = tri(1.0, 0.0);
        let m = Mesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
        let cloud = sample_mesh(&m, 5000, 3).unwrap();
        for p in cloud.points() {
            // barycentric coordinates of the right triangle (0,0),(1,0),(0,1)
            let (u, v) = (p.x, p.y);
            let w = 1.0 - u - v;
            assert!(u >= -1e-12 && v >= -1e-12 && w >= -1e-12);
            assert!((u + v + w - 1.0).abs() < 1e-12);
            assert_eq!(p.z, 0.0);
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let [a, b, c] = tri(1.0, 0.0);
        let m = Mesh::new(vec![a, b, c], vec![[0, 1, 2]]).unwrap();
        assert_eq!(
            sample_mesh(&m, 100, 9).unwrap(),
            sample_mesh(&m, 100, 9).unwrap()
        );
        assert_ne!(
            sample_mesh(&m, 100, 9).unwrap(),
            sample_mesh(&m, 100, 10).unwrap()
        );
    }

    #[test]
    fn area_ratio_matches_binomial() {
        // Triangle side 2 has 4x the area of triangle side 1.
        let [a, b, c] = tri(2.0, 0.0);
        let [d, e, f] = tri(1.0, 10.0);
        let m = Mesh::new(vec![a, b, c, d, e, f], vec![[0, 1, 2], [3, 4, 5]]).unwrap();
        let n = 50_000;
        let cloud = sample_mesh(&m, n, 11).unwrap();
        let big = cloud.points().iter().filter(|p| p.x < 5.0).count() as f64;
        let expected = n as f64 * 0.8;
        let sd = (n as f64 * 0.8 * 0.2).sqrt();
        assert!((big - expected).abs() < 3.0 * sd, "big = {big}");
    }

    #[test]
    fn invalid_meshes_rejected() {
        let p = Point3::origin();
        assert!(Mesh::new(vec![p, p, p], vec![[0, 1, 2]]).is_err());
        assert!(Mesh::new(vec![p], vec![[0, 1, 2]]).is_err());
        assert!(sample_mesh(
            &Mesh::new(tri(1.0, 0.0).to_vec(), vec![[0, 1, 2]]).unwrap(),
            0,
            0
        )
        .is_err());
    }
}
