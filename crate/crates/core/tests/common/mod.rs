//! Brute-force oracles and random fixtures shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{Point3, Vector3};
use pointclean::PointCloud;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    pointclean::seed::rng(seed, &[0x7E57])
}

pub fn d2(a: &Point3<f64>, b: &Point3<f64>) -> f64 {
    (a - b).norm_squared()
}

/// Random cloud of `n` points in the unit cube. One in four clouds also gets
/// exact duplicates and a tight cluster, which stress tie handling.
pub fn random_points(rng: &mut impl Rng, n: usize) -> Vec<Point3<f64>> {
    let mut pts: Vec<Point3<f64>> = (0..n)
        .map(|_| Point3::new(rng.random(), rng.random(), rng.random()))
        .collect();
    if n > 4 && rng.random_bool(0.25) {
        for k in 0..n / 4 {
            let j = rng.random_range(0..n);
            pts[k] = if k % 2 == 0 {
                pts[j]
            } else {
                pts[j] + Vector3::new(rng.random(), rng.random(), rng.random()) * 1e-9
            };
        }
    }
    pts
}

pub fn random_cloud(rng: &mut impl Rng, n: usize) -> PointCloud {
    PointCloud::new(random_points(rng, n)).unwrap()
}

pub fn brute_nearest(points: &[Point3<f64>], q: &Point3<f64>) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, p) in points.iter().enumerate() {
        let d = d2(p, q);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

pub fn brute_chamfer(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let one = |x: &[Point3<f64>], y: &[Point3<f64>]| {
        x.iter().map(|p| brute_nearest(y, p).1).sum::<f64>() / x.len() as f64
    };
    one(a, b) + one(b, a)
}

pub fn brute_rmsd(cleaned: &[Point3<f64>], gt: &[Point3<f64>]) -> f64 {
    (cleaned.iter().map(|p| brute_nearest(gt, p).1).sum::<f64>() / cleaned.len() as f64).sqrt()
}

pub fn brute_radius(points: &[Point3<f64>], c: &Point3<f64>, r: f64) -> Vec<usize> {
    (0..points.len())
        .filter(|&j| d2(&points[j], c) <= r * r)
        .collect()
}

/// Ascending `(distance, index)` order.
pub fn brute_knn(points: &[Point3<f64>], q: &Point3<f64>, k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = points
        .iter()
        .enumerate()
        .map(|(j, p)| (d2(p, q), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.into_iter().take(k).map(|(_, j)| j).collect()
}

/// `d'_i = -(1/k) sum_j (d_j - d_i)` over the `k` nearest other points.
pub fn brute_inflate(
    field: &[Vector3<f64>],
    points: &[Point3<f64>],
    k: usize,
) -> Vec<Vector3<f64>> {
    let n = points.len();
    let k = k.min(n - 1);
    (0..n)
        .map(|i| {
            if k == 0 {
                return field[i];
            }
            let mut acc = Vector3::zeros();
            for j in brute_knn(points, &points[i], n)
                .into_iter()
                .filter(|&j| j != i)
                .take(k)
            {
                acc += field[j] - field[i];
            }
            -acc / k as f64
        })
        .collect()
}

pub fn brute_proximity(c: &Vector3<f64>, patch: &[Vector3<f64>]) -> f64 {
    patch
        .iter()
        .map(|p| (c - p).norm_squared())
        .fold(f64::INFINITY, f64::min)
}

pub fn brute_regularity(c: &Vector3<f64>, patch: &[Vector3<f64>]) -> f64 {
    patch
        .iter()
        .map(|p| (c - p).norm_squared())
        .fold(f64::NEG_INFINITY, f64::max)
}

/// L_b with the nearest clean point found by a full scan.
pub fn brute_fixed_target_loss(
    cleaned: &Point3<f64>,
    noisy: &Point3<f64>,
    clean: &[Point3<f64>],
) -> f64 {
    let t = clean[brute_nearest(clean, noisy).0];
    d2(cleaned, &t)
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

pub fn vec_rel_err(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

/// Parameters with every tensor randomized (batch-norm statistics included),
/// so no transformer starts at the identity.
pub fn random_params(
    config: &pointclean::model::ModelConfig,
    seed: u64,
) -> pointclean::model::ModelParams {
    use pointclean::losses::DenoiseLoss;
    use pointclean::model::HeadKind;
    use pointclean::training::GradCheckFixture;
    let loss = (config.head == HeadKind::Displacement).then_some(DenoiseLoss::Baseline);
    let f = GradCheckFixture::random(config, loss, 1, seed).unwrap();
    let values = f.params.iter().map(|&v| v as f32).collect();
    pointclean::model::ModelParams::from_values(f.config, values, Default::default()).unwrap()
}

/// Patch with `real` random rows in the unit ball and the rest padding.
pub fn random_patch(rng: &mut impl Rng, real: usize, m: usize) -> pointclean::Patch {
    let mut rows = vec![Vector3::zeros()];
    while rows.len() < real {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        if v.norm() <= 1.0 {
            rows.push(v);
        }
    }
    pointclean::Patch::from_normalized(&rows, m, 0.05).unwrap()
}
