mod common;

use common::*;
use nalgebra::{Matrix3, Vector3};
use ndarray::Array2;
use pointclean::model::{
    patches_to_input, predict_displacement, predict_displacements, predict_outlier_probabilities,
    predict_outlier_probability, quaternion_to_rotation, HeadKind, Mode, ModelConfig, ModelParams,
    Network, Quaternion,
};
use pointclean::{extract_patch, Patch, SpatialIndex};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn permuted(p: &Patch, perm: &[usize]) -> Patch {
    let mut q = p.clone();
    q.normalized_points = perm.iter().map(|&k| p.normalized_points[k]).collect();
    q.pad_mask = perm.iter().map(|&k| p.pad_mask[k]).collect();
    q
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn forward_ignores_row_order(seed in 0u64..10_000, real in 1usize..=64) {
        let config = ModelConfig::tiny(HeadKind::Displacement);
        let params = random_params(&config, seed);
        let mut rng = rng(seed);
        let patch = random_patch(&mut rng, real, config.m);
        let mut perm: Vec<usize> = (0..config.m).collect();
        perm.shuffle(&mut rng);
        let a = predict_displacement(&patch, &params).unwrap();
        let b = predict_displacement(&permuted(&patch, &perm), &params).unwrap();
        prop_assert!(vec_rel_err(&a, &b) <= 1e-5, "{a:?} vs {b:?}");
    }

    #[test]
    fn rotations_are_orthonormal(w in -10.0..10.0f64, x in -10.0..10.0f64, y in -10.0..10.0f64, z in -10.0..10.0f64) {
        prop_assume!(w * w + x * x + y * y + z * z > 1e-6);
        let r = quaternion_to_rotation(&Quaternion::new(w, x, y, z)).unwrap();
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
        prop_assert!((m.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn extracted_patches_are_normalized(seed in 0u64..10_000, n in 1usize..300, m in 1usize..40, r in 0.05..0.8f64) {
        let mut rng = rng(seed);
        let cloud = random_cloud(&mut rng, n);
        let index = SpatialIndex::build(&cloud);
        let i = seed as usize % n;
        let p = extract_patch(&cloud, &index, i, r, m, seed).unwrap();
        prop_assert_eq!(p.cardinality(), m);
        prop_assert!(p.member_indices.contains(&i));
        prop_assert_eq!(p.real_rows(), index.radius_neighbors(cloud.point(i), r).len().min(m));
        let center_row = p.member_indices.iter().position(|&j| j == i).unwrap();
        prop_assert_eq!(p.normalized_points[center_row], Vector3::zeros());
        for (row, &real) in p.normalized_points.iter().zip(&p.pad_mask) {
            if real {
                prop_assert!(row.norm() <= 1.0 + 1e-12);
            } else {
                prop_assert_eq!(*row, Vector3::zeros());
            }
        }
        let again = extract_patch(&cloud, &index, i, r, m, seed).unwrap();
        prop_assert_eq!(p, again);
    }
}

#[test]
fn zero_weights_give_zero_output() {
    let mut rng = rng(3);
    let patches: Vec<Patch> = (1..10).map(|k| random_patch(&mut rng, k * 7, 64)).collect();
    let refs: Vec<&Patch> = patches.iter().collect();
    let d = ModelParams::all_zero(ModelConfig::tiny(HeadKind::Displacement)).unwrap();
    for v in predict_displacements(&refs, &d).unwrap() {
        assert_eq!(v, Vector3::zeros());
    }
    let o = ModelParams::all_zero(ModelConfig::tiny(HeadKind::Outlier)).unwrap();
    for p in predict_outlier_probabilities(&refs, &o).unwrap() {
        assert_eq!(p, 0.5);
    }
}

#[test]
fn batched_inference_equals_one_at_a_time() {
    let mut rng = rng(4);
    let patches: Vec<Patch> = (0..300)
        .map(|k| random_patch(&mut rng, 1 + k % 64, 64))
        .collect();
    let refs: Vec<&Patch> = patches.iter().collect();
    let d = random_params(&ModelConfig::tiny(HeadKind::Displacement), 5);
    let batched = predict_displacements(&refs, &d).unwrap();
    for (p, b) in patches.iter().zip(&batched) {
        assert_eq!(predict_displacement(p, &d).unwrap(), *b);
    }
    let o = random_params(&ModelConfig::tiny(HeadKind::Outlier), 6);
    let batched = predict_outlier_probabilities(&refs, &o).unwrap();
    for (p, b) in patches.iter().zip(&batched) {
        assert_eq!(predict_outlier_probability(p, &o).unwrap(), *b);
    }
}

#[test]
fn padded_rows_add_a_constant_pooled_term() {
    // Without transformers every row is mapped independently, so extra zero
    // rows add exactly their own feature to the pooled vector.
    let base = ModelConfig {
        use_qstn: false,
        feature_stn_after: None,
        ..ModelConfig::tiny(HeadKind::Displacement)
    };
    let params: Vec<f64> = random_params(&base, 8).cast();
    let mut rng = rng(9);
    let real = random_patch(&mut rng, 20, 20);
    let pooled = |m: usize, rows: &[Vector3<f64>]| -> Array2<f64> {
        let net = Network::new(&ModelConfig { m, ..base.clone() }).unwrap();
        let p = Patch::from_normalized(rows, m, 1.0).unwrap();
        let x = patches_to_input::<f64>(&[&p], m).unwrap();
        net.forward(&params, &x, 1, Mode::Eval)
            .unwrap()
            .1
            .pooled()
            .clone()
    };
    let rows = &real.normalized_points;
    let h0 = pooled(1, &[Vector3::zeros()]);
    let p30 = pooled(30, rows);
    let p45 = pooled(45, rows);
    for ((a, b), h) in p45.iter().zip(&p30).zip(&h0) {
        let want = b + 15.0 * h;
        assert!(
            (a - want).abs() <= 1e-10 * a.abs().max(1.0),
            "{a} vs {want}"
        );
    }
}
