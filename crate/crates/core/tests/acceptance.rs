//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass criterion numbers as arguments to run a subset,
//! e.g. `cargo test --test acceptance -- 1 2 9`.

mod common;

use std::time::Instant;

use common::*;
use nalgebra::{Matrix3, Vector3};
use pointclean::corruption::mesh::sample_mesh;
use pointclean::corruption::noise::{add_noise, NoiseSpec};
use pointclean::corruption::outliers::{inject_outliers, OutlierSpec};
use pointclean::corruption::shapes::builtin;
use pointclean::losses::{
    fixed_targets, loss_fixed_target, loss_proximity, loss_regularity, DenoiseLoss,
};
use pointclean::metrics::{chamfer_measure, f_beta, rmsd};
use pointclean::model::{
    predict_displacement, predict_outlier_probability, quaternion_to_rotation, HeadKind,
    ModelConfig, ModelParams, Quaternion,
};
use pointclean::pipeline::{
    clean_observed, inflate, remove_outliers, CleaningConfig, DisplacementField,
};
use pointclean::training::{
    gradient_check, train, GradCheckFixture, OptimizerConfig, OptimizerKind, TrainConfig,
    TrainHead, TrainLoss, TrainOptions, TrainingSet, TrainingShape,
};
use pointclean::{extract_patch, PointCloud, SpatialIndex};
use rand::seq::SliceRandom;
use rand::Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Bit patterns of every number a criterion computed, for the determinism check.
type Transcript = Vec<u64>;

fn record(t: &mut Transcript, v: f64) {
    t.push(v.to_bits());
}

// Property criteria.

fn oracle_equivalence() -> (Outcome, Transcript) {
    let mut rng = rng(101);
    let mut t = Transcript::new();
    let mut worst = 0.0f64;
    let mut exact = true;
    for _ in 0..100 {
        let na = rng.random_range(1..=300);
        let nb = rng.random_range(1..=300);
        let a = random_points(&mut rng, na);
        let b = random_points(&mut rng, nb);
        let (ca, cb) = (
            PointCloud::new(a.clone()).unwrap(),
            PointCloud::new(b.clone()).unwrap(),
        );

        let c = chamfer_measure(&ca, &cb).unwrap();
        let r = rmsd(&ca, &cb).unwrap();
        worst = worst
            .max(rel_err(c, brute_chamfer(&a, &b)))
            .max(rel_err(r, brute_rmsd(&a, &b)));
        record(&mut t, c);
        record(&mut t, r);

        let index = SpatialIndex::from_points(&a);
        let q = b[0];
        let radius = rng.random_range(0.0..0.8);
        let got = index.radius_neighbors(&q, radius);
        exact &= got == brute_radius(&a, &q, radius);
        let k = rng.random_range(1..=na);
        let nn = index.knn(&q, k).unwrap();
        exact &= nn == brute_knn(&a, &q, k);
        t.extend(got.iter().chain(&nn).map(|&i| i as u64));

        let field: Vec<Vector3<f64>> = (0..na)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                )
            })
            .collect();
        if na > 1 {
            let inflated = inflate(
                &DisplacementField {
                    vectors: field.clone(),
                },
                &ca,
                10,
            )
            .unwrap();
            for (g, w) in inflated.vectors.iter().zip(brute_inflate(&field, &a, 10)) {
                worst = worst.max(vec_rel_err(g, &w));
                record(&mut t, g.x);
            }
        }

        let patch: Vec<Vector3<f64>> = a.iter().map(|p| p.coords).collect();
        let cleaned = b[0].coords;
        let ls = loss_proximity(&cleaned, &patch).unwrap();
        let lr = loss_regularity(&cleaned, &patch).unwrap();
        worst = worst
            .max(rel_err(ls, brute_proximity(&cleaned, &patch)))
            .max(rel_err(lr, brute_regularity(&cleaned, &patch)));
        record(&mut t, ls);
        record(&mut t, lr);

        let targets = fixed_targets(&cb, &ca, &SpatialIndex::build(&ca));
        for (i, q) in b.iter().enumerate().take(20) {
            let moved = q + Vector3::new(0.01, 0.0, -0.01);
            let lb = loss_fixed_target(&moved.coords, &targets[i].coords);
            worst = worst.max(rel_err(lb, brute_fixed_target_loss(&moved, q, &a)));
            record(&mut t, lb);
        }
    }
    let pass = exact && worst <= 1e-10;
    (
        outcome(
            pass,
            format!("max relative error {worst:.2e}, index queries exact: {exact}"),
        ),
        t,
    )
}

fn permutation_invariance() -> (Outcome, Transcript) {
    let mut t = Transcript::new();
    let mut worst = 0.0f64;
    for pair in 0..50u64 {
        let head = if pair % 2 == 0 {
            HeadKind::Displacement
        } else {
            HeadKind::Outlier
        };
        let config = ModelConfig::tiny(head);
        let params = random_params(&config, 500 + pair);
        let mut rng = rng(600 + pair);
        let real = rng.random_range(1..=config.m);
        let patch = random_patch(&mut rng, real, config.m);
        let mut perm: Vec<usize> = (0..config.m).collect();
        perm.shuffle(&mut rng);
        let mut shuffled = patch.clone();
        shuffled.normalized_points = perm.iter().map(|&k| patch.normalized_points[k]).collect();
        shuffled.pad_mask = perm.iter().map(|&k| patch.pad_mask[k]).collect();
        let err = match head {
            HeadKind::Displacement => {
                let (a, b) = (
                    predict_displacement(&patch, &params).unwrap(),
                    predict_displacement(&shuffled, &params).unwrap(),
                );
                record(&mut t, a.x);
                vec_rel_err(&a, &b)
            }
            HeadKind::Outlier => {
                let a = predict_outlier_probability(&patch, &params).unwrap();
                let b = predict_outlier_probability(&shuffled, &params).unwrap();
                record(&mut t, a);
                rel_err(a, b)
            }
        };
        worst = worst.max(err);
    }
    (
        outcome(
            worst <= 1e-5,
            format!("max relative difference {worst:.2e} over 50 pairs"),
        ),
        t,
    )
}

fn gradcheck_config() -> ModelConfig {
    ModelConfig {
        m: 16,
        point_feature_widths: vec![5, 6, 7],
        feature_stn_after: Some(0),
        regressor_widths: vec![6, 5],
        stn_point_widths: vec![4, 5],
        stn_regressor_widths: vec![5, 4],
        ..ModelConfig::tiny(HeadKind::Displacement)
    }
}

fn gradient_checks() -> (Outcome, Transcript) {
    let mut t = Transcript::new();
    let losses: [(&str, Option<DenoiseLoss>); 6] = [
        ("L_o", None),
        ("L_c", Some(DenoiseLoss::Baseline)),
        ("L_s", Some(DenoiseLoss::Proximity)),
        ("L_r", Some(DenoiseLoss::Regularity)),
        ("L_a", Some(DenoiseLoss::Combined)),
        ("L_b", Some(DenoiseLoss::FixedTarget)),
    ];
    let mut parts = Vec::new();
    let mut pass = true;
    for (name, loss) in losses {
        let mut worst = 0.0f64;
        let (mut checked, mut kinks) = (0, 0);
        for seed in 1..=3 {
            let f = GradCheckFixture::random(&gradcheck_config(), loss, 6, seed).unwrap();
            let r = gradient_check(&f, 1e-6, 1000).unwrap();
            worst = worst.max(r.max_relative_error);
            checked += r.checked;
            kinks += r.kinks;
            record(&mut t, r.max_relative_error);
        }
        pass &= worst < 1e-4 && kinks * 20 < checked;
        parts.push(format!("{name} {worst:.1e}"));
    }
    (
        outcome(pass, format!("max relative error: {}", parts.join(", "))),
        t,
    )
}

fn rotation_validity() -> (Outcome, Transcript) {
    let mut rng = rng(400);
    let mut t = Transcript::new();
    let (mut ortho, mut det) = (0.0f64, 0.0f64);
    let mut check = |r: [[f64; 3]; 3]| {
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        ortho = ortho.max((m.transpose() * m - Matrix3::identity()).amax());
        det = det.max((m.determinant() - 1.0).abs());
    };
    for _ in 0..1000 {
        let q: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let r64 = quaternion_to_rotation(&Quaternion::from_array(q)).unwrap();
        let q32 = q.map(|v| v as f32);
        let r32 = quaternion_to_rotation(&Quaternion::from_array(q32)).unwrap();
        check(r64);
        check(r32.map(|row| row.map(f64::from)));
        record(&mut t, r64[0][1]);
        record(&mut t, r32[2][0] as f64);
    }
    let pass = ortho < 1e-6 && det < 1e-6;
    (
        outcome(
            pass,
            format!("max |R^T R - I| {ortho:.1e}, max |det R - 1| {det:.1e} (f32 and f64)"),
        ),
        t,
    )
}

fn inflation_identities() -> (Outcome, Transcript) {
    let mut rng = rng(500);
    let mut t = Transcript::new();
    let mut pass = true;
    for trial in 0..10 {
        let n = 150 + 20 * trial;
        let cloud = random_cloud(&mut rng, n);
        let d = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let field = DisplacementField {
            vectors: vec![d; n],
        };
        for k in [1, 10, 100] {
            let out = inflate(&field, &cloud, k).unwrap();
            pass &= out.vectors.iter().all(|v| v.iter().all(|&c| c == 0.0));
            t.extend(
                out.vectors
                    .iter()
                    .flat_map(|v| v.iter().map(|c| c.to_bits())),
            );
        }
    }
    (
        outcome(
            pass,
            "constant field maps to exactly zero for k in {1, 10, 100} on 10 clouds".into(),
        ),
        t,
    )
}

// Desk-scale fixtures.

const LOSS_ORDERING: usize = 8;

const DESK_POINTS: usize = 10_000;
const TRAIN_SHAPES: [&str; 3] = ["cube", "sphere", "torus"];

fn desk_train_config(
    head: TrainHead,
    loss: TrainLoss,
    epochs: usize,
    patches: usize,
) -> TrainConfig {
    let mut tc = TrainConfig::new(head, loss);
    tc.epochs = epochs;
    tc.patches_per_shape_per_epoch = patches;
    tc.learning_rate = Some(1e-3);
    tc.optimizer = OptimizerConfig {
        kind: OptimizerKind::Adam,
        ..OptimizerConfig::default()
    };
    tc.validate_every = usize::MAX;
    tc
}

fn denoise_set() -> TrainingSet {
    let mut shapes = Vec::new();
    for (s, name) in TRAIN_SHAPES.iter().enumerate() {
        let clean = sample_mesh(&builtin(name).unwrap(), DESK_POINTS, 10 + s as u64).unwrap();
        for (k, sigma) in [0.0, 0.01].into_iter().enumerate() {
            let noisy = add_noise(
                &clean,
                &NoiseSpec::isotropic(sigma, 100 + 10 * s as u64 + k as u64),
            )
            .unwrap();
            shapes.push(TrainingShape {
                name: format!("{name}_{sigma}"),
                noisy,
                clean: clean.clone(),
            });
        }
    }
    TrainingSet::new(shapes).unwrap()
}

fn train_denoiser(set: &TrainingSet, loss: TrainLoss) -> ModelParams {
    let tc = desk_train_config(TrainHead::Denoise, loss, 30, 1000);
    let t = Instant::now();
    let run = train(
        set,
        &ModelConfig::tiny(HeadKind::Displacement),
        &tc,
        TrainOptions::default(),
    )
    .unwrap();
    println!(
        "  trained {loss:?} for 30 epochs in {:.0}s",
        t.elapsed().as_secs_f64()
    );
    run.final_params
}

struct DenoiseFixture {
    clean: PointCloud,
    noisy: PointCloud,
    models: Vec<(TrainLoss, ModelParams)>,
}

/// Runs the pipeline without outlier removal and returns the cloud after each
/// iteration.
fn iterate(
    cloud: &PointCloud,
    params: &ModelParams,
    iterations: usize,
    inflation: bool,
) -> Vec<PointCloud> {
    let config = CleaningConfig {
        iterations,
        inflation,
        ..CleaningConfig::default()
    };
    let mut steps = Vec::new();
    clean_observed(cloud, None, params, &config, None, |_, c| {
        steps.push(c.clone());
        Ok(())
    })
    .unwrap();
    steps
}

fn desk_denoising(f: &DenoiseFixture) -> Vec<(usize, Outcome)> {
    let noisy_chamfer = chamfer_measure(&f.noisy, &f.clean).unwrap();
    let mut finals = Vec::new();
    let mut l_a_steps = Vec::new();
    for (loss, params) in &f.models {
        let steps = iterate(&f.noisy, params, 2, true);
        let chamfers: Vec<f64> = steps
            .iter()
            .map(|c| chamfer_measure(c, &f.clean).unwrap())
            .collect();
        if *loss == TrainLoss::Combined {
            l_a_steps = chamfers.clone();
        }
        finals.push(chamfers[1]);
    }
    let (a, b, c) = (finals[0], finals[1], finals[2]);
    let c6 = outcome(
        a <= 0.7 * noisy_chamfer,
        format!(
            "cleaned {a:.4e} vs noisy {noisy_chamfer:.4e} (ratio {:.3}, bound 0.7)",
            a / noisy_chamfer
        ),
    );
    let c7 = outcome(
        l_a_steps[1] <= l_a_steps[0],
        format!(
            "iteration 1 {:.4e}, iteration 2 {:.4e}",
            l_a_steps[0], l_a_steps[1]
        ),
    );
    let banded = a <= 1.05 * b && b <= 1.05 * c;
    let c8 = outcome(
        banded,
        format!(
            "L_a {a:.4e}, L_b {b:.4e}, L_c {c:.4e}{}",
            if banded {
                ""
            } else {
                "  [ordering band violated]"
            }
        ),
    );
    vec![(6, c6), (7, c7), (8, c8)]
}

fn anti_shrinkage(f: &DenoiseFixture) -> Outcome {
    let params = &f.models[0].1;
    let d0 = f.noisy.bbox_diagonal();
    let with = d0 - iterate(&f.noisy, params, 5, true)[4].bbox_diagonal();
    let without = d0 - iterate(&f.noisy, params, 5, false)[4].bbox_diagonal();
    outcome(
        with < without,
        format!("diagonal shrinkage after 5 iterations: {with:.4e} with inflation, {without:.4e} without"),
    )
}

fn zero_noise_preservation(f: &DenoiseFixture) -> Outcome {
    let params = &f.models[0].1;
    let on_clean = chamfer_measure(&iterate(&f.clean, params, 2, true)[1], &f.clean).unwrap();
    let on_noisy = chamfer_measure(&iterate(&f.noisy, params, 2, true)[1], &f.clean).unwrap();
    outcome(
        on_clean < on_noisy,
        format!(
            "chamfer increase on clean input {on_clean:.4e}, chamfer on 1% input {on_noisy:.4e}"
        ),
    )
}

fn outlier_cloud(name: &str, seed: u64) -> (PointCloud, PointCloud) {
    let clean = sample_mesh(&builtin(name).unwrap(), DESK_POINTS, seed).unwrap();
    let noisy = add_noise(&clean, &NoiseSpec::isotropic(0.005, seed + 1)).unwrap();
    let (with_outliers, _) =
        inject_outliers(&noisy, &OutlierSpec::gaussian(0.3, 0.005, seed + 2), &clean).unwrap();
    (clean, with_outliers)
}

fn desk_outliers() -> Outcome {
    let shapes = TRAIN_SHAPES
        .iter()
        .enumerate()
        .map(|(s, name)| {
            let (clean, noisy) = outlier_cloud(name, 10 * s as u64);
            TrainingShape {
                name: name.to_string(),
                noisy,
                clean,
            }
        })
        .collect();
    let set = TrainingSet::new(shapes).unwrap();
    let tc = desk_train_config(TrainHead::Outlier, TrainLoss::Outlier, 60, 2000);
    let t = Instant::now();
    let params = train(
        &set,
        &ModelConfig::tiny(HeadKind::Outlier),
        &tc,
        TrainOptions::default(),
    )
    .unwrap()
    .final_params;
    println!(
        "  trained the outlier head for 60 epochs in {:.0}s",
        t.elapsed().as_secs_f64()
    );

    let (_, test) = outlier_cloud("cylinder", 99);
    let config = CleaningConfig::default();
    let (_, removed) = remove_outliers(&test, &params, &config).unwrap();
    let (f2, _) = f_beta(&removed, test.labels().unwrap(), 2.0).unwrap();

    let index = SpatialIndex::build(&test);
    let r = config.radius_for(&test);
    let mismatches = (0..test.len())
        .filter(|&i| {
            let patch =
                extract_patch(&test, &index, i, r, params.config.m, config.patch_seed).unwrap();
            let p = predict_outlier_probability(&patch, &params).unwrap();
            (p > config.outlier_threshold) != removed[i]
        })
        .count();
    outcome(
        f2 >= 0.85 && mismatches == 0,
        format!("F2 {f2:.4} (bound 0.85), pointwise recomputation mismatches: {mismatches}"),
    )
}

fn single_thread<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

fn property_transcripts() -> Vec<Transcript> {
    vec![
        oracle_equivalence().1,
        permutation_invariance().1,
        gradient_checks().1,
        rotation_validity().1,
        inflation_identities().1,
    ]
}

fn short_training_run() -> Transcript {
    let (clean, noisy) = outlier_cloud("sphere", 7);
    let outliers = TrainingSet::new(vec![TrainingShape {
        name: "sphere".into(),
        noisy,
        clean: clean.clone(),
    }])
    .unwrap();
    let mut t = Transcript::new();
    for (set, head, loss) in [
        (outliers, TrainHead::Outlier, TrainLoss::Outlier),
        (denoise_set(), TrainHead::Denoise, TrainLoss::Combined),
    ] {
        let tc = desk_train_config(head, loss, 2, 200);
        let run = train(
            &set,
            &ModelConfig::tiny(head.model_head()),
            &tc,
            TrainOptions::default(),
        )
        .unwrap();
        t.extend(run.final_params.values.iter().map(|v| v.to_bits() as u64));
        t.extend(run.loss_curve.iter().map(|v| v.to_bits()));
    }
    t
}

fn determinism() -> Outcome {
    let a = single_thread(property_transcripts);
    let b = single_thread(property_transcripts);
    let props = a == b;
    let ta = single_thread(short_training_run);
    let tb = single_thread(short_training_run);
    let training = ta == tb;
    outcome(
        props && training,
        format!(
            "criteria 1-5 identical: {props} ({} values), 2-epoch training identical: {training} ({} values)",
            a.iter().map(Vec::len).sum::<usize>(),
            ta.len()
        ),
    )
}

fn main() {
    let selected: Vec<usize> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let want = |c: usize| selected.is_empty() || selected.contains(&c);
    let mut results: Vec<(usize, Outcome)> = Vec::new();
    let mut run = |ids: &[usize], f: &mut dyn FnMut() -> Vec<(usize, Outcome)>| {
        if !ids.iter().any(|&c| want(c)) {
            return;
        }
        let t = Instant::now();
        for (id, o) in f().into_iter().filter(|(c, _)| want(*c)) {
            println!(
                "criterion {id:>2} {}: {} [{:.1}s]",
                if o.pass { "PASS" } else { "FAIL" },
                o.detail,
                t.elapsed().as_secs_f64()
            );
            results.push((id, o));
        }
    };

    run(&[1], &mut || vec![(1, oracle_equivalence().0)]);
    run(&[2], &mut || vec![(2, permutation_invariance().0)]);
    run(&[3], &mut || vec![(3, gradient_checks().0)]);
    run(&[4], &mut || vec![(4, rotation_validity().0)]);
    run(&[5], &mut || vec![(5, inflation_identities().0)]);

    let needs_denoisers = [6, 7, 8, 10, 11].iter().any(|&c| want(c));
    if needs_denoisers {
        let set = denoise_set();
        let clean = sample_mesh(&builtin("cylinder").unwrap(), DESK_POINTS, 77).unwrap();
        let noisy = add_noise(&clean, &NoiseSpec::isotropic(0.01, 78)).unwrap();
        let losses = if [6, 7, 8].iter().any(|&c| want(c)) {
            vec![
                TrainLoss::Combined,
                TrainLoss::FixedTarget,
                TrainLoss::Baseline,
            ]
        } else {
            vec![TrainLoss::Combined]
        };
        let models = losses
            .into_iter()
            .map(|l| (l, train_denoiser(&set, l)))
            .collect();
        let fixture = DenoiseFixture {
            clean,
            noisy,
            models,
        };
        if fixture.models.len() == 3 {
            run(&[6, 7, 8], &mut || desk_denoising(&fixture));
        }
        run(&[10], &mut || vec![(10, anti_shrinkage(&fixture))]);
        run(&[11], &mut || vec![(11, zero_noise_preservation(&fixture))]);
    }
    run(&[9], &mut || vec![(9, desk_outliers())]);
    run(&[12], &mut || vec![(12, determinism())]);

    results.sort_by_key(|(c, _)| *c);
    let failed: Vec<usize> = results.iter().filter(|(_, o)| !o.pass).map(|(c, _)| *c).collect();
    let list = |v: &[usize]| v.iter().map(usize::to_string).collect::<Vec<_>>().join(", ");
    println!(
        "acceptance: {} passed, {} failed{}",
        results.len() - failed.len(),
        failed.len(),
        if failed.is_empty() {
            String::new()
        } else {
            format!(" (criteria {})", list(&failed))
        }
    );
    // The loss-ordering criterion asks for the numbers to be reported and the
    // run flagged when the band is violated, so it alone does not fail the
    // binary.
    let fatal: Vec<usize> = failed.into_iter().filter(|&c| c != LOSS_ORDERING).collect();
    if !fatal.is_empty() {
        std::process::exit(1);
    }
}
