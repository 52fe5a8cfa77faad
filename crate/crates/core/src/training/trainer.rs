//! The training loop.
//!
//! Every epoch draws its query points, its shuffle, and its patch subsampling
//! from streams derived from `(master_seed, epoch)`, so a run resumed from a
//! checkpoint continues exactly as an uninterrupted one would.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use log::info;
use nalgebra::Point3;
use ndarray::Array2;
use rand::seq::{index::sample, SliceRandom};
use rayon::prelude::*;

use crate::corruption::dataset::DatasetManifest;
use crate::error::{Error, Result};
use crate::losses::{
    fixed_targets, loss_outlier_logit_grad, point_loss_grad, DenoiseLoss, LossTarget,
};
use crate::metrics::f_beta;
use crate::model::checkpoint::{save_checkpoint, OptimizerState};
use crate::model::config::ModelConfig;
use crate::model::network::{BatchStats, Mode, Network};
use crate::model::params::ModelParams;
use crate::model::predict::patches_to_input;
use crate::model::scalar::Scalar;
use crate::patch::{extract_patch, Patch};
use crate::pipeline::{
    displacement_field, inflate_with_index, outlier_probabilities, scaled_chamfer, CleaningConfig,
};
use crate::seed;
use crate::spatial::SpatialIndex;
use crate::training::config::{TrainConfig, TrainHead};
use crate::training::data::TrainingSet;
use crate::training::init::init_params;
use crate::training::optim::Optimizer;

const S_QUERY: u64 = 0x51;
const S_SHUFFLE: u64 = 0x5F;
const S_PATCH: u64 = 0xA7;
const S_INIT: u64 = 0x1A;
const S_VALID: u64 = 0x7A;

/// Supervision for one batch, aligned with its patches.
#[derive(Debug, Clone, PartialEq)]
pub enum BatchTargets {
    /// True where the patch center is an outlier.
    Outlier(Vec<bool>),
    Denoise {
        loss: DenoiseLoss,
        alpha: f64,
        /// In patch-normalized coordinates.
        targets: Vec<LossTarget>,
    },
}

impl BatchTargets {
    pub fn len(&self) -> usize {
        match self {
            BatchTargets::Outlier(l) => l.len(),
            BatchTargets::Denoise { targets, .. } => targets.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Mean batch loss, its gradient with respect to every parameter, and the
/// batch-norm statistics the forward pass gathered.
pub fn batch_loss_grad<T: Scalar>(
    net: &Network,
    params: &[T],
    input: &Array2<T>,
    targets: &BatchTargets,
    mode: Mode,
) -> Result<(f64, Vec<T>, BatchStats<T>)> {
    let batch = targets.len();
    let (out, mut cache) = net.forward(params, input, batch, mode)?;
    let inv_b = T::lit(1.0 / batch as f64);
    let mut g = Array2::zeros(out.dim());
    let mut total = T::zero();
    match targets {
        BatchTargets::Outlier(labels) => {
            for (b, &label) in labels.iter().enumerate() {
                let (v, dz) = loss_outlier_logit_grad(out[[b, 0]], label);
                total += v;
                g[[b, 0]] = dz * inv_b;
            }
        }
        BatchTargets::Denoise {
            loss,
            alpha,
            targets,
        } => {
            for (b, t) in targets.iter().enumerate() {
                let c = [out[[b, 0]], out[[b, 1]], out[[b, 2]]];
                let (v, dc) = point_loss_grad(*loss, &c, t, *alpha)?;
                total += v;
                for a in 0..3 {
                    g[[b, a]] = dc[a] * inv_b;
                }
            }
        }
    }
    let loss = total.to_f64().expect("finite") / batch as f64;
    if !loss.is_finite() {
        return Err(Error::Numeric {
            layer: "loss".into(),
        });
    }
    let grads = net.backward(params, &cache, &g);
    let stats = std::mem::take(&mut cache.stats);
    Ok((loss, grads, stats))
}

/// Instrumentation for the target bookkeeping.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Counters {
    /// Epochs in which ground-truth patches were recomputed.
    pub gt_patch_refreshes: usize,
    /// Times the fixed nearest-neighbor targets were computed.
    pub nn_target_precomputes: usize,
    /// Samples dropped per epoch for having an empty ground-truth patch.
    pub empty_gt_dropped: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct TrainRun {
    /// Mean training loss of every completed epoch, including resumed ones.
    pub loss_curve: Vec<f64>,
    /// Chamfer measure (denoising) or F2 (outliers) on the validation set.
    pub val_curve: Vec<Option<f64>>,
    pub final_params: ModelParams,
    pub optimizer: OptimizerState,
    pub best_params: Option<ModelParams>,
    pub best_epoch: Option<usize>,
    pub counters: Counters,
    pub wall_clock_secs: f64,
    pub epoch_secs: Vec<f64>,
}

#[derive(Default)]
pub struct TrainOptions<'a> {
    pub validation: Option<&'a TrainingSet>,
    /// Where checkpoints and curves go; nothing is written without it.
    pub out_dir: Option<&'a Path>,
    /// Parameters and optimizer state to continue from.
    pub resume: Option<(ModelParams, OptimizerState)>,
}

struct Prepared {
    r: f64,
    noisy_index: SpatialIndex,
    clean_index: SpatialIndex,
    fixed_targets: Option<Vec<Point3<f64>>>,
}

fn prepare(set: &TrainingSet, tc: &TrainConfig, counters: &mut Counters) -> Result<Vec<Prepared>> {
    let loss = tc.loss.denoise();
    let cleaning = CleaningConfig {
        radius_fraction: tc.radius_fraction,
        ..CleaningConfig::default()
    };
    let mut out = Vec::with_capacity(set.shapes.len());
    for s in &set.shapes {
        match tc.head {
            TrainHead::Outlier => {
                if s.noisy.labels().is_none() {
                    return Err(Error::DataMismatch(format!(
                        "shape {} has no outlier labels",
                        s.name
                    )));
                }
            }
            TrainHead::Denoise => {
                if loss == Some(DenoiseLoss::Baseline) && s.noisy.len() != s.clean.len() {
                    return Err(Error::DataMismatch(format!(
                        "shape {}: the baseline loss needs point correspondence, got {} noisy and {} clean points",
                        s.name,
                        s.noisy.len(),
                        s.clean.len()
                    )));
                }
            }
        }
        let clean_index = SpatialIndex::build(&s.clean);
        out.push(Prepared {
            r: cleaning.radius_for(&s.noisy),
            noisy_index: SpatialIndex::build(&s.noisy),
            clean_index,
            fixed_targets: None,
        });
    }
    if loss == Some(DenoiseLoss::FixedTarget) {
        for (s, p) in set.shapes.iter().zip(&mut out) {
            p.fixed_targets = Some(fixed_targets(&s.noisy, &s.clean, &p.clean_index));
        }
        counters.nn_target_precomputes += 1;
    }
    Ok(out)
}

struct Sample {
    patch: Patch,
    label: bool,
    target: Option<LossTarget>,
}

fn target_for(
    set: &TrainingSet,
    prep: &[Prepared],
    tc: &TrainConfig,
    s: usize,
    i: usize,
) -> Result<Option<LossTarget>> {
    let shape = &set.shapes[s];
    let p = &prep[s];
    let center = shape.noisy.point(i);
    let Some(loss) = tc.loss.denoise() else {
        return Ok(None);
    };
    let rel = |q: &nalgebra::Point3<f64>| (q - center) / p.r;
    Ok(Some(match loss {
        DenoiseLoss::Baseline => LossTarget::Point(rel(shape.clean.point(i))),
        DenoiseLoss::FixedTarget => {
            LossTarget::Point(rel(&p.fixed_targets.as_ref().expect("precomputed")[i]))
        }
        DenoiseLoss::Combined | DenoiseLoss::Proximity | DenoiseLoss::Regularity => {
            let gr = tc.loss_config.gt_patch_radius.unwrap_or(p.r);
            LossTarget::Patch(
                p.clean_index
                    .radius_neighbors(center, gr)
                    .into_iter()
                    .map(|j| rel(shape.clean.point(j)))
                    .collect(),
            )
        }
    }))
}

fn epoch_samples(
    set: &TrainingSet,
    prep: &[Prepared],
    tc: &TrainConfig,
    m: usize,
    epoch: usize,
) -> Result<(Vec<Sample>, usize)> {
    let e = epoch as u64;
    let mut picks = Vec::new();
    for (s, shape) in set.shapes.iter().enumerate() {
        let n = shape.noisy.len();
        let count = tc.patches_per_shape_per_epoch.min(n);
        let mut rng = seed::rng(tc.master_seed, &[S_QUERY, e, s as u64]);
        picks.extend(sample(&mut rng, n, count).into_iter().map(|i| (s, i)));
    }
    picks.shuffle(&mut seed::rng(tc.master_seed, &[S_SHUFFLE, e]));
    let patch_seed = seed::derive(tc.master_seed, &[S_PATCH, e]);
    let made: Vec<Result<Option<Sample>>> = picks
        .par_iter()
        .map(|&(s, i)| {
            let shape = &set.shapes[s];
            let target = target_for(set, prep, tc, s, i)?;
            if let Some(LossTarget::Patch(p)) = &target {
                if p.is_empty() {
                    return Ok(None);
                }
            }
            let patch = extract_patch(
                &shape.noisy,
                &prep[s].noisy_index,
                i,
                prep[s].r,
                m,
                patch_seed,
            )?;
            let label = shape.noisy.labels().is_some_and(|l| l[i]);
            Ok(Some(Sample {
                patch,
                label,
                target,
            }))
        })
        .collect();
    let total = made.len();
    let mut samples = Vec::with_capacity(total);
    for r in made {
        if let Some(s) = r? {
            samples.push(s);
        }
    }
    let dropped = total - samples.len();
    Ok((samples, dropped))
}

fn batch_targets(tc: &TrainConfig, batch: &[Sample]) -> BatchTargets {
    match tc.loss.denoise() {
        None => BatchTargets::Outlier(batch.iter().map(|s| s.label).collect()),
        Some(loss) => BatchTargets::Denoise {
            loss,
            alpha: tc.loss_config.alpha,
            targets: batch
                .iter()
                .map(|s| s.target.clone().expect("denoise target"))
                .collect(),
        },
    }
}

/// Validation metric: chamfer measure after one inflated denoising pass
/// (lower is better), or F2 of the thresholded outlier probabilities
/// (higher is better). Averaged over shapes.
pub fn validation_metric(params: &ModelParams, set: &TrainingSet, tc: &TrainConfig) -> Result<f64> {
    let cleaning = CleaningConfig {
        radius_fraction: tc.radius_fraction,
        ..CleaningConfig::default()
    };
    let seed = seed::derive(tc.master_seed, &[S_VALID]);
    let mut acc = 0.0;
    for s in &set.shapes {
        let index = SpatialIndex::build(&s.noisy);
        let r = cleaning.radius_for(&s.noisy);
        acc += match tc.head {
            TrainHead::Denoise => {
                let field = displacement_field(&s.noisy, &index, params, r, seed)?;
                let field = inflate_with_index(&field, &s.noisy, &index, cleaning.inflation_k)?;
                scaled_chamfer(&s.noisy.displaced(&field.vectors)?, &s.clean)?
            }
            TrainHead::Outlier => {
                let truth = s.noisy.labels().ok_or_else(|| {
                    Error::DataMismatch(format!("validation shape {} has no labels", s.name))
                })?;
                let probs = outlier_probabilities(&s.noisy, &index, params, r, seed)?;
                let pred: Vec<bool> = probs
                    .iter()
                    .map(|&p| p > cleaning.outlier_threshold)
                    .collect();
                f_beta(&pred, truth, 2.0)?.0
            }
        };
    }
    Ok(acc / set.shapes.len() as f64)
}

fn better(head: TrainHead, a: f64, b: f64) -> bool {
    match head {
        TrainHead::Denoise => a < b,
        TrainHead::Outlier => a > b,
    }
}

/// Trains one head on `set`. See [`TrainOptions`] for validation, output,
/// and resumption. `epochs` in the config is the total count, so a resumed
/// run only performs the remaining ones.
pub fn train(
    set: &TrainingSet,
    model_config: &ModelConfig,
    tc: &TrainConfig,
    options: TrainOptions<'_>,
) -> Result<TrainRun> {
    tc.validate()?;
    model_config.validate()?;
    if model_config.head != tc.head.model_head() {
        return Err(Error::Config(format!(
            "model head {:?} does not match training head {:?}",
            model_config.head, tc.head
        )));
    }
    let started = Instant::now();
    let mut counters = Counters::default();
    let prep = prepare(set, tc, &mut counters)?;

    let (mut params, mut optimizer) = match options.resume {
        Some((p, state)) => {
            if &p.config != model_config {
                return Err(Error::Checkpoint(
                    "resume checkpoint has a different model config".into(),
                ));
            }
            let n = p.values.len();
            let o = Optimizer::resume(tc.optimizer.clone(), tc.learning_rate(), state, n)?;
            (p, o)
        }
        None => {
            let p = init_params(
                model_config,
                tc.init_scheme(),
                seed::derive(tc.master_seed, &[S_INIT]),
            )?;
            let n = p.values.len();
            (
                p,
                Optimizer::new(tc.optimizer.clone(), tc.learning_rate(), n),
            )
        }
    };
    let net = params.network().clone();
    let mask = params.layout().learnable_mask();
    let m = model_config.m;
    // best weights are tracked for this invocation only
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epoch_secs = Vec::new();

    if let Some(dir) = options.out_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    for epoch in params.metadata.epoch..tc.epochs {
        let t0 = Instant::now();
        let (samples, dropped) = epoch_samples(set, &prep, tc, m, epoch)?;
        if tc.loss.denoise().is_some_and(DenoiseLoss::uses_gt_patch) {
            counters.gt_patch_refreshes += 1;
        }
        counters.empty_gt_dropped.push(dropped);
        if dropped * 2 > samples.len() + dropped {
            return Err(Error::Config(format!(
                "epoch {}: {dropped} of {} samples have an empty ground-truth patch; increase gt_patch_radius",
                epoch + 1,
                samples.len() + dropped
            )));
        }
        let last_good = params.values.clone();
        let mut sum = 0.0;
        let mut count = 0usize;
        for chunk in samples.chunks(tc.batch_size) {
            if chunk.len() < 2 && tc.batch_size > 1 && samples.len() > 1 {
                // a single trailing sample gives degenerate batch statistics
                continue;
            }
            let refs: Vec<&Patch> = chunk.iter().map(|s| &s.patch).collect();
            let input = patches_to_input::<f32>(&refs, m)?;
            let targets = batch_targets(tc, chunk);
            let result = batch_loss_grad(&net, &params.values, &input, &targets, Mode::Train);
            let (loss, grads, stats) = match result {
                Ok(v) if grads_finite(&v.1) => v,
                Ok(_) | Err(Error::Numeric { .. }) => {
                    if let Some(dir) = options.out_dir {
                        let mut good = params.clone();
                        good.values = last_good;
                        save_checkpoint(&dir.join("last_good.ckpt"), &good, None)?;
                    }
                    return Err(Error::Numeric {
                        layer: format!("loss (epoch {})", epoch + 1),
                    });
                }
                Err(e) => return Err(e),
            };
            optimizer.step(&mut params.values, &grads, &mask);
            net.apply_batch_stats(&mut params.values, &stats);
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        let mean = if count > 0 { sum / count as f64 } else { 0.0 };
        params.metadata.epoch = epoch + 1;
        params.metadata.loss_curve.push(mean);

        let validate = options
            .validation
            .filter(|_| (epoch + 1) % tc.validate_every == 0 || epoch + 1 == tc.epochs);
        let val = match validate {
            Some(v) => Some(validation_metric(&params, v, tc)?),
            None => None,
        };
        params.metadata.val_curve.push(val);
        if let Some(v) = val {
            if best.as_ref().is_none_or(|(b, _, _)| better(tc.head, v, *b)) {
                best = Some((v, epoch + 1, params.clone()));
                if let Some(dir) = options.out_dir {
                    save_checkpoint(&dir.join("best.ckpt"), &params, None)?;
                }
            }
        }
        epoch_secs.push(t0.elapsed().as_secs_f64());
        info!(
            "epoch {}/{}: loss {mean:.6}{} ({:.1}s)",
            epoch + 1,
            tc.epochs,
            val.map(|v| format!(", validation {v:.6}"))
                .unwrap_or_default(),
            t0.elapsed().as_secs_f64()
        );
        if let Some(dir) = options.out_dir {
            if tc.checkpoint_every > 0 && (epoch + 1) % tc.checkpoint_every == 0 {
                let path = dir.join(format!("epoch_{:04}.ckpt", epoch + 1));
                save_checkpoint(&path, &params, Some(optimizer.state()))?;
            }
        }
    }

    if let Some(dir) = options.out_dir {
        save_checkpoint(&dir.join("last.ckpt"), &params, Some(optimizer.state()))?;
        write_curves_csv(
            &params.metadata.loss_curve,
            &params.metadata.val_curve,
            &dir.join("curves.csv"),
        )?;
    }
    Ok(TrainRun {
        loss_curve: params.metadata.loss_curve.clone(),
        val_curve: params.metadata.val_curve.clone(),
        optimizer: optimizer.state().clone(),
        best_epoch: best.as_ref().map(|b| b.1),
        best_params: best.map(|b| b.2),
        final_params: params,
        counters,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        epoch_secs,
    })
}

fn grads_finite(g: &[f32]) -> bool {
    g.iter().all(|v| v.is_finite())
}

/// Trains on every entry of a training-split manifest.
pub fn train_manifest(
    manifest: &DatasetManifest,
    model_config: &ModelConfig,
    tc: &TrainConfig,
    options: TrainOptions<'_>,
) -> Result<TrainRun> {
    if manifest.split != crate::corruption::dataset::Split::Train {
        return Err(Error::Config(
            "training needs a train-split manifest".into(),
        ));
    }
    if manifest.entries.is_empty() {
        return Err(Error::Config("manifest has no entries".into()));
    }
    let set = TrainingSet::from_manifest(manifest)?;
    train(&set, model_config, tc, options)
}

/// `epoch,train_loss,val_metric` rows; skipped validations are left empty.
pub fn write_curves_csv(loss: &[f64], val: &[Option<f64>], path: &Path) -> Result<()> {
    let mut s = String::from("epoch,train_loss,val_metric\n");
    for (i, l) in loss.iter().enumerate() {
        let v = val
            .get(i)
            .copied()
            .flatten()
            .map(|v| v.to_string())
            .unwrap_or_default();
        writeln!(s, "{},{},{}", i + 1, l, v).expect("string write");
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
