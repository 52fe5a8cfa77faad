//! Full network: QSTN, per-point extractor with feature transformer, sum
//! pooling, residual regressor, and output head.

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::config::{HeadKind, ModelConfig};
use crate::model::layers::{
    sum_pool, sum_pool_backward, Ctx, Dense, Mlp, MlpCache, ResBlock, ResBlockCache, Stn, StnCache,
};
pub use crate::model::layers::{BatchStat, Mode};
use crate::model::params::ParamLayout;
use crate::model::quaternion::{quaternion_to_rotation, rotation_backward, Quaternion};
use crate::model::scalar::Scalar;

pub type BatchStats<T> = Vec<BatchStat<T>>;

type Mat3<T> = [[T; 3]; 3];

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    config: ModelConfig,
    layout: ParamLayout,
    qstn: Option<Stn>,
    extractor: Vec<ResBlock>,
    fstn: Option<(usize, Stn)>,
    regressor: Mlp,
    head: Dense,
}

struct QstnCache<T> {
    stn: StnCache<T>,
    quats: Vec<Quaternion<T>>,
    rots: Vec<Mat3<T>>,
    input: Array2<T>,
}

struct FstnCache<T> {
    stn: StnCache<T>,
    transforms: Vec<Array2<T>>,
    features: Array2<T>,
}

/// Everything the backward pass needs, plus batch-norm statistics gathered in
/// training mode.
pub struct ForwardCache<T> {
    batch: usize,
    qstn: Option<QstnCache<T>>,
    extractor: Vec<ResBlockCache<T>>,
    fstn: Option<FstnCache<T>>,
    pooled: Array2<T>,
    regressor: MlpCache<T>,
    regressor_out: Array2<T>,
    canonical_out: Array2<T>,
    pub stats: BatchStats<T>,
}

impl<T: Scalar> ForwardCache<T> {
    /// Sum-pooled per-point features, `(B, C)`.
    pub fn pooled(&self) -> &Array2<T> {
        &self.pooled
    }

    /// Which activation outputs are positive, over every rectified layer. Two
    /// parameter vectors with equal patterns lie on the same linear piece.
    pub fn activation_pattern(&self) -> Vec<bool> {
        let mut out = Vec::new();
        if let Some(q) = &self.qstn {
            q.stn.push_pattern(&mut out);
        }
        for b in &self.extractor {
            b.push_pattern(&mut out);
        }
        if let Some(f) = &self.fstn {
            f.stn.push_pattern(&mut out);
        }
        self.regressor.push_pattern(&mut out);
        out
    }

    /// Per-patch rotation applied to the input, if a QSTN is present.
    pub fn rotations(&self) -> Option<&[Mat3<T>]> {
        self.qstn.as_ref().map(|q| q.rots.as_slice())
    }
}

fn rotate_rows<T: Scalar>(x: &ArrayView2<T>, r: &Mat3<T>) -> Array2<T> {
    // rows are transformed as p -> R p, i.e. X R^T
    let rt = Array2::from_shape_fn((3, 3), |(i, j)| r[j][i]);
    x.dot(&rt)
}

impl Network {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut layout = ParamLayout::default();
        let qstn = config
            .use_qstn
            .then(|| Stn::new(&mut layout, "qstn", 3, 4, config));
        let mut extractor = Vec::new();
        let mut fstn = None;
        let mut d = 3;
        for (i, &w) in config.point_feature_widths.iter().enumerate() {
            extractor.push(ResBlock::new(
                &mut layout,
                &format!("extractor.{i}"),
                d,
                w,
                config,
            ));
            d = w;
            if config.feature_stn_after == Some(i) {
                fstn = Some((i, Stn::new(&mut layout, "fstn", d, d * d, config)));
            }
        }
        let regressor = Mlp::new(
            &mut layout,
            "regressor",
            d,
            &config.regressor_widths,
            config,
        );
        let rd = regressor.out_dim(d);
        let head = Dense::new(&mut layout, "head", rd, config.output_dim());
        Ok(Self {
            config: config.clone(),
            layout,
            qstn,
            extractor,
            fstn,
            regressor,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn layout(&self) -> &ParamLayout {
        &self.layout
    }

    /// Names of the final linear layers of the transformers, which start at
    /// zero so the initial transforms are the identity.
    pub fn transformer_output_tensors(&self) -> Vec<&str> {
        let mut v = Vec::new();
        for stn in self.qstn.iter().chain(self.fstn.iter().map(|(_, s)| s)) {
            v.push(self.layout.spec(stn.out.w).name.as_str());
            if let Some(b) = stn.out.b {
                v.push(self.layout.spec(b).name.as_str());
            }
        }
        v
    }

    /// Runs `batch` patches stacked as `(batch * m, 3)` rows. Returns the head
    /// output `(batch, output_dim)` in the input frame.
    pub fn forward<T: Scalar>(
        &self,
        params: &[T],
        input: &Array2<T>,
        batch: usize,
        mode: Mode,
    ) -> Result<(Array2<T>, ForwardCache<T>)> {
        let m = self.config.m;
        if params.len() != self.layout.len() {
            return Err(Error::Structural(format!(
                "{} parameters for a layout of {}",
                params.len(),
                self.layout.len()
            )));
        }
        if batch == 0 || input.dim() != (batch * m, 3) {
            return Err(Error::Structural(format!(
                "input of shape {:?} does not match {batch} patches of {m} rows",
                input.dim()
            )));
        }
        let mut ctx = Ctx {
            layout: &self.layout,
            params,
            mode,
            stats: Vec::new(),
        };

        let (mut h, qcache) = match &self.qstn {
            Some(stn) => {
                let (raw, stn_cache) = stn.forward(&mut ctx, input.clone(), batch, m)?;
                let mut quats = Vec::with_capacity(batch);
                let mut rots = Vec::with_capacity(batch);
                let mut rotated = Array2::zeros((batch * m, 3));
                for b in 0..batch {
                    let q = Quaternion::new(
                        raw[[b, 0]] + T::one(),
                        raw[[b, 1]],
                        raw[[b, 2]],
                        raw[[b, 3]],
                    );
                    let r = quaternion_to_rotation(&q).map_err(|_| Error::Numeric {
                        layer: "qstn.quaternion".into(),
                    })?;
                    let rows = s![b * m..(b + 1) * m, ..];
                    rotated
                        .slice_mut(rows)
                        .assign(&rotate_rows(&input.slice(rows), &r));
                    quats.push(q);
                    rots.push(r);
                }
                (
                    rotated,
                    Some(QstnCache {
                        stn: stn_cache,
                        quats,
                        rots,
                        input: input.clone(),
                    }),
                )
            }
            None => (input.clone(), None),
        };

        let mut ext_caches = Vec::with_capacity(self.extractor.len());
        let mut fcache = None;
        for (i, block) in self.extractor.iter().enumerate() {
            let (y, c) = block.forward(&mut ctx, h)?;
            ext_caches.push(c);
            h = y;
            if let Some((after, stn)) = &self.fstn {
                if *after == i {
                    let d = h.ncols();
                    let (raw, stn_cache) = stn.forward(&mut ctx, h.clone(), batch, m)?;
                    let mut transforms = Vec::with_capacity(batch);
                    let mut out = Array2::zeros(h.dim());
                    for b in 0..batch {
                        let mut a = raw
                            .row(b)
                            .to_owned()
                            .into_shape_with_order((d, d))
                            .expect("square transform");
                        for k in 0..d {
                            a[[k, k]] = a[[k, k]] + T::one();
                        }
                        let rows = s![b * m..(b + 1) * m, ..];
                        out.slice_mut(rows).assign(&h.slice(rows).dot(&a));
                        transforms.push(a);
                    }
                    fcache = Some(FstnCache {
                        stn: stn_cache,
                        transforms,
                        features: h,
                    });
                    h = out;
                }
            }
        }

        let pooled = sum_pool(&h, batch, m);
        let (reg_out, reg_cache) = self.regressor.forward(&mut ctx, pooled.clone())?;
        let canonical = self.head.forward(&ctx, &reg_out.view());
        let mut out = canonical.clone();
        if self.config.head == HeadKind::Displacement {
            if let Some(q) = &qcache {
                for b in 0..batch {
                    let r = &q.rots[b];
                    let c = canonical.row(b);
                    for j in 0..3 {
                        out[[b, j]] = c[0] * r[0][j] + c[1] * r[1][j] + c[2] * r[2][j];
                    }
                }
            }
        }
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::Numeric {
                layer: "head".into(),
            });
        }
        Ok((
            out,
            ForwardCache {
                batch,
                qstn: qcache,
                extractor: ext_caches,
                fstn: fcache,
                pooled,
                regressor: reg_cache,
                regressor_out: reg_out,
                canonical_out: canonical,
                stats: ctx.stats,
            },
        ))
    }

    /// Gradient of `sum(grad_out * output)` with respect to every parameter.
    /// Entries for running statistics stay zero.
    pub fn backward<T: Scalar>(
        &self,
        params: &[T],
        cache: &ForwardCache<T>,
        grad_out: &Array2<T>,
    ) -> Vec<T> {
        let m = self.config.m;
        let batch = cache.batch;
        let layout = &self.layout;
        let mut grads = vec![T::zero(); layout.len()];

        // Back-rotation of displacements: out = c R (row vector).
        let mut rot_grads: Vec<Mat3<T>> = vec![[[T::zero(); 3]; 3]; batch];
        let mut g_canon = grad_out.clone();
        if self.config.head == HeadKind::Displacement {
            if let Some(q) = &cache.qstn {
                for b in 0..batch {
                    let r = &q.rots[b];
                    let g = grad_out.row(b);
                    let c = cache.canonical_out.row(b);
                    for i in 0..3 {
                        g_canon[[b, i]] = g[0] * r[i][0] + g[1] * r[i][1] + g[2] * r[i][2];
                        for j in 0..3 {
                            rot_grads[b][i][j] = rot_grads[b][i][j] + c[i] * g[j];
                        }
                    }
                }
            }
        }

        let g_reg = self
            .head
            .backward(
                layout,
                params,
                &mut grads,
                &cache.regressor_out.view(),
                &g_canon.view(),
                true,
            )
            .expect("dx requested");
        let g_pooled = self
            .regressor
            .backward(layout, params, &mut grads, &cache.regressor, g_reg, true)
            .expect("dx requested");
        let mut g = sum_pool_backward(&g_pooled, m);

        let need_input_grad = cache.qstn.is_some();
        for (i, block) in self.extractor.iter().enumerate().rev() {
            if let (Some((after, stn)), Some(fc)) = (&self.fstn, &cache.fstn) {
                if *after == i {
                    let d = fc.features.ncols();
                    let mut g_feat = Array2::zeros(fc.features.dim());
                    let mut g_raw = Array2::zeros((batch, d * d));
                    for b in 0..batch {
                        let rows = s![b * m..(b + 1) * m, ..];
                        let a = &fc.transforms[b];
                        g_feat.slice_mut(rows).assign(&g.slice(rows).dot(&a.t()));
                        let ga = fc.features.slice(rows).t().dot(&g.slice(rows));
                        g_raw
                            .row_mut(b)
                            .assign(&ga.into_shape_with_order(d * d).expect("flatten"));
                    }
                    let g_stn_in = stn
                        .backward(layout, params, &mut grads, &fc.stn, g_raw, m, true)
                        .expect("dx requested");
                    g = g_feat + &g_stn_in;
                }
            }
            let need = i > 0 || need_input_grad;
            match block.backward(layout, params, &mut grads, &cache.extractor[i], g, need) {
                Some(d) => g = d,
                None => {
                    g = Array2::zeros((0, 0));
                }
            }
        }

        if let (Some(stn), Some(q)) = (&self.qstn, &cache.qstn) {
            // rotated = X R^T  =>  dR = G^T X
            let mut g_q = Array2::zeros((batch, 4));
            for b in 0..batch {
                let rows = s![b * m..(b + 1) * m, ..];
                let dr = g.slice(rows).t().dot(&q.input.slice(rows));
                let mut total = rot_grads[b];
                for i in 0..3 {
                    for j in 0..3 {
                        total[i][j] = total[i][j] + dr[[i, j]];
                    }
                }
                let dq = rotation_backward(&q.quats[b], &total);
                for k in 0..4 {
                    g_q[[b, k]] = dq[k];
                }
            }
            stn.backward(layout, params, &mut grads, &q.stn, g_q, m, false);
        }
        grads
    }

    /// Folds batch statistics into the running mean/variance buffers.
    pub fn apply_batch_stats<T: Scalar>(&self, params: &mut [T], stats: &[BatchStat<T>]) {
        let mom = T::lit(self.config.bn_momentum);
        let keep = T::one() - mom;
        for s in stats {
            {
                let mut rm = self.layout.vec_mut(params, s.running_mean);
                rm.zip_mut_with(&s.mean, |r, &b| *r = *r * keep + b * mom);
            }
            let mut rv = self.layout.vec_mut(params, s.running_var);
            rv.zip_mut_with(&s.var, |r, &b| *r = *r * keep + b * mom);
        }
    }
}
