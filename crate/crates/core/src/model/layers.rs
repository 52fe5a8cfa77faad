//! Building blocks with explicit forward and backward passes.
//!
//! Activations are row-major matrices: one row per point (per-point layers)
//! or per patch (regressor layers). Every forward returns a cache consumed by
//! the matching backward, which accumulates parameter gradients into a flat
//! gradient vector sharing the parameter layout.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};

use crate::error::{Error, Result};
use crate::model::config::{Activation, ModelConfig, Normalization};
use crate::model::params::{ParamLayout, TensorId, TensorRole};
use crate::model::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in normalization layers.
    Train,
    /// Running statistics; rows are processed independently.
    Eval,
}

/// Batch mean and (unbiased) variance observed by one normalization layer.
#[derive(Debug, Clone)]
pub struct BatchStat<T> {
    pub(crate) running_mean: TensorId,
    pub(crate) running_var: TensorId,
    pub mean: Array1<T>,
    pub var: Array1<T>,
}

pub(crate) struct Ctx<'a, T> {
    pub layout: &'a ParamLayout,
    pub params: &'a [T],
    pub mode: Mode,
    pub stats: Vec<BatchStat<T>>,
}

fn check_finite<T: Scalar>(a: &Array2<T>, layer: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            layer: layer.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub(crate) w: TensorId,
    pub(crate) b: Option<TensorId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Dense {
    pub(crate) fn new(layout: &mut ParamLayout, name: &str, in_dim: usize, out_dim: usize) -> Self {
        Self::with_bias(layout, name, in_dim, out_dim, true)
    }

    /// A layer feeding batch normalization has no bias: the normalization
    /// removes it and its shift takes its place.
    pub(crate) fn with_bias(
        layout: &mut ParamLayout,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
    ) -> Self {
        let w = layout.add(
            format!("{name}.weight"),
            vec![in_dim, out_dim],
            TensorRole::Weight,
        );
        let b = bias.then(|| layout.add(format!("{name}.bias"), vec![out_dim], TensorRole::Bias));
        Self {
            w,
            b,
            in_dim,
            out_dim,
        }
    }

    pub(crate) fn forward<T: Scalar>(&self, ctx: &Ctx<T>, x: &ArrayView2<T>) -> Array2<T> {
        let w = ctx.layout.mat(ctx.params, self.w);
        let mut y = x.dot(&w);
        if let Some(b) = self.b {
            y += &ctx.layout.vec(ctx.params, b);
        }
        y
    }

    /// Accumulates `dW`, `db` and returns `dx`.
    pub(crate) fn backward<T: Scalar>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        x: &ArrayView2<T>,
        gy: &ArrayView2<T>,
        need_dx: bool,
    ) -> Option<Array2<T>> {
        {
            let mut gw = layout.mat_mut(grads, self.w);
            general_mat_mul(T::one(), &x.t(), gy, T::one(), &mut gw);
        }
        if let Some(b) = self.b {
            let mut gb = layout.vec_mut(grads, b);
            gb += &gy.sum_axis(Axis(0));
        }
        need_dx.then(|| gy.dot(&layout.mat(params, self.w).t()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Norm {
    gamma: TensorId,
    beta: TensorId,
    running_mean: TensorId,
    running_var: TensorId,
    eps: f64,
}

pub(crate) struct NormCache<T> {
    xhat: Array2<T>,
    inv_std: Array1<T>,
    mode: Mode,
}

impl Norm {
    fn new(layout: &mut ParamLayout, name: &str, dim: usize, eps: f64) -> Self {
        Self {
            gamma: layout.add(format!("{name}.bn.scale"), vec![dim], TensorRole::Scale),
            beta: layout.add(format!("{name}.bn.shift"), vec![dim], TensorRole::Shift),
            running_mean: layout.add(
                format!("{name}.bn.running_mean"),
                vec![dim],
                TensorRole::RunningMean,
            ),
            running_var: layout.add(
                format!("{name}.bn.running_var"),
                vec![dim],
                TensorRole::RunningVar,
            ),
            eps,
        }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Array2<T>) -> (Array2<T>, NormCache<T>) {
        let eps = T::lit(self.eps);
        let (mean, var) = match ctx.mode {
            Mode::Train => {
                let n = T::from_usize(x.nrows()).expect("row count");
                let mean = x.sum_axis(Axis(0)) / n;
                let mut var = Array1::<T>::zeros(x.ncols());
                for row in x.rows() {
                    Zip::from(&mut var)
                        .and(&row)
                        .and(&mean)
                        .for_each(|v, &xv, &m| {
                            let d = xv - m;
                            *v = *v + d * d;
                        });
                }
                let biased = var.mapv(|v| v / n);
                let unbiased = if x.nrows() > 1 {
                    var.mapv(|v| v / (n - T::one()))
                } else {
                    biased.clone()
                };
                ctx.stats.push(BatchStat {
                    running_mean: self.running_mean,
                    running_var: self.running_var,
                    mean: mean.clone(),
                    var: unbiased,
                });
                (mean, biased)
            }
            Mode::Eval => (
                ctx.layout.vec(ctx.params, self.running_mean).to_owned(),
                ctx.layout.vec(ctx.params, self.running_var).to_owned(),
            ),
        };
        let inv_std = var.mapv(|v| (v + eps).sqrt().recip());
        let mut xhat = x;
        xhat -= &mean;
        xhat *= &inv_std;
        let gamma = ctx.layout.vec(ctx.params, self.gamma);
        let beta = ctx.layout.vec(ctx.params, self.beta);
        let mut y = &xhat * &gamma;
        y += &beta;
        (
            y,
            NormCache {
                xhat,
                inv_std,
                mode: ctx.mode,
            },
        )
    }

    fn backward<T: Scalar>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        cache: &NormCache<T>,
        gy: Array2<T>,
    ) -> Array2<T> {
        {
            let mut gg = layout.vec_mut(grads, self.gamma);
            gg += &(&gy * &cache.xhat).sum_axis(Axis(0));
        }
        {
            let mut gb = layout.vec_mut(grads, self.beta);
            gb += &gy.sum_axis(Axis(0));
        }
        let gamma = layout.vec(params, self.gamma);
        let mut dxhat = gy;
        dxhat *= &gamma;
        match cache.mode {
            Mode::Eval => {
                dxhat *= &cache.inv_std;
                dxhat
            }
            Mode::Train => {
                let n = T::from_usize(dxhat.nrows()).expect("row count");
                let sum_d = dxhat.sum_axis(Axis(0));
                let sum_dx = (&dxhat * &cache.xhat).sum_axis(Axis(0));
                // dx = inv_std / n * (n * dxhat - sum(dxhat) - xhat * sum(dxhat * xhat))
                let mut dx = dxhat * n;
                dx -= &sum_d;
                dx -= &(&cache.xhat * &sum_dx);
                dx *= &cache.inv_std.mapv(|s| s / n);
                dx
            }
        }
    }
}

/// Linear map optionally followed by batch normalization (pre-activation).
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub dense: Dense,
    norm: Option<Norm>,
}

pub(crate) struct UnitCache<T> {
    input: Array2<T>,
    norm: Option<NormCache<T>>,
}

impl Unit {
    fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        config: &ModelConfig,
    ) -> Self {
        let batch_norm = config.normalization == Normalization::Batch;
        let dense = Dense::with_bias(layout, name, in_dim, out_dim, !batch_norm);
        let norm = batch_norm.then(|| Norm::new(layout, name, out_dim, config.bn_eps));
        Self { dense, norm }
    }

    fn forward<T: Scalar>(&self, ctx: &mut Ctx<T>, x: Array2<T>) -> (Array2<T>, UnitCache<T>) {
        let z = self.dense.forward(ctx, &x.view());
        let (z, norm) = match &self.norm {
            Some(n) => {
                let (y, c) = n.forward(ctx, z);
                (y, Some(c))
            }
            None => (z, None),
        };
        (z, UnitCache { input: x, norm })
    }

    fn backward<T: Scalar>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        cache: &UnitCache<T>,
        gz: Array2<T>,
        need_dx: bool,
    ) -> Option<Array2<T>> {
        let gz = match (&self.norm, &cache.norm) {
            (Some(n), Some(c)) => n.backward(layout, params, grads, c, gz),
            _ => gz,
        };
        self.dense.backward(
            layout,
            params,
            grads,
            &cache.input.view(),
            &gz.view(),
            need_dx,
        )
    }
}

fn activate<T: Scalar>(act: Activation, z: &mut Array2<T>) {
    match act {
        Activation::Relu => z.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() }),
        Activation::LeakyRelu => {
            let s = T::lit(0.01);
            z.mapv_inplace(|v| if v > T::zero() { v } else { v * s })
        }
    }
}

/// Multiplies `g` by the activation derivative, read off the activation output.
fn activate_backward<T: Scalar>(act: Activation, out: &Array2<T>, g: &mut Array2<T>) {
    let slope = match act {
        Activation::Relu => T::zero(),
        Activation::LeakyRelu => T::lit(0.01),
    };
    Zip::from(g).and(out).for_each(|g, &y| {
        if !(y > T::zero()) {
            *g = *g * slope;
        }
    });
}

/// Two-layer (by default) residual block:
/// `y = act(u2(act(u1(x))) + shortcut(x))`, where the shortcut is the identity
/// when widths match and a normalized linear projection otherwise. With a
/// depth of 1 the block degenerates to a plain `act(u1(x))` layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ResBlock {
    name: String,
    units: Vec<Unit>,
    shortcut: Option<Unit>,
    residual: bool,
    act: Activation,
    pub out_dim: usize,
}

pub(crate) struct ResBlockCache<T> {
    units: Vec<UnitCache<T>>,
    hidden: Vec<Array2<T>>,
    shortcut: Option<UnitCache<T>>,
    output: Array2<T>,
}

impl ResBlock {
    pub(crate) fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        config: &ModelConfig,
    ) -> Self {
        let depth = config.residual_block_depth;
        let residual = depth >= 2;
        let mut units = Vec::with_capacity(depth);
        for k in 0..depth {
            let i = if k == 0 { in_dim } else { out_dim };
            units.push(Unit::new(
                layout,
                &format!("{name}.l{k}"),
                i,
                out_dim,
                config,
            ));
        }
        let shortcut = (residual && in_dim != out_dim)
            .then(|| Unit::new(layout, &format!("{name}.shortcut"), in_dim, out_dim, config));
        Self {
            name: name.to_string(),
            units,
            shortcut,
            residual,
            act: config.activation,
            out_dim,
        }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<T>,
        x: Array2<T>,
    ) -> Result<(Array2<T>, ResBlockCache<T>)> {
        let mut caches = Vec::with_capacity(self.units.len());
        let mut hidden = Vec::with_capacity(self.units.len().saturating_sub(1));
        let skip_input = self.residual.then(|| x.clone());
        let mut h = x;
        let last = self.units.len() - 1;
        for (k, unit) in self.units.iter().enumerate() {
            let (mut z, c) = unit.forward(ctx, h);
            caches.push(c);
            if k < last {
                activate(self.act, &mut z);
                hidden.push(z.clone());
            }
            h = z;
        }
        let mut shortcut_cache = None;
        if let Some(x) = skip_input {
            match &self.shortcut {
                Some(s) => {
                    let (sz, c) = s.forward(ctx, x);
                    h += &sz;
                    shortcut_cache = Some(c);
                }
                None => h += &x,
            }
        }
        activate(self.act, &mut h);
        check_finite(&h, &self.name)?;
        Ok((
            h.clone(),
            ResBlockCache {
                units: caches,
                hidden,
                shortcut: shortcut_cache,
                output: h,
            },
        ))
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        cache: &ResBlockCache<T>,
        mut gy: Array2<T>,
        need_dx: bool,
    ) -> Option<Array2<T>> {
        activate_backward(self.act, &cache.output, &mut gy);
        let skip_grad = self.residual.then(|| gy.clone());
        let mut g = gy;
        let n = self.units.len();
        for k in (0..n).rev() {
            let need = k > 0 || need_dx;
            match self.units[k].backward(layout, params, grads, &cache.units[k], g, need) {
                Some(mut d) => {
                    if k > 0 {
                        activate_backward(self.act, &cache.hidden[k - 1], &mut d);
                    }
                    g = d;
                }
                None => {
                    // only reached for k == 0 without need_dx
                    g = Array2::zeros((0, 0));
                }
            }
        }
        let skip_dx = match (skip_grad, &self.shortcut, &cache.shortcut) {
            (Some(gs), Some(s), Some(c)) => s.backward(layout, params, grads, c, gs, need_dx),
            (Some(gs), None, _) => need_dx.then_some(gs),
            _ => None,
        };
        if !need_dx {
            return None;
        }
        Some(match skip_dx {
            Some(s) => g + &s,
            None => g,
        })
    }
}

impl<T: Scalar> ResBlockCache<T> {
    pub(crate) fn push_pattern(&self, out: &mut Vec<bool>) {
        for a in self.hidden.iter().chain(std::iter::once(&self.output)) {
            out.extend(a.iter().map(|&v| v > T::zero()));
        }
    }
}

impl<T: Scalar> MlpCache<T> {
    pub(crate) fn push_pattern(&self, out: &mut Vec<bool>) {
        for b in &self.blocks {
            b.push_pattern(out);
        }
    }
}

impl<T: Scalar> StnCache<T> {
    pub(crate) fn push_pattern(&self, out: &mut Vec<bool>) {
        self.point.push_pattern(out);
        self.fc.push_pattern(out);
    }
}

/// A stack of residual blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub blocks: Vec<ResBlock>,
}

pub(crate) struct MlpCache<T> {
    blocks: Vec<ResBlockCache<T>>,
}

impl Mlp {
    pub(crate) fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_dim: usize,
        widths: &[usize],
        config: &ModelConfig,
    ) -> Self {
        let mut blocks = Vec::with_capacity(widths.len());
        let mut d = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            blocks.push(ResBlock::new(layout, &format!("{name}.{i}"), d, w, config));
            d = w;
        }
        Self { blocks }
    }

    pub fn out_dim(&self, in_dim: usize) -> usize {
        self.blocks.last().map_or(in_dim, |b| b.out_dim)
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<T>,
        x: Array2<T>,
    ) -> Result<(Array2<T>, MlpCache<T>)> {
        let mut caches = Vec::with_capacity(self.blocks.len());
        let mut h = x;
        for b in &self.blocks {
            let (y, c) = b.forward(ctx, h)?;
            caches.push(c);
            h = y;
        }
        Ok((h, MlpCache { blocks: caches }))
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        cache: &MlpCache<T>,
        gy: Array2<T>,
        need_dx: bool,
    ) -> Option<Array2<T>> {
        let mut g = Some(gy);
        for (i, b) in self.blocks.iter().enumerate().rev() {
            let need = i > 0 || need_dx;
            g = b.backward(
                layout,
                params,
                grads,
                &cache.blocks[i],
                g.expect("gradient"),
                need,
            );
        }
        g
    }
}

/// Sums rows in consecutive groups of `m`: `(B*m, C) -> (B, C)`.
pub(crate) fn sum_pool<T: Scalar>(x: &Array2<T>, batch: usize, m: usize) -> Array2<T> {
    let c = x.ncols();
    let view = x
        .view()
        .into_shape_with_order((batch, m, c))
        .expect("pool shape");
    view.sum_axis(Axis(1))
}

pub(crate) fn sum_pool_backward<T: Scalar>(g: &Array2<T>, m: usize) -> Array2<T> {
    let (b, c) = g.dim();
    let mut out = Array2::zeros((b * m, c));
    for (p, grow) in g.rows().into_iter().enumerate() {
        for mut row in out
            .slice_mut(ndarray::s![p * m..(p + 1) * m, ..])
            .rows_mut()
        {
            row.assign(&grow);
        }
    }
    out
}

/// Spatial transformer: per-point MLP, sum pooling, MLP, linear output of width `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Stn {
    pub(crate) point: Mlp,
    pub(crate) fc: Mlp,
    pub(crate) out: Dense,
    pub k: usize,
}

pub(crate) struct StnCache<T> {
    point: MlpCache<T>,
    fc: MlpCache<T>,
    fc_out: Array2<T>,
}

impl Stn {
    pub(crate) fn new(
        layout: &mut ParamLayout,
        name: &str,
        in_dim: usize,
        k: usize,
        config: &ModelConfig,
    ) -> Self {
        let point = Mlp::new(
            layout,
            &format!("{name}.point"),
            in_dim,
            &config.stn_point_widths,
            config,
        );
        let pd = point.out_dim(in_dim);
        let fc = Mlp::new(
            layout,
            &format!("{name}.fc"),
            pd,
            &config.stn_regressor_widths,
            config,
        );
        let fd = fc.out_dim(pd);
        let out = Dense::new(layout, &format!("{name}.out"), fd, k);
        Self { point, fc, out, k }
    }

    pub(crate) fn forward<T: Scalar>(
        &self,
        ctx: &mut Ctx<T>,
        x: Array2<T>,
        batch: usize,
        m: usize,
    ) -> Result<(Array2<T>, StnCache<T>)> {
        let (h, point) = self.point.forward(ctx, x)?;
        let pooled = sum_pool(&h, batch, m);
        let (f, fc) = self.fc.forward(ctx, pooled)?;
        let out = self.out.forward(ctx, &f.view());
        Ok((
            out,
            StnCache {
                point,
                fc,
                fc_out: f,
            },
        ))
    }

    pub(crate) fn backward<T: Scalar>(
        &self,
        layout: &ParamLayout,
        params: &[T],
        grads: &mut [T],
        cache: &StnCache<T>,
        gout: Array2<T>,
        m: usize,
        need_dx: bool,
    ) -> Option<Array2<T>> {
        let gf = self
            .out
            .backward(
                layout,
                params,
                grads,
                &cache.fc_out.view(),
                &gout.view(),
                true,
            )
            .expect("dx requested");
        let gp = self
            .fc
            .backward(layout, params, grads, &cache.fc, gf, true)
            .expect("dx requested");
        let gh = sum_pool_backward(&gp, m);
        self.point
            .backward(layout, params, grads, &cache.point, gh, need_dx)
    }
}
