use crate::error::{Error, Result};
use crate::model::checkpoint::OptimizerState;
use crate::training::config::{OptimizerConfig, OptimizerKind};

/// First-order optimizer over the flat parameter vector. Entries outside
/// `mask` (running statistics) are never touched.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    state: OptimizerState,
}

fn kind_name(k: OptimizerKind) -> &'static str {
    match k {
        OptimizerKind::Sgd => "sgd",
        OptimizerKind::Adam => "adam",
    }
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64, n: usize) -> Self {
        let slots = match config.kind {
            OptimizerKind::Sgd => vec![vec![0.0; n]],
            OptimizerKind::Adam => vec![vec![0.0; n], vec![0.0; n]],
        };
        Self {
            state: OptimizerState {
                kind: kind_name(config.kind).into(),
                step: 0,
                slots,
            },
            config,
            lr,
        }
    }

    /// Continues from a saved state, which must match the configured kind.
    pub fn resume(
        config: OptimizerConfig,
        lr: f64,
        state: OptimizerState,
        n: usize,
    ) -> Result<Self> {
        let fresh = Self::new(config, lr, n);
        if state.kind != fresh.state.kind
            || state.slots.len() != fresh.state.slots.len()
            || state.slots.iter().any(|s| s.len() != n)
        {
            return Err(Error::Checkpoint(format!(
                "optimizer state ({}, {} slots) does not fit a {} optimizer over {n} values",
                state.kind,
                state.slots.len(),
                fresh.state.kind
            )));
        }
        Ok(Self { state, ..fresh })
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], mask: &[bool]) {
        let mut scale = 1.0f64;
        if let Some(c) = self.config.clip_norm {
            let norm = grads
                .iter()
                .map(|&g| (g as f64) * (g as f64))
                .sum::<f64>()
                .sqrt();
            if norm > c {
                scale = c / norm;
            }
        }
        self.state.step += 1;
        let lr = self.lr;
        match self.config.kind {
            OptimizerKind::Sgd => {
                let mu = self.config.momentum as f32;
                let v = &mut self.state.slots[0];
                for i in 0..params.len() {
                    if !mask[i] {
                        continue;
                    }
                    let g = (grads[i] as f64 * scale) as f32;
                    v[i] = mu * v[i] + g;
                    params[i] -= (lr as f32) * v[i];
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.config.beta1, self.config.beta2);
                let t = self.state.step as i32;
                let c1 = 1.0 - b1.powi(t);
                let c2 = 1.0 - b2.powi(t);
                let step = (lr * c2.sqrt() / c1) as f32;
                let eps = (self.config.eps * c2.sqrt()) as f32;
                let (b1, b2) = (b1 as f32, b2 as f32);
                let (ms, vs) = self.state.slots.split_at_mut(1);
                let (m, v) = (&mut ms[0], &mut vs[0]);
                for i in 0..params.len() {
                    if !mask[i] {
                        continue;
                    }
                    let g = (grads[i] as f64 * scale) as f32;
                    m[i] = b1 * m[i] + (1.0 - b1) * g;
                    v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                    params[i] -= step * m[i] / (v[i].sqrt() + eps);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_momentum_update() {
        let mut o = Optimizer::new(OptimizerConfig::default(), 0.1, 2);
        let mut p = [1.0f32, 1.0];
        o.step(&mut p, &[1.0, 1.0], &[true, false]);
        assert_eq!(p, [0.9, 1.0]);
        o.step(&mut p, &[1.0, 1.0], &[true, false]);
        // v = 0.9 * 1 + 1 = 1.9
        assert!((p[0] - (0.9 - 0.19)).abs() < 1e-6);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let cfg = OptimizerConfig {
            kind: OptimizerKind::Adam,
            ..OptimizerConfig::default()
        };
        let mut o = Optimizer::new(cfg.clone(), 0.01, 1);
        let mut p = [0.0f32];
        o.step(&mut p, &[123.0], &[true]);
        assert!((p[0] + 0.01).abs() < 1e-6);
        let st = o.state().clone();
        assert!(Optimizer::resume(OptimizerConfig::default(), 0.01, st.clone(), 1).is_err());
        assert!(Optimizer::resume(cfg, 0.01, st, 1).is_ok());
    }
}
