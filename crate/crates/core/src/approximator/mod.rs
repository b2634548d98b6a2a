//! Small differentiable approximators: the time-conditioned control network
//! for the diffusion sampler and the per-position categorical score network
//! for the masked discrete sampler, plus Adam and EMA bookkeeping.

mod checkpoint;
mod control;
mod mlp;
mod score;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, MAGIC};
pub use control::{forward_control, time_features, ControlNet, ControlNetSpec};
pub use mlp::{Activation, MlpCache, MlpSpec};
pub use score::{
    forward_score, forward_score_batch, logits_adjoint_from_probs, one_hot, softmax_rows, ScoreNet, ScoreNetSpec, MASK,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A flat parameter (or gradient) array with its logical shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn zeros_like(other: &Tensor) -> Self {
        Self::zeros(&other.shape)
    }
}

/// Adds `src` into `dst` elementwise.
pub fn accumulate(dst: &mut [Tensor], src: &[Tensor]) {
    for (d, s) in dst.iter_mut().zip(src) {
        for (a, b) in d.data.iter_mut().zip(&s.data) {
            *a += b;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        }
    }
}

/// Network parameters with Adam moments and an EMA shadow copy.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Tensor>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub ema: Vec<Tensor>,
    pub step_count: u64,
}

impl ParamStore {
    pub fn new(params: Vec<Tensor>) -> Self {
        let zeros: Vec<Tensor> = params.iter().map(Tensor::zeros_like).collect();
        Self {
            ema: params.clone(),
            adam_m: zeros.clone(),
            adam_v: zeros,
            params,
            step_count: 0,
        }
    }

    pub fn shapes(&self) -> Vec<Vec<usize>> {
        self.params.iter().map(|t| t.shape.clone()).collect()
    }

    fn check_grads(&self, grads: &[Tensor]) -> Result<()> {
        if grads.len() != self.params.len() || grads.iter().zip(&self.params).any(|(g, p)| g.shape != p.shape) {
            return Err(Error::Shape("gradient arrays do not match parameters".into()));
        }
        Ok(())
    }

    /// One bias-corrected Adam step. Returns `Ok(false)` and leaves the store
    /// untouched when any gradient entry is non-finite.
    pub fn adam_step(&mut self, grads: &[Tensor], cfg: &AdamConfig) -> Result<bool> {
        self.check_grads(grads)?;
        if grads.iter().any(|g| g.data.iter().any(|v| !v.is_finite())) {
            log::warn!("non-finite gradient at step {}; update skipped", self.step_count);
            return Ok(false);
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        for (((p, m), v), g) in self
            .params
            .iter_mut()
            .zip(self.adam_m.iter_mut())
            .zip(self.adam_v.iter_mut())
            .zip(grads)
        {
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = cfg.beta1 * m.data[i] + (1.0 - cfg.beta1) * gi;
                v.data[i] = cfg.beta2 * v.data[i] + (1.0 - cfg.beta2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                p.data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        Ok(true)
    }

    /// `ema <- decay * ema + (1 - decay) * params`.
    pub fn ema_update(&mut self, decay: f64) {
        for (e, p) in self.ema.iter_mut().zip(&self.params) {
            for (a, b) in e.data.iter_mut().zip(&p.data) {
                *a = decay * *a + (1.0 - decay) * b;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn scalar_store(p: f64) -> ParamStore {
        ParamStore::new(vec![Tensor::new(vec![1], vec![p])])
    }

    #[test]
    fn fresh_store_invariants() {
        let s = ParamStore::new(vec![Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0])]);
        assert_eq!(s.ema, s.params);
        assert_eq!(s.adam_m[0].shape, vec![2, 2]);
        assert!(s.adam_v[0].data.iter().all(|&v| v == 0.0));
        assert_eq!(s.step_count, 0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut s = scalar_store(0.0);
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.0,
            beta2: 0.9,
            eps: 1e-8,
        };
        assert!(s.adam_step(&[Tensor::new(vec![1], vec![1.0])], &cfg).unwrap());
        // m_hat = 1, v_hat = 0.1 / (1 - 0.9) = 1, step = lr / (1 + eps).
        assert!((s.params[0].data[0] + 0.1).abs() < 1e-8);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn adam_zero_gradient_and_zero_lr() {
        let mut s = scalar_store(0.7);
        s.adam_m[0].data[0] = 0.5;
        s.adam_v[0].data[0] = 0.2;
        let cfg = AdamConfig {
            lr: 0.1,
            beta1: 0.5,
            beta2: 0.9,
            eps: 1e-8,
        };
        s.adam_step(&[Tensor::new(vec![1], vec![0.0])], &cfg).unwrap();
        assert!((s.adam_m[0].data[0] - 0.25).abs() < 1e-15);
        assert!((s.adam_v[0].data[0] - 0.18).abs() < 1e-15);
        // with no gradient and no stored momentum the parameter is a fixed point
        let mut s = scalar_store(0.7);
        s.adam_step(&[Tensor::new(vec![1], vec![0.0])], &cfg).unwrap();
        assert_eq!(s.params[0].data[0], 0.7);

        let mut s = scalar_store(0.7);
        let cfg = AdamConfig { lr: 0.0, ..cfg };
        s.adam_step(&[Tensor::new(vec![1], vec![3.0])], &cfg).unwrap();
        assert_eq!(s.params[0].data[0], 0.7);
    }

    #[test]
    fn adam_skips_non_finite() {
        let mut s = scalar_store(1.0);
        let before = s.clone();
        let ok = s
            .adam_step(&[Tensor::new(vec![1], vec![f64::NAN])], &AdamConfig::default())
            .unwrap();
        assert!(!ok);
        assert_eq!(s, before);
        assert!(s
            .adam_step(&[Tensor::new(vec![2], vec![0.0, 0.0])], &AdamConfig::default())
            .is_err());
    }

    #[test]
    fn ema_cases() {
        let mut s = scalar_store(0.0);
        s.ema[0].data[0] = 1.0;
        s.ema_update(0.999);
        assert!((s.ema[0].data[0] - 0.999).abs() < 1e-15);
        s.ema_update(0.0);
        assert_eq!(s.ema[0].data[0], 0.0);

        let mut s = scalar_store(2.0);
        s.ema[0].data[0] = -1.0;
        let mut prev_gap = 3.0;
        for _ in 0..50 {
            s.ema_update(0.9);
            let gap = (2.0 - s.ema[0].data[0]).abs();
            assert!(gap <= 0.9 * prev_gap + 1e-12);
            prev_gap = gap;
        }
    }

    proptest! {
        #[test]
        fn ema_is_convex_combination(old in -10.0f64..10.0, p in -10.0f64..10.0, decay in 0.0f64..0.9999) {
            let mut s = scalar_store(p);
            s.ema[0].data[0] = old;
            s.ema_update(decay);
            let e = s.ema[0].data[0];
            prop_assert!(e >= old.min(p) - 1e-12 && e <= old.max(p) + 1e-12);
        }

        #[test]
        fn adam_second_moment_nonnegative(gs in proptest::collection::vec(-5.0f64..5.0, 1..20)) {
            let mut s = scalar_store(0.0);
            for g in gs {
                s.adam_step(&[Tensor::new(vec![1], vec![g])], &AdamConfig::default()).unwrap();
                prop_assert!(s.adam_v[0].data[0] >= 0.0);
            }
        }
    }
}
