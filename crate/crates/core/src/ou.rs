//! The Ornstein-Uhlenbeck reference `dX = -(alpha_t/2) X dt + sigma_bar sqrt(alpha_t) dW`
//! started from its stationary law `N(0, sigma_bar^2 I)`, with a linear
//! schedule `alpha_t`. Closed forms for the schedule integral, bridge, and
//! conditional score; the terminal reward; and the annealed warm-start drift.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::targets::ContinuousTarget;

fn default_horizon() -> f64 {
    1.0
}

fn default_gate() -> f64 {
    0.1
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OuSchedule {
    pub sigma_bar: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// Euler steps per trajectory.
    pub steps: usize,
    /// Upper bound on `B(T)`, the residual correlation between `X_0` and `X_T`.
    #[serde(default = "default_gate")]
    pub memory_gate: f64,
}

impl OuSchedule {
    pub fn new(sigma_bar: f64, alpha_min: f64, alpha_max: f64, steps: usize) -> Result<Self> {
        let s = Self {
            sigma_bar,
            alpha_min,
            alpha_max,
            horizon: 1.0,
            steps,
            memory_gate: default_gate(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.sigma_bar > 0.0 && self.sigma_bar.is_finite()) {
            return bad(format!("sigma_bar must be positive, got {}", self.sigma_bar));
        }
        if !(self.alpha_min > 0.0 && self.alpha_min <= self.alpha_max && self.alpha_max.is_finite()) {
            return bad(format!(
                "need 0 < alpha_min <= alpha_max, got ({}, {})",
                self.alpha_min, self.alpha_max
            ));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return bad("horizon must be positive".into());
        }
        if self.steps < 2 {
            return bad(format!("need at least 2 steps, got {}", self.steps));
        }
        let bt = self.b(self.horizon);
        if !(bt < self.memory_gate) {
            return bad(format!(
                "reference is not memoryless enough: B(T) = {bt:.4} >= gate {}",
                self.memory_gate
            ));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.steps as f64
    }

    pub fn alpha(&self, t: f64) -> f64 {
        let s = t / self.horizon;
        (1.0 - s) * self.alpha_min + s * self.alpha_max
    }

    /// Diffusion coefficient `sigma_bar sqrt(alpha_t)`.
    pub fn sigma(&self, t: f64) -> f64 {
        self.sigma_bar * self.alpha(t).sqrt()
    }

    fn check_t(&self, t: f64) -> Result<()> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::Domain(format!("time {t} outside [0, {}]", self.horizon)));
        }
        Ok(())
    }

    /// `A(t) = int_0^t alpha_s ds`.
    pub fn integral(&self, t: f64) -> f64 {
        self.alpha_min * t + (self.alpha_max - self.alpha_min) * t * t / (2.0 * self.horizon)
    }

    /// `B(t) = exp(-A(t)/2)`.
    pub fn b(&self, t: f64) -> f64 {
        (-0.5 * self.integral(t)).exp()
    }

    /// `C(t) = exp(-(A(T) - A(t))/2)`.
    pub fn c(&self, t: f64) -> f64 {
        (-0.5 * (self.integral(self.horizon) - self.integral(t))).exp()
    }

    /// `(A(t), B(t), C(t))` with range checking.
    pub fn schedule_integral(&self, t: f64) -> Result<(f64, f64, f64)> {
        self.check_t(t)?;
        Ok((self.integral(t), self.b(t), self.c(t)))
    }

    /// Mean coefficients on `(x0, xT)` and the per-coordinate variance of the
    /// reference bridge at time `t`.
    pub fn bridge_moments(&self, t: f64) -> Result<(f64, f64, f64)> {
        self.check_t(t)?;
        let (bt, ct, b_end) = (self.b(t), self.c(t), self.b(self.horizon));
        let denom = 1.0 - b_end * b_end;
        if denom < 1e-12 {
            return Err(Error::Domain("degenerate bridge: 1 - B(T)^2 is below 1e-12".into()));
        }
        let w0 = bt * (1.0 - ct * ct) / denom;
        let w1 = ct * (1.0 - bt * bt) / denom;
        let var = self.sigma_bar * self.sigma_bar * (1.0 - bt * bt) * (1.0 - ct * ct) / denom;
        Ok((w0, w1, var.max(0.0)))
    }

    /// Exact draw from the reference bridge pinned at `x0` and `xT`, written
    /// into `out`. The endpoints are returned exactly.
    pub fn bridge_sample<R: Rng + ?Sized>(
        &self,
        x0: &[f64],
        xt: &[f64],
        t: f64,
        rng: &mut R,
        out: &mut [f64],
    ) -> Result<()> {
        if x0.len() != xt.len() || out.len() != x0.len() {
            return Err(Error::Shape("bridge endpoints and output differ in length".into()));
        }
        if t == 0.0 {
            out.copy_from_slice(x0);
            return Ok(());
        }
        if t == self.horizon {
            out.copy_from_slice(xt);
            return Ok(());
        }
        let (w0, w1, var) = self.bridge_moments(t)?;
        let sd = var.sqrt();
        for ((o, &a), &b) in out.iter_mut().zip(x0).zip(xt) {
            let z: f64 = rng.sample(StandardNormal);
            *o = w0 * a + w1 * b + sd * z;
        }
        Ok(())
    }

    /// `grad_{x_t} log p_ref(x_T | x_t) = -C (C x_t - x_T) / (sigma_bar^2 (1 - C^2))`.
    pub fn cond_score(&self, x_t: &[f64], x_end: &[f64], t: f64, out: &mut [f64]) -> Result<()> {
        self.check_t(t)?;
        if t >= self.horizon {
            return Err(Error::Domain("conditional score is singular at t = T".into()));
        }
        let c = self.c(t);
        let denom = self.sigma_bar * self.sigma_bar * (1.0 - c * c);
        for ((o, &a), &b) in out.iter_mut().zip(x_t).zip(x_end) {
            *o = -c * (c * a - b) / denom;
        }
        Ok(())
    }

    /// Drift of the annealed warm-start dynamics,
    /// `-(alpha_t/2) [(1 - t/T) x + (t/T) sigma_bar^2 beta clip(grad V(x))]`.
    /// At `t = 0` this is the reference drift.
    pub fn annealed_drift(&self, target: &ContinuousTarget, t: f64, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.check_t(t)?;
        let s = t / self.horizon;
        let half_alpha = 0.5 * self.alpha(t);
        if s == 0.0 || target.beta == 0.0 {
            for (o, &xi) in out.iter_mut().zip(x) {
                *o = -half_alpha * (1.0 - s) * xi;
            }
            return Ok(());
        }
        let g = target.potential_grad(x)?;
        let k = self.sigma_bar * self.sigma_bar * target.beta;
        for ((o, &xi), gi) in out.iter_mut().zip(x).zip(g) {
            *o = -half_alpha * ((1.0 - s) * xi + s * k * gi);
        }
        Ok(())
    }
}

/// Terminal reward `r = -beta V - log nu` for a continuous target, where `nu`
/// is the reference marginal `N(0, sigma_bar^2 I)`.
#[derive(Clone, Debug)]
pub struct GaussianReward<'a> {
    pub target: &'a ContinuousTarget,
    pub sigma_bar: f64,
    pub include_constants: bool,
}

impl<'a> GaussianReward<'a> {
    pub fn new(target: &'a ContinuousTarget, sigma_bar: f64) -> Self {
        Self {
            target,
            sigma_bar,
            include_constants: true,
        }
    }

    /// `-log nu(x)`.
    pub fn neg_log_nu(&self, x: &[f64]) -> f64 {
        let s2 = self.sigma_bar * self.sigma_bar;
        let quad = x.iter().map(|v| v * v).sum::<f64>() / (2.0 * s2);
        if self.include_constants {
            quad + 0.5 * x.len() as f64 * (2.0 * std::f64::consts::PI * s2).ln()
        } else {
            quad
        }
    }

    pub fn reward(&self, x: &[f64]) -> Result<f64> {
        Ok(self.target.log_target(x)? + self.neg_log_nu(x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::targets::ContinuousKind;

    fn sched() -> OuSchedule {
        OuSchedule::new(1.5, 0.1, 10.0, 100).unwrap()
    }

    #[test]
    fn schedule_integral_values() {
        let s = OuSchedule::new(1.0, 0.1, 10.0, 100).unwrap();
        let (a, b, c) = s.schedule_integral(1.0).unwrap();
        assert!((a - 5.05).abs() < 1e-12);
        assert!((b - (-2.525f64).exp()).abs() < 1e-15);
        assert!((b - 0.0799).abs() < 5e-4);
        assert_eq!(c, 1.0);
        let (a0, b0, c0) = s.schedule_integral(0.0).unwrap();
        assert_eq!((a0, b0), (0.0, 1.0));
        assert!((c0 - b).abs() < 1e-15);
        assert!(s.schedule_integral(1.1).is_err());
        assert!(s.schedule_integral(-0.1).is_err());
    }

    #[test]
    fn constant_schedule_is_exponential() {
        let s = OuSchedule {
            sigma_bar: 1.0,
            alpha_min: 3.0,
            alpha_max: 3.0,
            horizon: 1.0,
            steps: 10,
            memory_gate: 1.0,
        };
        for t in [0.0, 0.2, 0.7, 1.0] {
            assert!((s.b(t) - (-1.5 * t).exp()).abs() < 1e-15);
        }
    }

    #[test]
    fn memory_gate_is_enforced() {
        assert!(OuSchedule::new(1.0, 0.1, 1.0, 100).is_err());
        assert!(OuSchedule::new(1.0, 0.1, 10.0, 1).is_err());
        assert!(OuSchedule::new(-1.0, 0.1, 10.0, 100).is_err());
        assert!(OuSchedule::new(1.0, 5.0, 1.0, 100).is_err());
    }

    #[test]
    fn bridge_endpoints_are_exact() {
        let s = sched();
        let (x0, xt) = ([0.1234567, -3.3], [2.5, 1e-7]);
        let mut out = [0.0; 2];
        let mut rng = seeded(1);
        s.bridge_sample(&x0, &xt, 0.0, &mut rng, &mut out).unwrap();
        assert_eq!(out, x0);
        s.bridge_sample(&x0, &xt, 1.0, &mut rng, &mut out).unwrap();
        assert_eq!(out, xt);
    }

    #[test]
    fn bridge_moments_match_monte_carlo() {
        let s = sched();
        let (x0, xt, t) = ([1.0], [-2.0], 0.4);
        let (w0, w1, var) = s.bridge_moments(t).unwrap();
        let mean = w0 * x0[0] + w1 * xt[0];
        let mut rng = seeded(2);
        let n = 100_000;
        let mut out = [0.0];
        let (mut m1, mut m2) = (0.0, 0.0);
        for _ in 0..n {
            s.bridge_sample(&x0, &xt, t, &mut rng, &mut out).unwrap();
            m1 += out[0];
            m2 += out[0] * out[0];
        }
        let em = m1 / n as f64;
        let ev = m2 / n as f64 - em * em;
        assert!((em - mean).abs() < 4.0 * (var / n as f64).sqrt());
        let se_var = var * (2.0 / n as f64).sqrt();
        assert!((ev - var).abs() < 4.0 * se_var);
    }

    #[test]
    fn cond_score_matches_log_density_gradient() {
        let s = sched();
        let x_end = [0.7, -1.1];
        for &t in &[0.0, 0.3, 0.9, 0.99] {
            let c = s.c(t);
            let var = s.sigma_bar * s.sigma_bar * (1.0 - c * c);
            let log_p = |x: &[f64]| -> f64 {
                x.iter()
                    .zip(&x_end)
                    .map(|(a, b)| -(b - c * a).powi(2) / (2.0 * var))
                    .sum()
            };
            let x = [0.3, 2.0];
            let mut g = [0.0; 2];
            s.cond_score(&x, &x_end, t, &mut g).unwrap();
            for i in 0..2 {
                let h = 1e-5;
                let mut a = x;
                a[i] += h;
                let mut b = x;
                b[i] -= h;
                let fd = (log_p(&a) - log_p(&b)) / (2.0 * h);
                assert!(
                    (fd - g[i]).abs() <= 1e-6 * fd.abs().max(1e-3),
                    "t={t}: {fd} vs {}",
                    g[i]
                );
            }
        }
        let mut g = [0.0; 2];
        assert!(s.cond_score(&[0.0; 2], &x_end, 1.0, &mut g).is_err());
    }

    #[test]
    fn cond_score_zero_residual_and_scaling() {
        let s = sched();
        let t = 0.5;
        let c = s.c(t);
        let x = [1.0, -2.0];
        let mut g = [1.0; 2];
        s.cond_score(&x, &[c * x[0], c * x[1]], t, &mut g).unwrap();
        assert_eq!(g, [0.0, 0.0]);
        let wide = OuSchedule {
            sigma_bar: 2.0 * s.sigma_bar,
            ..s.clone()
        };
        let (mut a, mut b) = ([0.0; 2], [0.0; 2]);
        s.cond_score(&x, &[0.5, 0.5], t, &mut a).unwrap();
        wide.cond_score(&x, &[0.5, 0.5], t, &mut b).unwrap();
        assert!((b[0] - a[0] / 4.0).abs() < 1e-15);
    }

    #[test]
    fn reward_of_flat_target_is_neg_log_nu() {
        let target = ContinuousTarget::new(ContinuousKind::ManyWell { dim: 2, delta: 1.0 }, 0.0).unwrap();
        let r = GaussianReward::new(&target, 2.0);
        let x = [1.0, 3.0];
        let expected = 10.0 / 8.0 + (2.0 * std::f64::consts::PI * 4.0).ln();
        assert!((r.reward(&x).unwrap() - expected).abs() < 1e-14);
        let bare = GaussianReward {
            include_constants: false,
            ..r
        };
        assert!((bare.reward(&x).unwrap() - 10.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn reward_integrates_to_partition_function() {
        // E_nu[exp r] = int exp(-beta V) = sqrt(2 pi) for V = (x - 2)^2 / 2.
        let target = ContinuousTarget::new(
            ContinuousKind::Gmm {
                centers: vec![vec![2.0]],
                std: 1.0,
            },
            1.0,
        )
        .unwrap();
        let sigma_bar = 1.7;
        let r = GaussianReward::new(&target, sigma_bar);
        // Trapezoid rule on a wide grid; the integrand is smooth and decays fast.
        let (lo, hi, n) = (-40.0, 40.0, 200_000);
        let h = (hi - lo) / n as f64;
        let mut total = 0.0;
        for k in 0..=n {
            let x = lo + k as f64 * h;
            let nu = (-x * x / (2.0 * sigma_bar * sigma_bar)).exp() / (2.0 * std::f64::consts::PI).sqrt() / sigma_bar;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            total += w * h * nu * r.reward(&[x]).unwrap().exp();
        }
        assert!((total - (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn annealed_drift_endpoints() {
        let s = sched();
        let target = ContinuousTarget::new(
            ContinuousKind::Gmm {
                centers: vec![vec![2.0, 0.0]],
                std: 0.5,
            },
            1.0,
        )
        .unwrap();
        let x = [1.0, -1.0];
        let mut out = [0.0; 2];
        s.annealed_drift(&target, 0.0, &x, &mut out).unwrap();
        assert_eq!(out, [-0.05, 0.05]);
        s.annealed_drift(&target, 1.0, &x, &mut out).unwrap();
        let g = target.potential_grad(&x).unwrap();
        let k = -5.0 * s.sigma_bar * s.sigma_bar;
        assert!((out[0] - k * g[0]).abs() < 1e-12 && (out[1] - k * g[1]).abs() < 1e-12);
    }
}
