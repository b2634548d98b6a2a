use ndarray::Array2;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{LossEval, RolloutBatch, SamplerProblem};
use crate::approximator::{ControlNet, ControlNetSpec, ParamStore, Tensor};
use crate::error::Result;
use crate::ou::{GaussianReward, OuSchedule};
use crate::proximal::BaseWeight;
use crate::rng::PdnsRng;
use crate::sde::{annealed_rollout, rollout};
use crate::targets::ContinuousTarget;

/// A continuous target sampled by the controlled OU process.
#[derive(Clone, Debug)]
pub struct ContinuousProblem {
    pub target: ContinuousTarget,
    pub sched: OuSchedule,
    pub net: ControlNetSpec,
    pub include_constants: bool,
}

impl ContinuousProblem {
    pub fn reward(&self) -> GaussianReward<'_> {
        GaussianReward {
            include_constants: self.include_constants,
            ..GaussianReward::new(&self.target, self.sched.sigma_bar)
        }
    }
}

impl SamplerProblem for ContinuousProblem {
    type State = Vec<f64>;

    fn init_params(&self, rng: &mut PdnsRng) -> ParamStore {
        self.net.init(rng)
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        self.net.mlp().check_params(params)
    }

    fn rollout(&self, params: &[Tensor], n: usize, rng: &mut PdnsRng) -> Result<RolloutBatch<Vec<f64>>> {
        let net = ControlNet {
            spec: &self.net,
            params,
        };
        let r = rollout(&net, &self.sched, n, rng)?;
        let reward = self.reward();
        let mut batch = RolloutBatch {
            states: Vec::with_capacity(n),
            base: Vec::with_capacity(n),
            dropped: r.dropped,
        };
        for rec in r.records {
            let w = BaseWeight {
                reward: reward.reward(&rec.x)?,
                log_rn: rec.log_rn,
            };
            batch.push(rec.x, w);
        }
        Ok(batch)
    }

    fn warm_start(&self, n: usize, rng: &mut PdnsRng) -> Result<Option<Vec<Vec<f64>>>> {
        annealed_rollout(&self.target, &self.sched, n, rng).map(Some)
    }

    /// Bridge-matching regression of `u(t, X_t)` onto
    /// `sigma_t grad log p_ref(x_T | X_t)` with `X_0 ~ nu`, `t ~ U[0, T)` and
    /// `X_t` drawn from the reference bridge.
    fn loss_and_grad(&self, params: &[Tensor], batch: &[(&Vec<f64>, f64)], rng: &mut PdnsRng) -> Result<LossEval> {
        let d = self.net.dim;
        let s = &self.sched;
        let rows = batch.len();
        let mut ts = Vec::with_capacity(rows);
        let mut xt = Array2::zeros((rows, d));
        let mut target = Array2::zeros((rows, d));
        let mut x0 = vec![0.0; d];
        let mut score = vec![0.0; d];
        for (i, (x_end, _)) in batch.iter().enumerate() {
            x0.iter_mut()
                .for_each(|v| *v = s.sigma_bar * rng.sample::<f64, _>(StandardNormal));
            let mut t = rng.random::<f64>() * s.horizon;
            while t >= s.horizon {
                t = rng.random::<f64>() * s.horizon;
            }
            let mut row = xt.row_mut(i);
            let row = row.as_slice_mut().expect("row-major");
            s.bridge_sample(&x0, x_end, t, rng, row)?;
            s.cond_score(row, x_end, t, &mut score)?;
            let sigma = s.sigma(t);
            target
                .row_mut(i)
                .iter_mut()
                .zip(&score)
                .for_each(|(o, v)| *o = sigma * v);
            ts.push(t);
        }
        let feats = self.net.features(&ts, xt.view())?;
        let mlp = self.net.mlp();
        let (out, cache) = mlp.forward_cached(params, feats.view())?;
        let mut adj = out - &target;
        let mut loss = 0.0;
        for (mut row, (_, c)) in adj.rows_mut().into_iter().zip(batch) {
            loss += 0.5 * c * row.iter().map(|v| v * v).sum::<f64>();
            row.mapv_inplace(|v| c * v);
        }
        let grads = mlp.backward(params, &cache, adj.view())?;
        Ok(LossEval {
            loss,
            grads,
            skipped: 0,
        })
    }
}
