use ndarray::Array2;
use rand::Rng;

use super::{LossEval, RolloutBatch, SamplerProblem};
use crate::approximator::{one_hot, softmax_rows, ParamStore, ScoreNet, ScoreNetSpec, Tensor, MASK};
use crate::ctmc::{mask_corrupt, rollout_discrete};
use crate::error::{Error, Result};
use crate::proximal::BaseWeight;
use crate::rng::PdnsRng;
use crate::targets::DiscreteTarget;

/// A discrete target sampled by the masked CTMC.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    pub target: DiscreteTarget,
    pub net: ScoreNetSpec,
    pub steps: usize,
    /// Mask rates are drawn from `U[lambda_min, 1]`.
    pub lambda_min: f64,
    /// Independent corruptions per buffered sample.
    pub replicates: usize,
}

impl DiscreteProblem {
    pub fn validate(&self) -> Result<()> {
        if self.net.length != self.target.length() || self.net.alphabet != self.target.alphabet() {
            return Err(Error::Config(format!(
                "score net is {}x{} but the target has length {} and alphabet {}",
                self.net.length,
                self.net.alphabet,
                self.target.length(),
                self.target.alphabet()
            )));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= 0.5) {
            return Err(Error::Config(format!(
                "lambda_min must lie in (0, 0.5], got {}",
                self.lambda_min
            )));
        }
        if self.replicates == 0 || self.steps == 0 {
            return Err(Error::Config("replicates and steps must be positive".into()));
        }
        Ok(())
    }
}

impl SamplerProblem for DiscreteProblem {
    type State = Vec<u8>;

    fn init_params(&self, rng: &mut PdnsRng) -> ParamStore {
        self.net.init(rng)
    }

    fn check_params(&self, params: &[Tensor]) -> Result<()> {
        self.net.mlp().check_params(params)
    }

    fn rollout(&self, params: &[Tensor], n: usize, rng: &mut PdnsRng) -> Result<RolloutBatch<Vec<u8>>> {
        let net = ScoreNet {
            spec: &self.net,
            params,
        };
        let r = rollout_discrete(&net, self.steps, n, rng)?;
        let mut batch = RolloutBatch {
            states: Vec::with_capacity(n),
            base: Vec::with_capacity(n),
            dropped: 0,
        };
        for rec in r.records {
            let w = BaseWeight {
                reward: self.target.log_target(&rec.x)?,
                log_rn: rec.log_rn,
            };
            batch.push(rec.x, w);
        }
        Ok(batch)
    }

    fn warm_start(&self, _n: usize, _rng: &mut PdnsRng) -> Result<Option<Vec<Vec<u8>>>> {
        Ok(None)
    }

    /// Masked cross-entropy: for each corruption at rate `lambda`,
    /// `(1/lambda) sum_{masked i} -log s(x_masked)_{i, x_i}`.
    fn loss_and_grad(&self, params: &[Tensor], batch: &[(&Vec<u8>, f64)], rng: &mut PdnsRng) -> Result<LossEval> {
        let (d, n) = (self.net.length, self.net.alphabet);
        let mut inputs: Vec<u8> = Vec::with_capacity(batch.len() * self.replicates * d);
        let mut rows: Vec<(usize, f64)> = Vec::new();
        let mut skipped = 0;
        let reps = self.replicates as f64;
        for (bi, (x, c)) in batch.iter().enumerate() {
            for _ in 0..self.replicates {
                let mut corrupted = None;
                for _ in 0..2 {
                    let lambda = rng.random_range(self.lambda_min..=1.0);
                    let y = mask_corrupt(x, lambda, rng)?;
                    if y.contains(&MASK) {
                        corrupted = Some((y, lambda));
                        break;
                    }
                }
                match corrupted {
                    Some((y, lambda)) => {
                        inputs.extend_from_slice(&y);
                        rows.push((bi, c / (reps * lambda)));
                    }
                    None => skipped += 1,
                }
            }
        }
        let mlp = self.net.mlp();
        if rows.is_empty() {
            let grads = params.iter().map(Tensor::zeros_like).collect();
            return Ok(LossEval {
                loss: 0.0,
                grads,
                skipped,
            });
        }
        let input = one_hot(&self.net, &inputs)?;
        let (logits, cache) = mlp.forward_cached(params, input.view())?;
        let mut probs = logits;
        softmax_rows(&mut probs, n);
        let mut adj = Array2::zeros(probs.dim());
        let mut loss = 0.0;
        for (r, &(bi, coef)) in rows.iter().enumerate() {
            let x = batch[bi].0;
            let y = &inputs[r * d..(r + 1) * d];
            for i in 0..d {
                if y[i] != MASK {
                    continue;
                }
                let v = x[i] as usize;
                loss -= coef * probs[[r, i * n + v]].max(1e-300).ln();
                for k in 0..n {
                    let onehot = if k == v { 1.0 } else { 0.0 };
                    adj[[r, i * n + k]] = coef * (probs[[r, i * n + k]] - onehot);
                }
            }
        }
        let grads = mlp.backward(params, &cache, adj.view())?;
        Ok(LossEval { loss, grads, skipped })
    }
}
