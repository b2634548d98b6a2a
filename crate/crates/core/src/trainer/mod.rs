//! Staged training. Each stage rolls out the current (EMA) model, weights the
//! terminal states by proximal importance weights, and fits the model to the
//! weighted buffer with a denoising cross-entropy loss.

mod continuous;
mod discrete;

pub use continuous::ContinuousProblem;
pub use discrete::DiscreteProblem;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approximator::{AdamConfig, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::proximal::{
    cap_weights, kl_estimate, normalize, normalize_and_ess, resample, BaseWeight, Eta, ProxTarget, ReplayBuffer,
    ResampleScheme, ScheduleSpec, SchedulerState,
};
use crate::rng::{fork, seeded, stream, PdnsRng};

/// Terminal states of a batch of rollouts with their unregularized weights.
#[derive(Clone, Debug)]
pub struct RolloutBatch<S> {
    pub states: Vec<S>,
    pub base: Vec<BaseWeight>,
    /// Trajectories lost to non-finite states or weights.
    pub dropped: usize,
}

impl<S> RolloutBatch<S> {
    /// Adds a record, dropping it when its weight is not finite.
    pub fn push(&mut self, state: S, w: BaseWeight) {
        if w.total().is_finite() {
            self.states.push(state);
            self.base.push(w);
        } else {
            self.dropped += 1;
        }
    }

    pub fn log_weights(&self) -> Vec<f64> {
        self.base.iter().map(|b| b.total()).collect()
    }

    /// ESS fraction of the unregularized weights, i.e. against the target itself.
    pub fn global_ess(&self) -> Result<f64> {
        Ok(normalize_and_ess(&self.log_weights())?.1)
    }
}

pub struct LossEval {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    /// Loss terms that could not be formed (e.g. corruptions without a mask).
    pub skipped: usize,
}

/// A target paired with a sampler family: how to roll out, weight, and fit.
pub trait SamplerProblem: Sync {
    type State: Clone + Send + Sync;

    fn init_params(&self, rng: &mut PdnsRng) -> ParamStore;
    fn check_params(&self, params: &[Tensor]) -> Result<()>;
    fn rollout(&self, params: &[Tensor], n: usize, rng: &mut PdnsRng) -> Result<RolloutBatch<Self::State>>;
    /// Samples for an initial uniformly weighted stage, if the sampler has one.
    fn warm_start(&self, n: usize, rng: &mut PdnsRng) -> Result<Option<Vec<Self::State>>>;
    /// Weighted loss over `(state, coefficient)` pairs and its parameter gradient.
    fn loss_and_grad(&self, params: &[Tensor], batch: &[(&Self::State, f64)], rng: &mut PdnsRng) -> Result<LossEval>;
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Minibatch terms carry the buffer weights.
    #[default]
    WeightBased,
    /// The buffer is resampled by weight once, then used uniformly.
    ResampleBased,
}

fn d_true() -> bool {
    true
}
fn d_lambda_min() -> f64 {
    0.01
}
fn d_one() -> usize {
    1
}
fn d_ema() -> f64 {
    0.999
}
fn d_eval() -> usize {
    2000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub schedule: ScheduleSpec,
    pub inner_steps: usize,
    pub batch_size: usize,
    pub buffer_size: usize,
    /// Refresh the buffer after this many gradient steps; 0 keeps one buffer per stage.
    #[serde(default)]
    pub refresh_every: usize,
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub prox_target: ProxTarget,
    #[serde(default)]
    pub adam: AdamConfig,
    #[serde(default = "d_ema")]
    pub ema_decay: f64,
    #[serde(default = "d_lambda_min")]
    pub lambda_min: f64,
    #[serde(default = "d_one")]
    pub replicates: usize,
    /// Run the uniformly weighted warm-start stage when the sampler has one.
    #[serde(default = "d_true")]
    pub warm_start: bool,
    /// Gradient steps in the warm-start stage; defaults to `inner_steps`.
    #[serde(default)]
    pub warm_start_steps: Option<usize>,
    #[serde(default)]
    pub resample_scheme: ResampleScheme,
    /// Optional cap on normalized buffer weights.
    #[serde(default)]
    pub max_weight: Option<f64>,
    /// Rollouts drawn after training to report the final ESS.
    #[serde(default = "d_eval")]
    pub eval_samples: usize,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        self.schedule.validate()?;
        if self.buffer_size == 0 || self.batch_size == 0 {
            return bad("buffer_size and batch_size must be positive".into());
        }
        if self.batch_size > self.buffer_size {
            return bad(format!(
                "batch_size {} exceeds buffer_size {}",
                self.batch_size, self.buffer_size
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return bad(format!("ema_decay must lie in [0, 1), got {}", self.ema_decay));
        }
        if !(self.lambda_min > 0.0 && self.lambda_min <= 0.5) {
            return bad(format!("lambda_min must lie in (0, 0.5], got {}", self.lambda_min));
        }
        if self.replicates == 0 {
            return bad("replicates must be positive".into());
        }
        if !(self.adam.lr >= 0.0) || !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            return bad("optimizer needs lr >= 0 and betas in [0, 1)".into());
        }
        if let Some(c) = self.max_weight {
            if !(c > 0.0 && c <= 1.0) {
                return bad(format!("max_weight must lie in (0, 1], got {c}"));
            }
        }
        Ok(())
    }
}

/// One line of the per-stage log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub k: usize,
    pub lambda: f64,
    pub eta_or_inf: Eta,
    pub ess_local: f64,
    pub ess_global: f64,
    pub kl_estimate: f64,
    pub n_dropped: usize,
    pub config_hash: String,
    pub mean_loss: f64,
    pub refreshes: usize,
    pub skipped_terms: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct WarmStartRecord {
    pub steps: usize,
    pub samples: usize,
    pub mean_loss: f64,
}

/// Result of a full run. `aborted` is set when a stage's weights collapsed;
/// the parameters are then those at the end of the last completed stage.
#[derive(Clone, Debug)]
pub struct TrainOutcome<S> {
    pub store: ParamStore,
    pub scheduler: SchedulerState,
    pub warm_start: Option<WarmStartRecord>,
    pub stages: Vec<StageRecord>,
    pub aborted: Option<String>,
    /// Final rollouts from the EMA parameters.
    pub final_batch: Option<RolloutBatch<S>>,
    pub final_ess: Option<f64>,
}

/// Mutable training state threaded through the stages.
pub struct Trainer<'a, P: SamplerProblem> {
    pub problem: &'a P,
    pub cfg: &'a TrainConfig,
    pub store: ParamStore,
    pub rng: PdnsRng,
    pub config_hash: String,
    /// Rollout produced by the last refresh of the previous stage.
    carry: Option<RolloutBatch<P::State>>,
}

struct InnerStats {
    mean_loss: f64,
    refreshes: usize,
    skipped: usize,
    dropped: usize,
}

impl<'a, P: SamplerProblem> Trainer<'a, P> {
    pub fn new(problem: &'a P, cfg: &'a TrainConfig, seed: u64, config_hash: String) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed);
        let store = problem.init_params(&mut rng);
        Ok(Self {
            problem,
            cfg,
            store,
            rng,
            config_hash,
            carry: None,
        })
    }

    /// Starts from existing parameters instead of a fresh initialization.
    pub fn with_store(mut self, store: ParamStore) -> Result<Self> {
        self.problem.check_params(&store.params)?;
        self.store = store;
        Ok(self)
    }

    fn rollout(&mut self, n: usize) -> Result<RolloutBatch<P::State>> {
        let ema = self.store.ema.clone();
        self.problem.rollout(&ema, n, &mut self.rng)
    }

    /// Gradient steps on a buffer. `reweight` rebuilds a buffer from a fresh
    /// rollout when a refresh is due.
    fn inner_loop(
        &mut self,
        mut buffer: ReplayBuffer<P::State>,
        steps: usize,
        reweight: &mut dyn FnMut(&mut Self) -> Result<(ReplayBuffer<P::State>, usize)>,
    ) -> Result<(InnerStats, ReplayBuffer<P::State>)> {
        let cfg = self.cfg;
        let mut stats = InnerStats {
            mean_loss: 0.0,
            refreshes: 0,
            skipped: 0,
            dropped: 0,
        };
        for step in 0..steps {
            if cfg.refresh_every > 0 && step > 0 && step % cfg.refresh_every == 0 {
                let (b, dropped) = reweight(self)?;
                buffer = b;
                stats.refreshes += 1;
                stats.dropped += dropped;
            }
            let n = buffer.len();
            let uniform = cfg.algorithm == Algorithm::ResampleBased;
            let mut picks = Vec::with_capacity(cfg.batch_size);
            for _ in 0..cfg.batch_size {
                let e = &buffer.entries[self.rng.random_range(0..n)];
                let coef = if uniform {
                    1.0 / cfg.batch_size as f64
                } else {
                    n as f64 * e.weight / cfg.batch_size as f64
                };
                picks.push((&e.state, coef));
            }
            let mut loss_rng = stream(fork(&mut self.rng), 0);
            let eval = self.problem.loss_and_grad(&self.store.params, &picks, &mut loss_rng)?;
            stats.mean_loss += eval.loss / steps as f64;
            stats.skipped += eval.skipped;
            self.store.adam_step(&eval.grads, &cfg.adam)?;
            self.store.ema_update(cfg.ema_decay);
        }
        Ok((stats, buffer))
    }

    /// Uniformly weighted stage on warm-start samples.
    pub fn warm_start(&mut self) -> Result<Option<WarmStartRecord>> {
        if !self.cfg.warm_start {
            return Ok(None);
        }
        let n = self.cfg.buffer_size;
        let Some(states) = self.problem.warm_start(n, &mut self.rng)? else {
            return Ok(None);
        };
        let samples = states.len();
        let buffer = ReplayBuffer::uniform(states, 0)?;
        let steps = self.cfg.warm_start_steps.unwrap_or(self.cfg.inner_steps);
        let mut refresh = |t: &mut Self| -> Result<(ReplayBuffer<P::State>, usize)> {
            let s = t.problem.warm_start(n, &mut t.rng)?.unwrap_or_default();
            let dropped = n - s.len();
            Ok((ReplayBuffer::uniform(s, 0)?, dropped))
        };
        let (stats, _) = self.inner_loop(buffer, steps, &mut refresh)?;
        Ok(Some(WarmStartRecord {
            steps,
            samples,
            mean_loss: stats.mean_loss,
        }))
    }

    fn weigh(&self, sched: &SchedulerState, batch: &RolloutBatch<P::State>) -> Result<ReplayBuffer<P::State>> {
        let log_ws = sched.log_weights(&batch.base);
        let mut buffer = ReplayBuffer::new(batch.states.clone(), log_ws, sched.k)?;
        if let Some(cap) = self.cfg.max_weight {
            let mut w = buffer.weights();
            cap_weights(&mut w, cap);
            buffer.entries.iter_mut().zip(w).for_each(|(e, v)| e.weight = v);
        }
        Ok(buffer)
    }

    /// One proximal stage. Returns the stage record and whether the weights
    /// collapsed (in which case no training step was taken).
    pub fn run_stage(&mut self, sched: &mut SchedulerState) -> Result<(StageRecord, bool)> {
        let cfg = self.cfg;
        let batch = match self.carry.take() {
            Some(b) => b,
            None => self.rollout(cfg.buffer_size)?,
        };
        if batch.states.is_empty() {
            return Err(Error::WeightCollapse("every rollout was dropped".into()));
        }
        let eta = sched.propose(&batch.base)?;
        sched.advance(eta);
        let ess_global = batch.global_ess()?;
        let mut buffer = self.weigh(sched, &batch)?;
        let weights = buffer.weights();
        let ess_local = crate::proximal::ess(&weights);
        let mut record = StageRecord {
            k: sched.k,
            lambda: sched.lambda(),
            eta_or_inf: eta,
            ess_local,
            ess_global,
            kl_estimate: kl_estimate(&weights),
            n_dropped: batch.dropped,
            config_hash: self.config_hash.clone(),
            mean_loss: 0.0,
            refreshes: 0,
            skipped_terms: 0,
        };
        let n = buffer.len() as f64;
        if ess_local < 10.0 / n {
            return Ok((record, true));
        }
        if cfg.algorithm == Algorithm::ResampleBased {
            buffer = resample(&buffer, cfg.resample_scheme, &mut self.rng)?;
        }
        let stage_sched = sched.clone();
        let mut refresh = |t: &mut Self| -> Result<(ReplayBuffer<P::State>, usize)> {
            let b = t.rollout(t.cfg.buffer_size)?;
            let mut buf = t.weigh(&stage_sched, &b)?;
            if t.cfg.algorithm == Algorithm::ResampleBased {
                buf = resample(&buf, t.cfg.resample_scheme, &mut t.rng)?;
            }
            Ok((buf, b.dropped))
        };
        let (stats, _) = self.inner_loop(buffer, cfg.inner_steps, &mut refresh)?;
        record.mean_loss = stats.mean_loss;
        record.refreshes = stats.refreshes;
        record.skipped_terms = stats.skipped;
        record.n_dropped += stats.dropped;
        if cfg.refresh_every > 0 && cfg.inner_steps > 0 && cfg.inner_steps % cfg.refresh_every == 0 {
            // The refresh due after the last step becomes the next stage's rollout.
            let b = self.rollout(cfg.buffer_size)?;
            self.carry = Some(b);
            record.refreshes += 1;
        }
        Ok((record, false))
    }
}

/// Full run: optional warm start, then every scheduled stage, then a final
/// evaluation rollout. `on_stage` sees every stage record with the parameters
/// at the end of that stage.
pub fn run_pdns<P: SamplerProblem>(
    problem: &P,
    cfg: &TrainConfig,
    seed: u64,
    config_hash: &str,
    initial: Option<ParamStore>,
    on_stage: &mut dyn FnMut(&StageRecord, &ParamStore) -> Result<()>,
) -> Result<TrainOutcome<P::State>> {
    let mut trainer = Trainer::new(problem, cfg, seed, config_hash.to_string())?;
    if let Some(store) = initial {
        trainer = trainer.with_store(store)?;
    }
    let mut sched = SchedulerState::new(cfg.schedule.clone(), cfg.prox_target)?;
    let warm = trainer.warm_start()?;
    let mut stages = Vec::new();
    let mut aborted = None;
    while !sched.finished() {
        let (record, collapsed) = trainer.run_stage(&mut sched)?;
        on_stage(&record, &trainer.store)?;
        if collapsed {
            aborted = Some(format!(
                "stage {}: local ESS {:.3e} fell below 10/N; weights collapsed",
                record.k, record.ess_local
            ));
            stages.push(record);
            break;
        }
        stages.push(record);
    }
    let (final_batch, final_ess) = if cfg.eval_samples > 0 {
        let b = trainer.rollout(cfg.eval_samples)?;
        let e = normalize(&b.log_weights()).map(|w| crate::proximal::ess(&w)).ok();
        (Some(b), e)
    } else {
        (None, None)
    };
    Ok(TrainOutcome {
        store: trainer.store,
        scheduler: sched,
        warm_start: warm,
        stages,
        aborted,
        final_batch,
        final_ess,
    })
}
