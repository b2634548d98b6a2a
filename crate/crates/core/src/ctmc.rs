//! Masked discrete diffusion: every coordinate starts as MASK and is revealed
//! exactly once. Under the linear survival schedule a coordinate still masked
//! at time `t` unmasks during `[t, t + dt)` with probability `dt / (T - t)`.
//! The log Radon-Nikodym derivative against the uniform reference picks up
//! `log((1/N) / s_i(v))` at each reveal.

use ndarray::Array2;
use rand::Rng;
use rayon::prelude::*;

use crate::approximator::{forward_score_batch, ScoreNet, MASK};
use crate::error::{Error, Result};
use crate::rng::{chunks, fork, stream, PdnsRng};

/// Probability floor applied to score entries before sampling and logging.
pub const SCORE_FLOOR: f64 = 1e-12;

/// A map from masked sequences to per-position value distributions. Returns a
/// `batch x (length * alphabet)` array for a flat batch of sequences.
pub trait ScoreField: Sync {
    fn length(&self) -> usize;
    fn alphabet(&self) -> usize;
    fn eval_batch(&self, xs: &[u8]) -> Result<Array2<f64>>;
}

impl ScoreField for ScoreNet<'_> {
    fn length(&self) -> usize {
        self.spec.length
    }

    fn alphabet(&self) -> usize {
        self.spec.alphabet
    }

    fn eval_batch(&self, xs: &[u8]) -> Result<Array2<f64>> {
        forward_score_batch(self.params, self.spec, xs)
    }
}

/// Uniform rows: the reference process itself.
#[derive(Clone, Copy, Debug)]
pub struct UniformScore {
    pub length: usize,
    pub alphabet: usize,
}

impl ScoreField for UniformScore {
    fn length(&self) -> usize {
        self.length
    }

    fn alphabet(&self) -> usize {
        self.alphabet
    }

    fn eval_batch(&self, xs: &[u8]) -> Result<Array2<f64>> {
        let rows = xs.len() / self.length;
        Ok(Array2::from_elem(
            (rows, self.length * self.alphabet),
            1.0 / self.alphabet as f64,
        ))
    }
}

/// A score given by a function of one sequence returning a `length x alphabet` table.
pub struct TableScore<F> {
    pub length: usize,
    pub alphabet: usize,
    pub table: F,
}

impl<F: Fn(&[u8]) -> Array2<f64> + Sync> ScoreField for TableScore<F> {
    fn length(&self) -> usize {
        self.length
    }

    fn alphabet(&self) -> usize {
        self.alphabet
    }

    fn eval_batch(&self, xs: &[u8]) -> Result<Array2<f64>> {
        let (d, n) = (self.length, self.alphabet);
        let rows = xs.len() / d;
        let mut out = Array2::zeros((rows, d * n));
        for (b, x) in xs.chunks(d).enumerate() {
            let t = (self.table)(x);
            if t.dim() != (d, n) {
                return Err(Error::Shape(format!(
                    "score table has shape {:?}, expected ({d}, {n})",
                    t.dim()
                )));
            }
            out.row_mut(b).iter_mut().zip(t.iter()).for_each(|(o, &v)| *o = v);
        }
        Ok(out)
    }
}

/// Chance that a coordinate still masked at `t` is revealed by `t + dt`;
/// exactly 1 on the step that ends at the horizon.
pub fn unmask_prob(t: f64, dt: f64, horizon: f64) -> f64 {
    if t + dt >= horizon * (1.0 - 1e-12) {
        1.0
    } else {
        (dt / (horizon - t)).min(1.0)
    }
}

/// Reveal probability for step `k` of `steps` on a uniform grid: `1 / (steps - k)`.
pub fn step_unmask_prob(k: usize, steps: usize) -> f64 {
    if k + 1 >= steps {
        1.0
    } else {
        1.0 / (steps - k) as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteTrajectoryRecord {
    pub x: Vec<u8>,
    /// `log dP_ref/dP_s` along the realized path.
    pub log_rn: f64,
    pub tag: u64,
}

#[derive(Clone, Debug)]
pub struct DiscreteRollout {
    pub records: Vec<DiscreteTrajectoryRecord>,
    /// Score entries raised to [`SCORE_FLOOR`] at reveal time.
    pub floored: usize,
    pub seed: u64,
}

/// Simulates `n` paths of the masked chain over `steps` uniform steps.
pub fn rollout_discrete<S: ScoreField + ?Sized>(
    score: &S,
    steps: usize,
    n: usize,
    rng: &mut PdnsRng,
) -> Result<DiscreteRollout> {
    let seed = fork(rng);
    rollout_discrete_seeded(score, steps, n, seed)
}

pub fn rollout_discrete_seeded<S: ScoreField + ?Sized>(
    score: &S,
    steps: usize,
    n: usize,
    seed: u64,
) -> Result<DiscreteRollout> {
    if steps == 0 {
        return Err(Error::Config("the masked chain needs at least one step".into()));
    }
    let parts: Vec<Result<(Vec<DiscreteTrajectoryRecord>, usize)>> = chunks(n)
        .into_par_iter()
        .enumerate()
        .map(|(ci, (start, len))| discrete_chunk(score, steps, start, len, &mut stream(seed, ci as u64)))
        .collect();
    let mut records = Vec::with_capacity(n);
    let mut floored = 0;
    for part in parts {
        let (r, f) = part?;
        records.extend(r);
        floored += f;
    }
    if floored > 0 {
        log::warn!("{floored} score entries floored at {SCORE_FLOOR:e}");
    }
    Ok(DiscreteRollout { records, floored, seed })
}

fn discrete_chunk<S: ScoreField + ?Sized>(
    score: &S,
    steps: usize,
    start: usize,
    len: usize,
    rng: &mut PdnsRng,
) -> Result<(Vec<DiscreteTrajectoryRecord>, usize)> {
    let (d, n) = (score.length(), score.alphabet());
    let log_ref = -(n as f64).ln();
    let mut x = vec![MASK; len * d];
    let mut log_rn = vec![0.0; len];
    let mut floored = 0;
    let mut events: Vec<(usize, usize)> = Vec::new();
    let mut rows: Vec<usize> = Vec::new();
    let mut batch: Vec<u8> = Vec::new();
    for k in 0..steps {
        let p = step_unmask_prob(k, steps);
        events.clear();
        rows.clear();
        for b in 0..len {
            let before = events.len();
            for i in 0..d {
                if x[b * d + i] == MASK && (p >= 1.0 || rng.random::<f64>() < p) {
                    events.push((b, i));
                }
            }
            if events.len() > before {
                rows.push(b);
            }
        }
        if rows.is_empty() {
            continue;
        }
        // Scores at the pre-step state, only for rows with a reveal.
        batch.clear();
        for &b in &rows {
            batch.extend_from_slice(&x[b * d..(b + 1) * d]);
        }
        let s = score.eval_batch(&batch)?;
        let mut r = 0;
        for &(b, i) in &events {
            while rows[r] != b {
                r += 1;
            }
            let probs = &s.row(r).to_slice().expect("row-major")[i * n..(i + 1) * n];
            let mut total = 0.0;
            for &q in probs {
                total += q.max(SCORE_FLOOR);
            }
            let mut u = rng.random::<f64>() * total;
            let mut v = n - 1;
            for (j, &q) in probs.iter().enumerate() {
                let q = q.max(SCORE_FLOOR);
                if u < q {
                    v = j;
                    break;
                }
                u -= q;
            }
            let q = probs[v];
            if !(q >= SCORE_FLOOR) {
                floored += 1;
            }
            x[b * d + i] = v as u8;
            log_rn[b] += log_ref - q.max(SCORE_FLOOR).ln();
        }
    }
    let records = x
        .chunks(d)
        .zip(log_rn)
        .enumerate()
        .map(|(b, (xs, lw))| DiscreteTrajectoryRecord {
            x: xs.to_vec(),
            log_rn: lw,
            tag: (start + b) as u64,
        })
        .collect();
    Ok((records, floored))
}

/// Replaces each entry of `x` by MASK independently with probability `lambda`.
pub fn mask_corrupt<R: Rng + ?Sized>(x: &[u8], lambda: f64, rng: &mut R) -> Result<Vec<u8>> {
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("mask rate must lie in (0, 1], got {lambda}")));
    }
    Ok(x.iter()
        .map(|&v| {
            if lambda >= 1.0 || rng.random::<f64>() < lambda {
                MASK
            } else {
                v
            }
        })
        .collect())
}
