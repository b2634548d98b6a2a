use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::weights::{ess, normalize};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BufferEntry<S> {
    pub state: S,
    pub log_weight: f64,
    pub weight: f64,
}

/// Terminal states of one stage with their self-normalized weights.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<S> {
    pub entries: Vec<BufferEntry<S>>,
    pub stage: usize,
    pub refreshes: usize,
}

impl<S: Clone> ReplayBuffer<S> {
    pub fn new(states: Vec<S>, log_weights: Vec<f64>, stage: usize) -> Result<Self> {
        if states.len() != log_weights.len() {
            return Err(Error::Shape("states and weights differ in length".into()));
        }
        let w = normalize(&log_weights)?;
        let entries = states
            .into_iter()
            .zip(log_weights)
            .zip(w)
            .map(|((state, log_weight), weight)| BufferEntry {
                state,
                log_weight,
                weight,
            })
            .collect();
        Ok(Self {
            entries,
            stage,
            refreshes: 0,
        })
    }

    /// Equal weights.
    pub fn uniform(states: Vec<S>, stage: usize) -> Result<Self> {
        let n = states.len();
        Self::new(states, vec![0.0; n], stage)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.weight).collect()
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleScheme {
    #[default]
    Multinomial,
    Systematic,
}

/// Draws `len` entries proportionally to their weights; the output has uniform weights.
pub fn resample<S: Clone, R: Rng + ?Sized>(
    buffer: &ReplayBuffer<S>,
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<ReplayBuffer<S>> {
    let idx = resample_indices(&buffer.weights(), buffer.len(), scheme, rng)?;
    let n = idx.len();
    let entries = idx
        .into_iter()
        .map(|i| BufferEntry {
            state: buffer.entries[i].state.clone(),
            log_weight: 0.0,
            weight: 1.0 / n as f64,
        })
        .collect();
    Ok(ReplayBuffer {
        entries,
        stage: buffer.stage,
        refreshes: buffer.refreshes,
    })
}

pub fn resample_indices<R: Rng + ?Sized>(
    weights: &[f64],
    n: usize,
    scheme: ResampleScheme,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if weights.is_empty() {
        return Err(Error::Domain("cannot resample an empty buffer".into()));
    }
    match scheme {
        ResampleScheme::Multinomial => {
            let dist = WeightedIndex::new(weights).map_err(|e| Error::WeightCollapse(e.to_string()))?;
            Ok((0..n).map(|_| dist.sample(rng)).collect())
        }
        ResampleScheme::Systematic => {
            let total: f64 = weights.iter().sum();
            if !(total > 0.0 && total.is_finite()) {
                return Err(Error::WeightCollapse("weights do not sum to a positive number".into()));
            }
            let u0: f64 = rng.random();
            let mut out = Vec::with_capacity(n);
            let mut cum = weights[0] / total;
            let mut i = 0;
            for k in 0..n {
                let u = (k as f64 + u0) / n as f64;
                while u > cum && i + 1 < weights.len() {
                    i += 1;
                    cum += weights[i] / total;
                }
                out.push(i);
            }
            Ok(out)
        }
    }
}
