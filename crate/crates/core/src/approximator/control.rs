use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{Activation, MlpSpec, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Architecture of the control network `u(t, x)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlNetSpec {
    pub dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    /// Number of sinusoid frequencies; the time embedding has `2 * time_features` entries.
    #[serde(default = "default_time_features")]
    pub time_features: usize,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    /// States are multiplied by this before entering the network.
    #[serde(default = "default_scale")]
    pub input_scale: f64,
}

fn default_time_features() -> usize {
    8
}
fn default_horizon() -> f64 {
    1.0
}
fn default_scale() -> f64 {
    1.0
}

/// Sinusoidal time embedding `[sin(w_1 t)..sin(w_F t), cos(w_1 t)..cos(w_F t)]`
/// with frequencies spaced geometrically from `pi/T` to `64 pi/T`.
pub fn time_features(t: f64, horizon: f64, count: usize) -> Result<Vec<f64>> {
    if !(0.0..=horizon).contains(&t) {
        return Err(Error::Domain(format!("time {t} outside [0, {horizon}]")));
    }
    if count == 0 {
        return Err(Error::Domain("time feature count must be at least 1".into()));
    }
    let mut out = vec![0.0; 2 * count];
    for j in 0..count {
        let ratio = if count == 1 { 0.0 } else { j as f64 / (count - 1) as f64 };
        let omega = std::f64::consts::PI / horizon * 64f64.powf(ratio);
        out[j] = (omega * t).sin();
        out[count + j] = (omega * t).cos();
    }
    Ok(out)
}

impl ControlNetSpec {
    pub fn new(dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            dim,
            hidden,
            activation: Activation::default(),
            time_features: default_time_features(),
            horizon: default_horizon(),
            input_scale: default_scale(),
        }
    }

    pub fn mlp(&self) -> MlpSpec {
        let mut sizes = vec![self.dim + 2 * self.time_features];
        sizes.extend(&self.hidden);
        sizes.push(self.dim);
        MlpSpec::new(sizes, self.activation)
    }

    /// Fresh parameters with a zeroed output layer, so the control starts at 0.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> ParamStore {
        ParamStore::new(self.mlp().init(rng, true))
    }

    /// Network inputs for rows `xs` at per-row times `ts`.
    pub fn features(&self, ts: &[f64], xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        if xs.ncols() != self.dim || ts.len() != xs.nrows() {
            return Err(Error::Shape(format!(
                "control input: {} times for {:?} states of dim {}",
                ts.len(),
                xs.dim(),
                self.dim
            )));
        }
        let width = self.dim + 2 * self.time_features;
        let mut out = Array2::zeros((xs.nrows(), width));
        let mut cached: Option<(f64, Vec<f64>)> = None;
        for (i, (&t, x)) in ts.iter().zip(xs.rows()).enumerate() {
            let emb = match &cached {
                Some((ct, e)) if *ct == t => e.clone(),
                _ => {
                    let e = time_features(t, self.horizon, self.time_features)?;
                    cached = Some((t, e.clone()));
                    e
                }
            };
            let mut row = out.row_mut(i);
            for j in 0..self.dim {
                row[j] = x[j] * self.input_scale;
            }
            for (j, v) in emb.into_iter().enumerate() {
                row[self.dim + j] = v;
            }
        }
        Ok(out)
    }

    pub fn forward_batch(&self, params: &[Tensor], ts: &[f64], xs: ArrayView2<f64>) -> Result<Array2<f64>> {
        let feats = self.features(ts, xs)?;
        self.mlp().forward(params, feats.view())
    }
}

/// `u(t, x)` for a single state.
pub fn forward_control(params: &[Tensor], spec: &ControlNetSpec, t: f64, x: &[f64]) -> Result<Vec<f64>> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("control input state contains NaN or inf".into()));
    }
    let xs = ArrayView2::from_shape((1, x.len()), x).map_err(|e| Error::Shape(e.to_string()))?;
    Ok(spec.forward_batch(params, &[t], xs)?.row(0).to_vec())
}

/// A control network bound to one parameter snapshot.
#[derive(Clone, Copy, Debug)]
pub struct ControlNet<'a> {
    pub spec: &'a ControlNetSpec,
    pub params: &'a [Tensor],
}
