use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::targets::log_sum_exp;

/// Proximal step size. `Infinite` is the unregularized limit (tempering
/// exponent 1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Eta {
    Finite(f64),
    Infinite,
}

impl Eta {
    /// Tempering exponent `gamma = eta / (eta + 1)`.
    pub fn gamma(self) -> f64 {
        match self {
            Eta::Finite(e) => e / (e + 1.0),
            Eta::Infinite => 1.0,
        }
    }

    /// Inverse of [`gamma`](Self::gamma); `gamma = 1` maps to `Infinite`.
    pub fn from_gamma(gamma: f64) -> Self {
        if gamma >= 1.0 {
            Eta::Infinite
        } else {
            Eta::Finite(gamma / (1.0 - gamma))
        }
    }

    /// `1 / (eta + 1)`, the factor by which `lambda` shrinks.
    pub fn lambda_factor(self) -> f64 {
        match self {
            Eta::Finite(e) => 1.0 / (e + 1.0),
            Eta::Infinite => 0.0,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Eta::Infinite)
    }
}

impl Serialize for Eta {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Eta::Finite(e) => s.serialize_f64(*e),
            Eta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Eta {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) if v.is_infinite() && v > 0.0 => Ok(Eta::Infinite),
            Raw::Num(v) if v > 0.0 => Ok(Eta::Finite(v)),
            Raw::Text(t) if t == "inf" => Ok(Eta::Infinite),
            _ => Err(serde::de::Error::custom("eta must be a positive number or \"inf\"")),
        }
    }
}

/// Which stage measure the weights chase.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProxTarget {
    /// The proximal minimizer: `gamma (r + log_rn)`.
    #[default]
    Eta,
    /// The geometric interpolant: `(1 - lambda) r + log_rn`.
    Lambda,
}

/// The pieces of an unregularized log weight `r(x_T) + log dP_ref/dP_model`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BaseWeight {
    pub reward: f64,
    pub log_rn: f64,
}

impl BaseWeight {
    pub fn total(self) -> f64 {
        self.reward + self.log_rn
    }
}

/// Unregularized log weight `r(x_T) + log dP_ref/dP_model`.
pub fn base_log_weight(reward: f64, log_rn: f64) -> f64 {
    reward + log_rn
}

pub fn proximal_log_weight(base: BaseWeight, variant: ProxTarget, eta: Eta, lambda: f64) -> f64 {
    match variant {
        ProxTarget::Eta => {
            let g = eta.gamma();
            if g == 0.0 {
                0.0
            } else {
                g * base.total()
            }
        }
        ProxTarget::Lambda => {
            let r = if lambda >= 1.0 {
                0.0
            } else {
                (1.0 - lambda) * base.reward
            };
            r + base.log_rn
        }
    }
}

/// Self-normalized weights and the ESS fraction `1 / (M sum w^2)`.
pub fn normalize_and_ess(log_ws: &[f64]) -> Result<(Vec<f64>, f64)> {
    let w = normalize(log_ws)?;
    let e = ess(&w);
    Ok((w, e))
}

pub fn normalize(log_ws: &[f64]) -> Result<Vec<f64>> {
    if log_ws.is_empty() {
        return Err(Error::Domain("no weights to normalize".into()));
    }
    if log_ws.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
        return Err(Error::NonFinite("log weight is NaN or +inf".into()));
    }
    let lse = log_sum_exp(log_ws);
    if lse == f64::NEG_INFINITY {
        return Err(Error::WeightCollapse("every log weight is -inf".into()));
    }
    Ok(log_ws.iter().map(|l| (l - lse).exp()).collect())
}

/// ESS fraction of normalized weights, in `[1/M, 1]`.
pub fn ess(w: &[f64]) -> f64 {
    let s2: f64 = w.iter().map(|v| v * v).sum();
    1.0 / (w.len() as f64 * s2)
}

/// `-(1/M) sum log(M w_j)`, with weights floored at `1e-300`.
pub fn kl_estimate(w: &[f64]) -> f64 {
    let m = w.len() as f64;
    -w.iter().map(|&v| (m * v.max(1e-300)).ln()).sum::<f64>() / m
}

/// Rescales weights so none exceeds `cap`, then renormalizes.
pub fn cap_weights(w: &mut [f64], cap: f64) {
    let mut changed = false;
    for v in w.iter_mut() {
        if *v > cap {
            *v = cap;
            changed = true;
        }
    }
    if changed {
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|v| *v /= total);
    }
}

/// Bisection tolerance on the tempering exponent.
pub const GAMMA_TOL: f64 = 1e-3;

fn kl_at(base: &[f64], gamma: f64, scratch: &mut Vec<f64>) -> Result<f64> {
    scratch.clear();
    scratch.extend(base.iter().map(|b| gamma * b));
    Ok(kl_estimate(&normalize(scratch)?))
}

/// Largest tempering exponent whose weights stay inside the KL trust region
/// `eps`, located by bisection to [`GAMMA_TOL`]. Returns the feasible end.
pub fn adaptive_eta(base_log_weights: &[f64], eps: f64) -> Result<Eta> {
    Ok(Eta::from_gamma(adaptive_gamma(base_log_weights, eps)?))
}

pub fn adaptive_gamma(base_log_weights: &[f64], eps: f64) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::Config(format!("trust radius must be positive, got {eps}")));
    }
    if base_log_weights.is_empty() || base_log_weights.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("base log weights must be finite and nonempty".into()));
    }
    let mut scratch = Vec::with_capacity(base_log_weights.len());
    if kl_at(base_log_weights, 1.0, &mut scratch)? <= eps {
        return Ok(1.0);
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        if hi - lo <= GAMMA_TOL && lo > 0.0 {
            return Ok(lo);
        }
        if hi < 1e-15 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if kl_at(base_log_weights, mid, &mut scratch)? <= eps {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::WeightCollapse(format!(
        "no positive tempering exponent keeps the KL estimate below {eps}"
    )))
}

/// Step size that moves the interpolation weight from `lambda_prev` to
/// `lambda_next`: `lambda_prev / lambda_next - 1`, infinite at `lambda_next = 0`.
pub fn predefined_eta(lambda_prev: f64, lambda_next: f64) -> Result<Eta> {
    if !(0.0..=1.0).contains(&lambda_next) || !(0.0..=1.0).contains(&lambda_prev) {
        return Err(Error::Config(format!(
            "lambda values must lie in [0, 1], got {lambda_prev} -> {lambda_next}"
        )));
    }
    if lambda_next == 0.0 {
        return Ok(Eta::Infinite);
    }
    if lambda_next >= lambda_prev {
        return Err(Error::Config(format!(
            "lambda schedule must decrease strictly until it reaches 0, got {lambda_prev} -> {lambda_next}"
        )));
    }
    Ok(Eta::Finite(lambda_prev / lambda_next - 1.0))
}
