use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::seeded;

fn default_one() -> f64 {
    1.0
}

/// Continuous potentials. Additive constants that do not depend on `x` are
/// dropped throughout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ContinuousKind {
    /// `sum_i (x_i^2 - delta)^2`.
    ManyWell { dim: usize, delta: f64 },
    /// `x_1 ~ N(0, sigma^2)`, `x_{2..d} | x_1 ~ N(0, exp(x_1) I)`.
    Funnel { dim: usize, sigma: f64 },
    /// Equally weighted isotropic Gaussians with standard deviation `std`.
    Gmm {
        centers: Vec<Vec<f64>>,
        #[serde(default = "default_one")]
        std: f64,
    },
    /// Equally weighted Student t components with two degrees of freedom.
    Mos { centers: Vec<Vec<f64>> },
    /// Four particles in the plane with a pairwise double-well potential.
    Dw4 { a: f64, b: f64, c: f64, d0: f64, tau: f64 },
    /// Lennard-Jones cluster of `particles` atoms in 3-D with a harmonic
    /// restraint towards the centre of mass.
    Lj {
        particles: usize,
        r_m: f64,
        epsilon: f64,
        c: f64,
        tau: f64,
    },
}

const MOS_DOF: f64 = 2.0;

impl ContinuousKind {
    pub fn dw4() -> Self {
        ContinuousKind::Dw4 {
            a: 0.0,
            b: -4.0,
            c: 0.9,
            d0: 1.0,
            tau: 1.0,
        }
    }

    pub fn lj(particles: usize) -> Self {
        ContinuousKind::Lj {
            particles,
            r_m: 1.0,
            epsilon: 1.0,
            c: 0.5,
            tau: 1.0,
        }
    }

    /// Mixture with `m` centres drawn uniformly from `[-half_width, half_width]^dim`.
    pub fn random_centers(dim: usize, m: usize, half_width: f64, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = seeded(seed);
        (0..m)
            .map(|_| (0..dim).map(|_| rng.random_range(-half_width..=half_width)).collect())
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTarget {
    #[serde(flatten)]
    pub kind: ContinuousKind,
    pub beta: f64,
    /// Gradient norm cap used by the annealed warm start.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
}

fn default_clip() -> f64 {
    f64::INFINITY
}

impl ContinuousTarget {
    pub fn new(kind: ContinuousKind, beta: f64) -> Result<Self> {
        let t = Self {
            kind,
            beta,
            grad_clip: f64::INFINITY,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn with_grad_clip(mut self, clip: f64) -> Result<Self> {
        self.grad_clip = clip;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return bad(format!("beta must be finite and nonnegative, got {}", self.beta));
        }
        if !(self.grad_clip > 0.0) {
            return bad(format!("grad_clip must be positive, got {}", self.grad_clip));
        }
        match &self.kind {
            ContinuousKind::ManyWell { dim, delta } => {
                if *dim == 0 || !(*delta > 0.0) {
                    return bad("many-well needs dim >= 1 and delta > 0".into());
                }
            }
            ContinuousKind::Funnel { dim, sigma } => {
                if *dim < 2 || !(*sigma > 0.0) {
                    return bad("funnel needs dim >= 2 and sigma > 0".into());
                }
            }
            ContinuousKind::Gmm { centers, std } => {
                check_centers(centers)?;
                if !(*std > 0.0) {
                    return bad("mixture std must be positive".into());
                }
            }
            ContinuousKind::Mos { centers } => check_centers(centers)?,
            ContinuousKind::Dw4 { tau, .. } => {
                if !(*tau > 0.0) {
                    return bad("dw4 temperature must be positive".into());
                }
            }
            ContinuousKind::Lj {
                particles, r_m, tau, ..
            } => {
                if *particles < 2 || !(*r_m > 0.0) || !(*tau > 0.0) {
                    return bad("lj needs >= 2 particles, r_m > 0 and tau > 0".into());
                }
            }
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            ContinuousKind::ManyWell { dim, .. } | ContinuousKind::Funnel { dim, .. } => *dim,
            ContinuousKind::Gmm { centers, .. } | ContinuousKind::Mos { centers } => centers[0].len(),
            ContinuousKind::Dw4 { .. } => 8,
            ContinuousKind::Lj { particles, .. } => 3 * particles,
        }
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "state of length {} for a {}-dimensional target",
                x.len(),
                self.dim()
            )));
        }
        Ok(())
    }

    /// Energy `V(x)`. Lennard-Jones with coincident particles returns `+inf`.
    pub fn potential(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        Ok(self.eval(x, None))
    }

    /// Unclipped gradient of [`potential`](Self::potential).
    pub fn raw_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut g = vec![0.0; x.len()];
        self.eval(x, Some(&mut g));
        if g.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("potential gradient is NaN".into()));
        }
        Ok(g)
    }

    /// Gradient rescaled so its Euclidean norm is at most `grad_clip`.
    pub fn potential_grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = self.raw_grad(x)?;
        clip_norm(&mut g, self.grad_clip);
        Ok(g)
    }

    /// Unnormalized log density `-beta V(x)`.
    pub fn log_target(&self, x: &[f64]) -> Result<f64> {
        let v = self.potential(x)?;
        Ok(if self.beta == 0.0 { 0.0 } else { -self.beta * v })
    }

    fn eval(&self, x: &[f64], grad: Option<&mut Vec<f64>>) -> f64 {
        match &self.kind {
            ContinuousKind::ManyWell { delta, .. } => {
                if let Some(g) = grad {
                    for (gi, &xi) in g.iter_mut().zip(x) {
                        *gi = 4.0 * xi * (xi * xi - delta);
                    }
                }
                x.iter().map(|&xi| (xi * xi - delta).powi(2)).sum()
            }
            ContinuousKind::Funnel { sigma, .. } => {
                let x1 = x[0];
                let rest: f64 = x[1..].iter().map(|v| v * v).sum();
                let k = (x.len() - 1) as f64;
                let e = (-x1).exp();
                if let Some(g) = grad {
                    g[0] = x1 / (sigma * sigma) + 0.5 * k - 0.5 * rest * e;
                    for (gi, &xi) in g[1..].iter_mut().zip(&x[1..]) {
                        *gi = xi * e;
                    }
                }
                x1 * x1 / (2.0 * sigma * sigma) + 0.5 * k * x1 + 0.5 * rest * e
            }
            ContinuousKind::Gmm { centers, std } => {
                let s2 = std * std;
                let logs: Vec<f64> = centers.iter().map(|mu| -sq_dist(x, mu) / (2.0 * s2)).collect();
                let (lse, w) = softmax(&logs);
                if let Some(g) = grad {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    for (mu, wi) in centers.iter().zip(&w) {
                        for ((gj, &xj), &mj) in g.iter_mut().zip(x).zip(mu) {
                            *gj += wi * (xj - mj) / s2;
                        }
                    }
                }
                (centers.len() as f64).ln() - lse
            }
            ContinuousKind::Mos { centers } => {
                let p = 0.5 * (MOS_DOF + x.len() as f64);
                let logs: Vec<f64> = centers
                    .iter()
                    .map(|mu| -p * (sq_dist(x, mu) / MOS_DOF).ln_1p())
                    .collect();
                let (lse, w) = softmax(&logs);
                if let Some(g) = grad {
                    g.iter_mut().for_each(|v| *v = 0.0);
                    for (mu, wi) in centers.iter().zip(&w) {
                        let scale = wi * p * 2.0 / (MOS_DOF + sq_dist(x, mu));
                        for ((gj, &xj), &mj) in g.iter_mut().zip(x).zip(mu) {
                            *gj += scale * (xj - mj);
                        }
                    }
                }
                (centers.len() as f64).ln() - lse
            }
            ContinuousKind::Dw4 { a, b, c, d0, tau } => pair_energy(x, 2, grad, |r| {
                let s = r - d0;
                let e = (a * s + b * s * s + c * s.powi(4)) / (2.0 * tau);
                let de = (a + 2.0 * b * s + 4.0 * c * s.powi(3)) / (2.0 * tau);
                (e, de)
            }),
            ContinuousKind::Lj {
                particles,
                r_m,
                epsilon,
                c,
                tau,
            } => {
                let n = *particles;
                let scale = epsilon / (2.0 * tau);
                let mut grad = grad;
                let pair = pair_energy(x, 3, grad.as_deref_mut(), |r| {
                    if r == 0.0 {
                        return (f64::INFINITY, 0.0);
                    }
                    let s6 = (r_m / r).powi(6);
                    let s12 = s6 * s6;
                    (scale * (s12 - 2.0 * s6), scale * (-12.0 * s12 + 12.0 * s6) / r)
                });
                let mut com = [0.0; 3];
                for p in x.chunks(3) {
                    for k in 0..3 {
                        com[k] += p[k] / n as f64;
                    }
                }
                let mut harmonic = 0.0;
                for (i, p) in x.chunks(3).enumerate() {
                    for k in 0..3 {
                        let dk = p[k] - com[k];
                        harmonic += dk * dk;
                        if let Some(g) = grad.as_deref_mut() {
                            g[3 * i + k] += c * dk;
                        }
                    }
                }
                pair + 0.5 * c * harmonic
            }
        }
    }

    /// Exact draws, available for the mixture targets.
    pub fn sample_exact<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        match &self.kind {
            ContinuousKind::Gmm { centers, std } if self.beta == 1.0 => Ok((0..n)
                .map(|_| {
                    let mu = &centers[rng.random_range(0..centers.len())];
                    mu.iter()
                        .map(|m| m + std * rng.sample::<f64, _>(StandardNormal))
                        .collect()
                })
                .collect()),
            ContinuousKind::Mos { centers } if self.beta == 1.0 => {
                let chi = ChiSquared::new(MOS_DOF).expect("positive degrees of freedom");
                Ok((0..n)
                    .map(|_| {
                        let mu = &centers[rng.random_range(0..centers.len())];
                        let w: f64 = chi.sample(rng);
                        let s = (MOS_DOF / w).sqrt();
                        mu.iter()
                            .map(|m| m + s * rng.sample::<f64, _>(StandardNormal))
                            .collect()
                    })
                    .collect())
            }
            _ => Err(Error::Domain(
                "exact sampling is only available for mixtures at beta = 1".into(),
            )),
        }
    }

    /// Mixture centres, if the target has any.
    pub fn centers(&self) -> Option<&[Vec<f64>]> {
        match &self.kind {
            ContinuousKind::Gmm { centers, .. } | ContinuousKind::Mos { centers } => Some(centers),
            _ => None,
        }
    }
}

fn check_centers(centers: &[Vec<f64>]) -> Result<()> {
    let d = centers.first().map(Vec::len).unwrap_or(0);
    if d == 0 || centers.iter().any(|c| c.len() != d || c.iter().any(|v| !v.is_finite())) {
        return Err(Error::Config(
            "mixture centres must be nonempty finite vectors of equal length".into(),
        ));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Log-sum-exp and softmax weights.
fn softmax(logs: &[f64]) -> (f64, Vec<f64>) {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = w.iter().sum();
    (max + total.ln(), w.into_iter().map(|v| v / total).collect())
}

/// Sum of a radial pair energy over particles of dimension `k`. `f` returns the
/// energy and its derivative with respect to the distance.
fn pair_energy(x: &[f64], k: usize, mut grad: Option<&mut Vec<f64>>, f: impl Fn(f64) -> (f64, f64)) -> f64 {
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let n = x.len() / k;
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let (pi, pj) = (&x[i * k..(i + 1) * k], &x[j * k..(j + 1) * k]);
            let r = sq_dist(pi, pj).sqrt();
            let (e, de) = f(r);
            total += e;
            if let Some(g) = grad.as_deref_mut() {
                if r > 0.0 {
                    for m in 0..k {
                        let u = de * (pi[m] - pj[m]) / r;
                        g[i * k + m] += u;
                        g[j * k + m] -= u;
                    }
                }
            }
        }
    }
    total
}

/// Rescales `g` in place so that its norm is at most `max`.
pub fn clip_norm(g: &mut [f64], max: f64) {
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm > max && norm.is_finite() {
        let s = max / norm;
        g.iter_mut().for_each(|v| *v *= s);
    } else if !norm.is_finite() && max.is_finite() {
        // Overflowed norm: rescale by the largest entry first.
        let big = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if big.is_finite() && big > 0.0 {
            g.iter_mut().for_each(|v| *v /= big);
            clip_norm(g, max);
        }
    }
}
